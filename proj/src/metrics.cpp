#include "llmseg/metrics.hpp"

#include <algorithm>

#include "llmseg/error.hpp"

namespace llmseg {

namespace {

void require_samples(std::span<const EvalSample> samples) {
    if (samples.empty()) fail(ErrorCode::EmptyInput, "metrics need at least one sample");
}

double ratio(std::uint64_t intersection, std::uint64_t union_) {
    return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_);
}

double cumulative(std::span<const EvalSample> samples, std::size_t norm_size) {
    std::uint64_t inter = 0;
    std::uint64_t uni = 0;
    for (const EvalSample& s : samples) {
        OverlapCounts c;
        if (norm_size == 0) {
            c = overlap_counts(s.prediction, s.ground_truth);
        } else {
            c = overlap_counts(resize_nearest(s.prediction, norm_size, norm_size),
                               resize_nearest(s.ground_truth, norm_size, norm_size));
        }
        inter += c.intersection;
        uni += c.union_;
    }
    return ratio(inter, uni);
}

}  // namespace

double giou(std::span<const EvalSample> samples) {
    require_samples(samples);
    double total = 0.0;
    for (const EvalSample& s : samples) total += iou(s.prediction, s.ground_truth);
    return total / static_cast<double>(samples.size());
}

double ciou(std::span<const EvalSample> samples) {
    require_samples(samples);
    return cumulative(samples, 0);
}

double nciou(std::span<const EvalSample> samples, std::size_t norm_size) {
    require_samples(samples);
    if (norm_size == 0) fail(ErrorCode::InvalidSize, "normalization size must be at least 1");
    return cumulative(samples, norm_size);
}

MetricsReport build_report(std::span<const EvalSample> samples, std::size_t norm_size) {
    require_samples(samples);
    MetricsReport report;
    report.norm_size = norm_size;
    report.giou = giou(samples);
    report.ciou = ciou(samples);
    report.nciou = nciou(samples, norm_size);
    report.per_sample.reserve(samples.size());
    for (const EvalSample& s : samples) {
        const OverlapCounts c = overlap_counts(s.prediction, s.ground_truth);
        report.per_sample.push_back({s.image_id, ratio(c.intersection, c.union_), c.intersection, c.union_});
    }
    std::stable_sort(report.per_sample.begin(), report.per_sample.end(),
                     [](const SampleScore& a, const SampleScore& b) { return a.image_id < b.image_id; });
    return report;
}

json report_to_json(const MetricsReport& report) {
    json per_sample = json::array();
    for (const SampleScore& s : report.per_sample) per_sample.push_back({{"image_id", s.image_id}, {"iou", s.iou}});
    return json{{"giou", report.giou},
                {"ciou", report.ciou},
                {"nciou", report.nciou},
                {"norm_size", report.norm_size},
                {"n", report.count()},
                {"per_sample", std::move(per_sample)}};
}

}  // namespace llmseg
