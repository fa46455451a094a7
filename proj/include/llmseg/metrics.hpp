#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llmseg/io.hpp"
#include "llmseg/mask.hpp"

namespace llmseg {

inline constexpr std::size_t kDefaultNormSize = 512;

struct EvalSample {
    BinaryMask prediction;
    BinaryMask ground_truth;
    std::string image_id;
};

struct SampleScore {
    std::string image_id;
    double iou = 0.0;
    std::uint64_t intersection = 0;
    std::uint64_t union_ = 0;
};

struct MetricsReport {
    double giou = 0.0;
    double ciou = 0.0;
    double nciou = 0.0;
    std::size_t norm_size = kDefaultNormSize;
    std::vector<SampleScore> per_sample;  // ordered by image_id

    std::size_t count() const noexcept { return per_sample.size(); }
};

/// Mean of per-sample IoUs.
double giou(std::span<const EvalSample> samples);
/// Σ|I| / Σ|U| over the corpus in integer arithmetic; 1.0 when every union is empty.
double ciou(std::span<const EvalSample> samples);
/// cIoU after resizing every prediction/ground-truth pair to norm_size².
double nciou(std::span<const EvalSample> samples, std::size_t norm_size);

MetricsReport build_report(std::span<const EvalSample> samples, std::size_t norm_size = kDefaultNormSize);
json report_to_json(const MetricsReport& report);

}  // namespace llmseg
