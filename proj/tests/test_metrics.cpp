#include <algorithm>
#include <random>

#include "doctest.h"
#include "llmseg/error.hpp"
#include "llmseg/metrics.hpp"
#include "oracles.hpp"

using namespace llmseg;

namespace {

EvalSample sample_of(const oracle::Dense& pred, const oracle::Dense& gt, std::string id) {
    return {oracle::to_mask(pred), oracle::to_mask(gt), std::move(id)};
}

// Prediction with exactly `inter` pixels inside a ground truth of `uni` pixels.
EvalSample counted(std::size_t inter, std::size_t uni, std::string id) {
    oracle::Dense gt{1, uni, std::vector<std::uint8_t>(uni, 1)};
    oracle::Dense pred{1, uni, std::vector<std::uint8_t>(uni, 0)};
    for (std::size_t i = 0; i < inter; ++i) pred.px[i] = 1;
    return sample_of(pred, gt, std::move(id));
}

std::vector<EvalSample> random_corpus(std::mt19937_64& gen, std::size_t n, bool mixed_sizes) {
    std::vector<EvalSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t h = mixed_sizes ? 3 + gen() % 20 : 16, w = mixed_sizes ? 3 + gen() % 20 : 16;
        out.push_back(sample_of(oracle::random_dense(gen, h, w), oracle::random_dense(gen, h, w),
                                "img" + std::to_string(1000 - i)));
    }
    return out;
}

double ciou_oracle(const std::vector<EvalSample>& samples, std::size_t norm = 0) {
    std::uint64_t inter = 0, uni = 0;
    for (const EvalSample& s : samples) {
        oracle::Dense p = oracle::from_mask(s.prediction), g = oracle::from_mask(s.ground_truth);
        if (norm > 0) {
            p = oracle::resize(p, norm, norm);
            g = oracle::resize(g, norm, norm);
        }
        const oracle::Counts c = oracle::count(p, g);
        inter += c.inter;
        uni += c.uni;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("giou") {
    std::vector<EvalSample> one{counted(1, 2, "a")};
    CHECK(giou(one) == 0.5);
    std::vector<EvalSample> two{counted(1, 2, "a"), counted(9, 10, "b")};
    CHECK(giou(two) == doctest::Approx(0.7));
    std::mt19937_64 gen(51);
    const oracle::Dense d = oracle::random_dense(gen, 5, 5);
    std::vector<EvalSample> perfect{sample_of(d, d, "p"), sample_of(d, d, "q")};
    CHECK(giou(perfect) == 1.0);
    try {
        giou(std::vector<EvalSample>{});
        FAIL("expected EmptyInput");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyInput);
    }
}

TEST_CASE("ciou") {
    std::vector<EvalSample> one{counted(3, 7, "a")};
    CHECK(ciou(one) == 3.0 / 7.0);
    std::vector<EvalSample> two{counted(10, 20, "a"), counted(90, 100, "b")};
    CHECK(ciou(two) == doctest::Approx(100.0 / 120.0));
    CHECK(giou(two) == doctest::Approx(0.7));
    const oracle::Dense empty{4, 4, std::vector<std::uint8_t>(16, 0)};
    std::vector<EvalSample> blanks{sample_of(empty, empty, "a"), sample_of(empty, empty, "b")};
    CHECK(ciou(blanks) == 1.0);
    CHECK_THROWS_AS(ciou(std::vector<EvalSample>{}), Error);
}

TEST_CASE("nciou") {
    std::mt19937_64 gen(52);
    const std::vector<EvalSample> square = random_corpus(gen, 20, false);
    CHECK(nciou(square, 16) == ciou(square));

    const std::vector<EvalSample> single{sample_of(oracle::random_dense(gen, 4, 4), oracle::random_dense(gen, 4, 4), "x")};
    CHECK(nciou(single, 8) == doctest::Approx(ciou_oracle(single, 8)));

    std::vector<EvalSample> mixed{sample_of(oracle::random_dense(gen, 4, 4), oracle::random_dense(gen, 4, 4), "s"),
                                  sample_of(oracle::random_dense(gen, 8, 8), oracle::random_dense(gen, 8, 8), "l")};
    CHECK(nciou(mixed, 8) == ciou_oracle(mixed, 8));

    const std::vector<EvalSample> varied = random_corpus(gen, 30, true);
    for (std::size_t norm : {1u, 7u, 32u}) CHECK(nciou(varied, norm) == ciou_oracle(varied, norm));
    try {
        nciou(varied, 0);
        FAIL("expected InvalidSize");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidSize);
    }
}

TEST_CASE("metric properties on random corpora") {
    std::mt19937_64 gen(53);
    for (int t = 0; t < 20; ++t) {
        std::vector<EvalSample> corpus = random_corpus(gen, 1 + gen() % 15, true);
        double lo = 1.0, hi = 0.0, lo_n = 1.0, hi_n = 0.0;
        for (const EvalSample& s : corpus) {
            const double v = oracle::mask_iou(s.prediction, s.ground_truth);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            const std::vector<EvalSample> one{s};
            const double vn = ciou_oracle(one, 24);
            lo_n = std::min(lo_n, vn);
            hi_n = std::max(hi_n, vn);
        }
        const double c = ciou(corpus), n = nciou(corpus, 24), g = giou(corpus);
        CHECK(c == ciou_oracle(corpus));
        CHECK(c >= lo - 1e-15);
        CHECK(c <= hi + 1e-15);
        CHECK(n >= lo_n - 1e-15);
        CHECK(n <= hi_n + 1e-15);
        std::shuffle(corpus.begin(), corpus.end(), gen);
        CHECK(ciou(corpus) == c);
        CHECK(nciou(corpus, 24) == n);
        CHECK(giou(corpus) == doctest::Approx(g).epsilon(1e-14));
    }
}

TEST_CASE("single sample at the normalisation size gives equal metrics") {
    std::mt19937_64 gen(54);
    const std::vector<EvalSample> one{sample_of(oracle::random_dense(gen, 12, 12), oracle::random_dense(gen, 12, 12), "z")};
    const MetricsReport r = build_report(one, 12);
    CHECK(r.giou == r.ciou);
    CHECK(r.ciou == r.nciou);
}

TEST_CASE("report") {
    std::mt19937_64 gen(55);
    const oracle::Dense d = oracle::random_dense(gen, 6, 6);
    const MetricsReport perfect = build_report(std::vector<EvalSample>{sample_of(d, d, "only")}, 8);
    CHECK(perfect.giou == 1.0);
    CHECK(perfect.ciou == 1.0);
    CHECK(perfect.nciou == 1.0);

    const std::vector<EvalSample> corpus = random_corpus(gen, 50, true);
    const MetricsReport r = build_report(corpus, 20);
    CHECK(r.count() == 50);
    CHECK(r.norm_size == 20);
    CHECK(r.ciou == ciou_oracle(corpus));
    CHECK(r.nciou == ciou_oracle(corpus, 20));
    double sum = 0.0;
    for (const EvalSample& s : corpus) sum += oracle::mask_iou(s.prediction, s.ground_truth);
    CHECK(r.giou == doctest::Approx(sum / 50).epsilon(1e-14));
    CHECK(std::is_sorted(r.per_sample.begin(), r.per_sample.end(),
                         [](const SampleScore& a, const SampleScore& b) { return a.image_id < b.image_id; }));
    for (const SampleScore& s : r.per_sample) {
        const auto it = std::find_if(corpus.begin(), corpus.end(), [&](const EvalSample& e) { return e.image_id == s.image_id; });
        REQUIRE(it != corpus.end());
        CHECK(s.iou == oracle::mask_iou(it->prediction, it->ground_truth));
    }

    const json j = report_to_json(r);
    CHECK(j.at("n") == 50);
    CHECK(j.at("norm_size") == 20);
    CHECK(j.at("giou").get<double>() == r.giou);
    CHECK(j.at("per_sample").size() == 50);
    CHECK(j.at("per_sample")[0].at("image_id") == r.per_sample[0].image_id);
    CHECK_THROWS_AS(build_report(std::vector<EvalSample>{}), Error);
}
