#include <random>

#include "doctest.h"
#include "llmseg/error.hpp"
#include "llmseg/io.hpp"
#include "llmseg/mask.hpp"
#include "oracles.hpp"

using namespace llmseg;

namespace {

ErrorCode code_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an llmseg::Error");
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("packed mask agrees with dense pixels") {
    std::mt19937_64 gen(11);
    for (int i = 0; i < 200; ++i) {
        const std::size_t h = 1 + gen() % 70, w = 1 + gen() % 70;
        const oracle::Dense d = oracle::random_dense(gen, h, w);
        const BinaryMask m = oracle::to_mask(d);
        std::uint64_t expected = 0;
        for (auto p : d.px) expected += p;
        CHECK(m.count() == expected);
        CHECK(oracle::from_mask(m).px == d.px);
    }
}

TEST_CASE("rle examples") {
    const BinaryMask m = BinaryMask::from_rows({"01", "11"});
    // Column-major: (0,0)=0 (1,0)=1 (0,1)=1 (1,1)=1
    CHECK(rle_encode(m).counts == std::vector<std::uint64_t>{1, 3});
    CHECK(rle_encode(BinaryMask(2, 3, true)).counts == std::vector<std::uint64_t>{0, 6});
    CHECK(rle_encode(BinaryMask(2, 3)).counts == std::vector<std::uint64_t>{6});
    CHECK(code_of([] { rle_decode({{1, 2}}, 2, 2); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("rle matches the dense encoder and round-trips") {
    std::mt19937_64 gen(12);
    for (int i = 0; i < 300; ++i) {
        const std::size_t h = 1 + gen() % 60, w = 1 + gen() % 60;
        const oracle::Dense d = oracle::random_dense(gen, h, w);
        const BinaryMask m = oracle::to_mask(d);
        const RleCounts rle = rle_encode(m);
        CHECK(rle.counts == oracle::rle(d));
        CHECK(rle_decode(rle, h, w) == m);
        CHECK(mask_from_json(mask_to_json(m)) == m);
    }
}

TEST_CASE("non-canonical rle decodes and canonicalises") {
    const RleCounts loose{{2, 0, 0, 3, 1}};
    const BinaryMask m = rle_decode(loose, 2, 3);
    CHECK(m.count() == 3);
    CHECK(rle_canonical(loose) == rle_encode(m));
}

TEST_CASE("iou and iop edge cases") {
    const BinaryMask empty(4, 4);
    const BinaryMask full(4, 4, true);
    CHECK(iou(empty, empty) == 1.0);
    CHECK(iou(empty, full) == 0.0);
    CHECK(iop(empty, full) == 0.0);
    CHECK(iop(full, empty) == 0.0);
    const BinaryMask half = BinaryMask::rectangle(4, 4, 0, 0, 2, 4);
    CHECK(iop(half, full) == 1.0);
    CHECK(iop(full, half) == 0.5);
    CHECK(iou(half, full) == 0.5);
    CHECK(code_of([&] { iou(full, BinaryMask(4, 5)); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("overlap counts equal the dense counter") {
    std::mt19937_64 gen(13);
    for (int i = 0; i < 300; ++i) {
        const std::size_t h = 1 + gen() % 90, w = 1 + gen() % 90;
        const oracle::Dense a = oracle::random_dense(gen, h, w), b = oracle::random_dense(gen, h, w);
        const OverlapCounts c = overlap_counts(oracle::to_mask(a), oracle::to_mask(b));
        const oracle::Counts o = oracle::count(a, b);
        CHECK(c.intersection == o.inter);
        CHECK(c.union_ == o.uni);
        CHECK(c.first == o.a);
        CHECK(c.second == o.b);
    }
}

TEST_CASE("union of masks is the pixelwise or") {
    std::mt19937_64 gen(14);
    std::vector<BinaryMask> masks;
    oracle::Dense acc{9, 13, std::vector<std::uint8_t>(9 * 13)};
    for (int i = 0; i < 5; ++i) {
        const oracle::Dense d = oracle::random_dense(gen, 9, 13);
        for (std::size_t p = 0; p < d.px.size(); ++p) acc.px[p] |= d.px[p];
        masks.push_back(oracle::to_mask(d));
    }
    CHECK(union_masks(masks) == oracle::to_mask(acc));
    CHECK(code_of([] { union_masks({}); }) == ErrorCode::EmptyInput);
    const std::vector<BinaryMask> mixed{BinaryMask(2, 2), BinaryMask(2, 3)};
    CHECK(code_of([&] { union_masks(mixed); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("nearest resize follows the floor mapping") {
    std::mt19937_64 gen(15);
    for (int i = 0; i < 100; ++i) {
        const std::size_t h = 1 + gen() % 40, w = 1 + gen() % 40, oh = 1 + gen() % 70, ow = 1 + gen() % 70;
        const oracle::Dense d = oracle::random_dense(gen, h, w);
        CHECK(resize_nearest(oracle::to_mask(d), oh, ow) == oracle::to_mask(oracle::resize(d, oh, ow)));
    }
    const BinaryMask m = BinaryMask::from_rows({"10", "01"});
    CHECK(resize_nearest(m, 2, 2) == m);
    CHECK(resize_nearest(m, 4, 4).count() == 8);
    CHECK(code_of([&] { resize_nearest(m, 0, 3); }) == ErrorCode::InvalidSize);
}

TEST_CASE("coverage weights equal explicit area overlap") {
    std::mt19937_64 gen(16);
    for (int i = 0; i < 60; ++i) {
        const std::size_t h = 1 + gen() % 30, w = 1 + gen() % 30, gh = 1 + gen() % 12, gw = 1 + gen() % 12;
        const oracle::Dense d = oracle::random_dense(gen, h, w);
        const std::vector<double> got = coverage_weights(oracle::to_mask(d), gh, gw);
        const std::vector<double> want = oracle::coverage(d, gh, gw);
        REQUIRE(got.size() == want.size());
        for (std::size_t k = 0; k < got.size(); ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
    const std::vector<double> full = coverage_weights(BinaryMask(64, 64, true), 16, 16);
    for (double v : full) CHECK(v == 1.0);
}

TEST_CASE("mask pooling") {
    FeatureGrid grid(2, 2, 1, {1.0f, 2.0f, 3.0f, 4.0f});
    SUBCASE("full mask is the cell mean") {
        const PooledEmbedding e = mask_pool(grid, BinaryMask(4, 4, true));
        CHECK(e.values[0] == doctest::Approx(2.5));
        CHECK_FALSE(e.degenerate);
    }
    SUBCASE("one quadrant picks its cell") {
        const PooledEmbedding e = mask_pool(grid, BinaryMask::rectangle(4, 4, 2, 2, 4, 4));
        CHECK(e.values[0] == doctest::Approx(4.0));
    }
    SUBCASE("empty mask falls back to the plain mean") {
        const PooledEmbedding e = mask_pool(grid, BinaryMask(4, 4));
        CHECK(e.degenerate);
        CHECK(e.values[0] == doctest::Approx(2.5));
    }
    SUBCASE("weighted mean matches the coverage oracle") {
        std::mt19937_64 gen(17);
        std::normal_distribution<float> n;
        std::vector<float> values(5 * 7 * 3);
        for (float& v : values) v = n(gen);
        FeatureGrid g(5, 7, 3, values);
        const oracle::Dense d = oracle::random_dense(gen, 23, 31);
        const std::vector<double> w = oracle::coverage(d, 5, 7);
        double total = 0.0;
        std::vector<double> expect(3, 0.0);
        for (std::size_t i = 0; i < 35; ++i) {
            total += w[i];
            for (std::size_t c = 0; c < 3; ++c) expect[c] += w[i] * values[i * 3 + c];
        }
        const PooledEmbedding e = mask_pool(g, oracle::to_mask(d));
        if (total > 0) {
            for (std::size_t c = 0; c < 3; ++c) CHECK(e.values[c] == doctest::Approx(expect[c] / total).epsilon(1e-9));
        }
    }
}

TEST_CASE("pgm codec") {
    const std::string bytes = encode_pgm(BinaryMask(2, 2, true));
    CHECK(bytes == std::string("P5\n2 2\n255\n") + std::string(4, '\xff'));
    const BinaryMask l = BinaryMask::from_rows({"100", "100", "111"});
    const std::string lb = encode_pgm(l);
    CHECK(std::count(lb.end() - 9, lb.end(), '\xff') == 5);
    CHECK(decode_pgm(lb) == l);
}

TEST_CASE("feature grid codec round-trips") {
    std::vector<float> v(3 * 2 * 5);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i) * 0.37f - 3.0f;
    const FeatureGrid g(3, 2, 5, v);
    CHECK(decode_feature_grid(encode_feature_grid(g)) == g);
    std::string truncated = encode_feature_grid(g);
    truncated.pop_back();
    CHECK(code_of([&] { decode_feature_grid(truncated); }) == ErrorCode::ParseError);
}
