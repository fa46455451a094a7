#include <filesystem>
#include <random>

#include "doctest.h"
#include "llmseg/error.hpp"
#include "llmseg/proposals.hpp"
#include "oracles.hpp"

using namespace llmseg;

namespace {

ProposalSet random_set(std::mt19937_64& gen, std::size_t k, std::size_t h = 24, std::size_t w = 24) {
    ProposalSet set{"img", h, w, {}};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < k; ++i) {
        const auto r0 = static_cast<std::ptrdiff_t>(gen() % h), c0 = static_cast<std::ptrdiff_t>(gen() % w);
        MaskProposal p;
        p.mask = BinaryMask::rectangle(h, w, r0, c0, r0 + 1 + gen() % 14, c0 + 1 + gen() % 14);
        // Coarse scores so ties actually occur.
        p.predicted_iou = std::round(u(gen) * 8.0) / 8.0;
        if (gen() % 2) p.source_point = std::make_pair(static_cast<std::uint32_t>(r0), static_cast<std::uint32_t>(c0));
        set.proposals.push_back(std::move(p));
    }
    return set;
}

std::vector<std::size_t> positions(const ProposalSet& original, const ProposalSet& kept) {
    // Proposals are distinct objects in memory only by index, so match by value
    // and consume each original once.
    std::vector<bool> used(original.size(), false);
    std::vector<std::size_t> out;
    for (const MaskProposal& p : kept.proposals) {
        for (std::size_t i = 0; i < original.size(); ++i) {
            if (!used[i] && original.proposals[i] == p) {
                used[i] = true;
                out.push_back(i);
                break;
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("nms examples") {
    ProposalSet set{"x", 4, 4, {}};
    set.proposals.push_back({BinaryMask::rectangle(4, 4, 0, 0, 4, 2), 0.9, std::nullopt});
    set.proposals.push_back({BinaryMask::rectangle(4, 4, 0, 0, 4, 2), 0.8, std::nullopt});
    set.proposals.push_back({BinaryMask::rectangle(4, 4, 0, 2, 4, 4), 0.7, std::nullopt});
    const ProposalSet kept = nms(set, 0.7);
    REQUIRE(kept.size() == 2);
    CHECK(kept.proposals[0].predicted_iou == 0.9);
    CHECK(kept.proposals[1].predicted_iou == 0.7);
    CHECK(nms(ProposalSet{"e", 4, 4, {}}, 0.5).size() == 0);
}

TEST_CASE("nms matches the quadratic greedy oracle") {
    std::mt19937_64 gen(21);
    for (int t = 0; t < 100; ++t) {
        const ProposalSet set = random_set(gen, gen() % 40);
        const double thr = std::uniform_real_distribution<double>(0.0, 1.0)(gen);
        const ProposalSet kept = nms(set, thr);
        CHECK(positions(set, kept) == oracle::greedy_nms(set, thr));
        CHECK(nms(kept, thr) == kept);
        for (std::size_t i = 0; i < kept.size(); ++i)
            for (std::size_t j = i + 1; j < kept.size(); ++j)
                CHECK(iou(kept.proposals[i].mask, kept.proposals[j].mask) <= thr);
    }
}

TEST_CASE("filter and postprocess") {
    std::mt19937_64 gen(22);
    const ProposalSet set = random_set(gen, 30);
    const ProposalSet filtered = filter_by_predicted_iou(set, 0.5);
    for (const auto& p : filtered.proposals) CHECK(p.predicted_iou >= 0.5);
    std::size_t expected = 0;
    for (const auto& p : set.proposals) expected += p.predicted_iou >= 0.5;
    CHECK(filtered.size() == expected);
    CHECK(filter_by_predicted_iou(set, 0.0).size() == set.size());

    const ProposalSet capped = postprocess(set, {0.0, 1.0, 5});
    CHECK(capped.size() == 5);
    for (std::size_t i = 1; i < capped.size(); ++i)
        CHECK(capped.proposals[i - 1].predicted_iou >= capped.proposals[i].predicted_iou);

    try {
        nms(set, 1.5);
        FAIL("expected InvalidArgument");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidArgument);
    }
}

TEST_CASE("label_targets matches dense counting") {
    std::mt19937_64 gen(23);
    for (int t = 0; t < 30; ++t) {
        const ProposalSet set = random_set(gen, 1 + gen() % 10);
        const oracle::Dense gt = oracle::random_dense(gen, 24, 24);
        const TargetVector tv = label_targets(set, oracle::to_mask(gt));
        for (std::size_t k = 0; k < set.size(); ++k) {
            const oracle::Counts c = oracle::count(oracle::from_mask(set.proposals[k].mask), gt);
            const double want_iou = c.uni == 0 ? 1.0 : double(c.inter) / double(c.uni);
            const double want_iop = c.a == 0 ? 0.0 : double(c.inter) / double(c.a);
            CHECK(tv.ious[k] == want_iou);
            CHECK(tv.iops[k] == want_iop);
        }
    }
}

TEST_CASE("proposal file round trip") {
    std::mt19937_64 gen(24);
    const ProposalSet set = random_set(gen, 12, 17, 29);
    const ProposalSet back = proposal_set_from_json(proposal_set_to_json(set));
    CHECK(back == set);

    const auto path = std::filesystem::temp_directory_path() / "llmseg_test_props.json";
    save_proposal_set(set, path);
    CHECK(load_proposal_set(path) == set);
    std::filesystem::remove(path);

    json bumped = proposal_set_to_json(set);
    bumped["version"] = 99;
    try {
        proposal_set_from_json(bumped);
        FAIL("expected SchemaVersionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SchemaVersionMismatch);
    }
    json broken = proposal_set_to_json(set);
    broken["proposals"][0]["mask"]["counts"] = json::array({1, 2});
    CHECK_THROWS_AS(proposal_set_from_json(broken), Error);
}
