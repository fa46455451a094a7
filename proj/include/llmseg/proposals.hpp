#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "llmseg/io.hpp"
#include "llmseg/mask.hpp"

namespace llmseg {

struct MaskProposal {
    BinaryMask mask;
    double predicted_iou = 0.0;
    /// (row, col) of the point prompt that produced the mask, when known.
    std::optional<std::pair<std::uint32_t, std::uint32_t>> source_point;

    friend bool operator==(const MaskProposal&, const MaskProposal&) = default;
};

struct ProposalSet {
    std::string image_id;
    std::size_t image_h = 0;
    std::size_t image_w = 0;
    std::vector<MaskProposal> proposals;

    std::size_t size() const noexcept { return proposals.size(); }
    /// Throws DimensionMismatch / InvalidArgument when a proposal breaks the set invariants.
    void validate() const;

    friend bool operator==(const ProposalSet&, const ProposalSet&) = default;
};

/// Ground-truth IoU (vector I) and IoP (g_k) per proposal.
struct TargetVector {
    std::vector<double> ious;
    std::vector<double> iops;

    friend bool operator==(const TargetVector&, const TargetVector&) = default;
};

struct PostprocessConfig {
    double iou_filter = 0.85;
    double nms_threshold = 0.7;
    std::size_t max_proposals = 64;
};

ProposalSet filter_by_predicted_iou(const ProposalSet& set, double threshold);

/// Greedy mask-IoU NMS. Output is in descending score order (ties by lower
/// original index) and no kept pair overlaps above the threshold.
ProposalSet nms(const ProposalSet& set, double iou_threshold);

/// filter → nms → keep the highest-scoring max_proposals.
ProposalSet postprocess(const ProposalSet& set, const PostprocessConfig& config);

TargetVector label_targets(const ProposalSet& set, const BinaryMask& gt);

json proposal_set_to_json(const ProposalSet& set);
ProposalSet proposal_set_from_json(const json& value);
void save_proposal_set(const ProposalSet& set, const std::filesystem::path& path);
/// Malformed files (including RLE payloads that do not cover h×w) raise ParseError.
ProposalSet load_proposal_set(const std::filesystem::path& path);

}  // namespace llmseg
