#include "llmseg/proposals.hpp"

#include <algorithm>
#include <numeric>

#include "llmseg/error.hpp"

namespace llmseg {

namespace {

constexpr int kProposalFileVersion = 1;

void require_fraction(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::InvalidArgument, std::string(what) + " must lie in [0, 1]");
}

ProposalSet with_indices(const ProposalSet& set, const std::vector<std::size_t>& keep) {
    ProposalSet out{set.image_id, set.image_h, set.image_w, {}};
    out.proposals.reserve(keep.size());
    for (std::size_t i : keep) out.proposals.push_back(set.proposals[i]);
    return out;
}

}  // namespace

void ProposalSet::validate() const {
    for (std::size_t k = 0; k < proposals.size(); ++k) {
        const MaskProposal& p = proposals[k];
        if (p.mask.height() != image_h || p.mask.width() != image_w) {
            fail(ErrorCode::DimensionMismatch, "proposal " + std::to_string(k) + " of '" + image_id +
                                                   "' does not match the image size");
        }
        require_fraction(p.predicted_iou, "predicted_iou");
    }
}

ProposalSet filter_by_predicted_iou(const ProposalSet& set, double threshold) {
    require_fraction(threshold, "IoU filter threshold");
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < set.size(); ++k) {
        if (set.proposals[k].predicted_iou >= threshold) keep.push_back(k);
    }
    return with_indices(set, keep);
}

ProposalSet nms(const ProposalSet& set, double iou_threshold) {
    require_fraction(iou_threshold, "NMS threshold");
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return set.proposals[a].predicted_iou > set.proposals[b].predicted_iou;
    });
    std::vector<bool> suppressed(order.size(), false);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (suppressed[i]) continue;
        keep.push_back(order[i]);
        const BinaryMask& kept = set.proposals[order[i]].mask;
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            if (!suppressed[j] && iou(kept, set.proposals[order[j]].mask) > iou_threshold) suppressed[j] = true;
        }
    }
    return with_indices(set, keep);
}

ProposalSet postprocess(const ProposalSet& set, const PostprocessConfig& config) {
    ProposalSet out = nms(filter_by_predicted_iou(set, config.iou_filter), config.nms_threshold);
    if (out.proposals.size() > config.max_proposals) out.proposals.resize(config.max_proposals);
    return out;
}

TargetVector label_targets(const ProposalSet& set, const BinaryMask& gt) {
    if (gt.height() != set.image_h || gt.width() != set.image_w) {
        fail(ErrorCode::DimensionMismatch, "ground truth does not match image '" + set.image_id + "'");
    }
    TargetVector out;
    out.ious.reserve(set.size());
    out.iops.reserve(set.size());
    for (const MaskProposal& p : set.proposals) {
        const OverlapCounts c = overlap_counts(p.mask, gt);
        out.ious.push_back(c.union_ == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(c.union_));
        out.iops.push_back(c.first == 0 ? 0.0 : static_cast<double>(c.intersection) / static_cast<double>(c.first));
    }
    return out;
}

json proposal_set_to_json(const ProposalSet& set) {
    json proposals = json::array();
    for (const MaskProposal& p : set.proposals) {
        json point = nullptr;
        if (p.source_point) point = json::array({p.source_point->first, p.source_point->second});
        proposals.push_back({{"predicted_iou", p.predicted_iou}, {"mask", mask_to_json(p.mask)}, {"point", point}});
    }
    return json{{"version", kProposalFileVersion},
                {"image_id", set.image_id},
                {"h", set.image_h},
                {"w", set.image_w},
                {"proposals", std::move(proposals)}};
}

ProposalSet proposal_set_from_json(const json& value) {
    try {
        if (!value.is_object()) fail(ErrorCode::ParseError, "proposal file must hold a JSON object");
        if (value.contains("version") && value["version"] != kProposalFileVersion) {
            fail(ErrorCode::SchemaVersionMismatch, "proposal file version " + value["version"].dump());
        }
        ProposalSet set;
        set.image_id = value.at("image_id").get<std::string>();
        set.image_h = value.at("h").get<std::size_t>();
        set.image_w = value.at("w").get<std::size_t>();
        for (const json& item : value.at("proposals")) {
            MaskProposal p;
            p.predicted_iou = item.at("predicted_iou").get<double>();
            p.mask = mask_from_json(item.at("mask"));
            if (item.contains("point") && !item["point"].is_null()) {
                const json& pt = item["point"];
                if (!pt.is_array() || pt.size() != 2) fail(ErrorCode::ParseError, "point must be [row, col] or null");
                p.source_point = std::make_pair(pt[0].get<std::uint32_t>(), pt[1].get<std::uint32_t>());
            }
            set.proposals.push_back(std::move(p));
        }
        set.validate();
        return set;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SchemaVersionMismatch || e.code() == ErrorCode::ParseError) throw;
        fail(ErrorCode::ParseError, std::string("invalid proposal payload: ") + e.what());
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("invalid proposal schema: ") + e.what());
    }
}

void save_proposal_set(const ProposalSet& set, const std::filesystem::path& path) {
    write_file(path, proposal_set_to_json(set).dump() + "\n");
}

ProposalSet load_proposal_set(const std::filesystem::path& path) {
    return proposal_set_from_json(parse_json(read_file(path), path.string()));
}

}  // namespace llmseg
