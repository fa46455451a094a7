#include "llmseg/mask.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "llmseg/error.hpp"

namespace llmseg {

namespace {

std::size_t word_count(std::size_t bits) { return (bits + 63) / 64; }

void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) {
        fail(ErrorCode::DimensionMismatch, std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                                               " vs " + std::to_string(b.height()) + "x" +
                                               std::to_string(b.width()));
    }
}

// Overlap of a pixel interval with grid cells, in units scaled by the grid
// count so every boundary lands on an integer.
struct CellShare {
    std::size_t cell;
    std::uint64_t amount;
};

std::vector<std::vector<CellShare>> axis_shares(std::size_t pixels, std::size_t cells) {
    std::vector<std::vector<CellShare>> shares(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        const std::uint64_t lo = p * cells;
        const std::uint64_t hi = (p + 1) * cells;
        for (std::size_t c = lo / pixels; c < cells && c * pixels < hi; ++c) {
            const std::uint64_t cell_lo = c * pixels;
            const std::uint64_t cell_hi = (c + 1) * pixels;
            const std::uint64_t a = std::max(lo, cell_lo);
            const std::uint64_t b = std::min(hi, cell_hi);
            if (b > a) shares[p].push_back({c, b - a});
        }
    }
    return shares;
}

}  // namespace

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool value)
    : height_(height), width_(width), words_(word_count(height * width), value ? ~0ULL : 0ULL) {
    const std::size_t tail = (height * width) & 63;
    if (value && tail != 0) words_.back() &= (1ULL << tail) - 1;
}

BinaryMask BinaryMask::from_rows(const std::vector<std::string>& rows) {
    const std::size_t h = rows.size();
    const std::size_t w = h == 0 ? 0 : rows.front().size();
    BinaryMask mask(h, w);
    for (std::size_t r = 0; r < h; ++r) {
        if (rows[r].size() != w) fail(ErrorCode::DimensionMismatch, "ragged mask rows");
        for (std::size_t c = 0; c < w; ++c) {
            const char ch = rows[r][c];
            mask.set(r, c, ch == '1' || ch == '#' || ch == 'x');
        }
    }
    return mask;
}

BinaryMask BinaryMask::rectangle(std::size_t height, std::size_t width, std::ptrdiff_t r0, std::ptrdiff_t c0,
                                 std::ptrdiff_t r1, std::ptrdiff_t c1) {
    BinaryMask mask(height, width);
    const auto clamp = [](std::ptrdiff_t v, std::size_t hi) {
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(hi)));
    };
    for (std::size_t r = clamp(r0, height); r < clamp(r1, height); ++r) {
        for (std::size_t c = clamp(c0, width); c < clamp(c1, width); ++c) mask.set(r, c, true);
    }
    return mask;
}

std::uint64_t BinaryMask::count() const noexcept {
    std::uint64_t total = 0;
    for (std::uint64_t w : words_) total += static_cast<std::uint64_t>(std::popcount(w));
    return total;
}

RleCounts rle_encode(const BinaryMask& mask) {
    RleCounts rle;
    bool current = false;
    std::uint64_t run = 0;
    for (std::size_t c = 0; c < mask.width(); ++c) {
        for (std::size_t r = 0; r < mask.height(); ++r) {
            const bool v = mask.get(r, c);
            if (v != current) {
                rle.counts.push_back(run);
                run = 0;
                current = v;
            }
            ++run;
        }
    }
    rle.counts.push_back(run);
    return rle;
}

BinaryMask rle_decode(const RleCounts& rle, std::size_t height, std::size_t width) {
    std::uint64_t total = 0;
    for (std::uint64_t n : rle.counts) total += n;
    if (total != static_cast<std::uint64_t>(height) * width) {
        fail(ErrorCode::LengthMismatch, "RLE covers " + std::to_string(total) + " pixels, mask has " +
                                            std::to_string(height * width));
    }
    BinaryMask mask(height, width);
    std::size_t index = 0;
    bool value = false;
    for (std::uint64_t n : rle.counts) {
        if (value) {
            for (std::uint64_t k = 0; k < n; ++k, ++index) mask.set(index % height, index / height, true);
        } else {
            index += n;
        }
        value = !value;
    }
    return mask;
}

RleCounts rle_canonical(const RleCounts& rle) {
    // Alternating runs: a zero-length interior run merges its two neighbours.
    RleCounts out;
    bool value = false;
    bool out_value = true;  // value of the last run in `out`
    for (std::uint64_t n : rle.counts) {
        if (n != 0) {
            if (!out.counts.empty() && out_value == value) {
                out.counts.back() += n;
            } else {
                if (out.counts.empty() && value) out.counts.push_back(0);
                out.counts.push_back(n);
                out_value = value;
            }
        }
        value = !value;
    }
    if (out.counts.empty()) out.counts.push_back(0);
    return out;
}

OverlapCounts overlap_counts(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b);
    OverlapCounts out;
    const auto wa = a.words();
    const auto wb = b.words();
    for (std::size_t i = 0; i < wa.size(); ++i) {
        out.intersection += static_cast<std::uint64_t>(std::popcount(wa[i] & wb[i]));
        out.union_ += static_cast<std::uint64_t>(std::popcount(wa[i] | wb[i]));
        out.first += static_cast<std::uint64_t>(std::popcount(wa[i]));
        out.second += static_cast<std::uint64_t>(std::popcount(wb[i]));
    }
    return out;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    const OverlapCounts c = overlap_counts(a, b);
    if (c.union_ == 0) return 1.0;
    return static_cast<double>(c.intersection) / static_cast<double>(c.union_);
}

double iop(const BinaryMask& pred, const BinaryMask& gt) {
    const OverlapCounts c = overlap_counts(pred, gt);
    if (c.first == 0) return 0.0;
    return static_cast<double>(c.intersection) / static_cast<double>(c.first);
}

BinaryMask union_masks(std::span<const BinaryMask> masks) {
    if (masks.empty()) fail(ErrorCode::EmptyInput, "union of zero masks");
    BinaryMask out = masks.front();
    for (const BinaryMask& m : masks.subspan(1)) {
        require_same_shape(out, m);
        auto dst = out.words();
        const auto src = m.words();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] |= src[i];
    }
    return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, std::size_t out_height, std::size_t out_width) {
    if (out_height == 0 || out_width == 0) fail(ErrorCode::InvalidSize, "resize target must be at least 1x1");
    if (out_height == mask.height() && out_width == mask.width()) return mask;
    if (mask.area() == 0) fail(ErrorCode::InvalidSize, "cannot resize a zero-area mask");
    BinaryMask out(out_height, out_width);
    std::vector<std::size_t> src_col(out_width);
    for (std::size_t c = 0; c < out_width; ++c) src_col[c] = c * mask.width() / out_width;
    for (std::size_t r = 0; r < out_height; ++r) {
        const std::size_t sr = r * mask.height() / out_height;
        for (std::size_t c = 0; c < out_width; ++c) {
            if (mask.get(sr, src_col[c])) out.set(r, c, true);
        }
    }
    return out;
}

std::vector<double> coverage_weights(const BinaryMask& mask, std::size_t grid_h, std::size_t grid_w) {
    if (grid_h == 0 || grid_w == 0) fail(ErrorCode::InvalidSize, "grid must be at least 1x1");
    std::vector<double> weights(grid_h * grid_w, 0.0);
    if (mask.area() == 0) return weights;
    const auto row_shares = axis_shares(mask.height(), grid_h);
    const auto col_shares = axis_shares(mask.width(), grid_w);
    std::vector<std::uint64_t> numer(grid_h * grid_w, 0);
    for (std::size_t r = 0; r < mask.height(); ++r) {
        for (std::size_t c = 0; c < mask.width(); ++c) {
            if (!mask.get(r, c)) continue;
            for (const CellShare& rs : row_shares[r]) {
                for (const CellShare& cs : col_shares[c]) numer[rs.cell * grid_w + cs.cell] += rs.amount * cs.amount;
            }
        }
    }
    // A full cell measures height×width in the scaled units.
    const double cell_area = static_cast<double>(mask.height()) * static_cast<double>(mask.width());
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = static_cast<double>(numer[i]) / cell_area;
    return weights;
}

FeatureGrid::FeatureGrid(std::size_t grid_h, std::size_t grid_w, std::size_t channels)
    : grid_h_(grid_h), grid_w_(grid_w), channels_(channels), values_(grid_h * grid_w * channels, 0.0f) {}

FeatureGrid::FeatureGrid(std::size_t grid_h, std::size_t grid_w, std::size_t channels, std::vector<float> values)
    : grid_h_(grid_h), grid_w_(grid_w), channels_(channels), values_(std::move(values)) {
    if (values_.size() != grid_h * grid_w * channels) {
        fail(ErrorCode::LengthMismatch, "feature grid expects " + std::to_string(grid_h * grid_w * channels) +
                                            " values, got " + std::to_string(values_.size()));
    }
    for (float v : values_) {
        if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "feature grid contains a non-finite value");
    }
}

PooledEmbedding mask_pool(const FeatureGrid& features, const BinaryMask& mask) {
    PooledEmbedding out;
    out.values.assign(features.channels(), 0.0);
    const std::size_t cells = features.grid_h() * features.grid_w();
    if (cells == 0) {
        out.degenerate = true;
        return out;
    }
    const std::vector<double> weights = coverage_weights(mask, features.grid_h(), features.grid_w());
    double total = 0.0;
    for (double w : weights) total += w;
    out.degenerate = total == 0.0;
    for (std::size_t i = 0; i < features.grid_h(); ++i) {
        for (std::size_t j = 0; j < features.grid_w(); ++j) {
            const double w = out.degenerate ? 1.0 : weights[i * features.grid_w() + j];
            if (w == 0.0) continue;
            const auto f = features.cell(i, j);
            for (std::size_t ch = 0; ch < f.size(); ++ch) out.values[ch] += w * static_cast<double>(f[ch]);
        }
    }
    const double norm = out.degenerate ? static_cast<double>(cells) : total;
    for (double& v : out.values) v /= norm;
    return out;
}

}  // namespace llmseg
