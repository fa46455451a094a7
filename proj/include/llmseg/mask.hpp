#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace llmseg {

/// H×W binary mask, densely packed row-major into 64-bit words. Bits past
/// height*width in the last word are always zero so word-wise popcounts are
/// exact pixel counts.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(std::size_t height, std::size_t width, bool value = false);

    /// Builds a mask from text rows; '1', '#' and 'x' are foreground.
    static BinaryMask from_rows(const std::vector<std::string>& rows);
    /// Foreground on rows [r0, r1) × cols [c0, c1), clipped to the canvas.
    static BinaryMask rectangle(std::size_t height, std::size_t width, std::ptrdiff_t r0,
                                std::ptrdiff_t c0, std::ptrdiff_t r1, std::ptrdiff_t c1);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t area() const noexcept { return height_ * width_; }

    bool get(std::size_t row, std::size_t col) const noexcept {
        const std::size_t i = row * width_ + col;
        return (words_[i >> 6] >> (i & 63)) & 1ULL;
    }
    void set(std::size_t row, std::size_t col, bool value) noexcept {
        const std::size_t i = row * width_ + col;
        const std::uint64_t bit = 1ULL << (i & 63);
        if (value) {
            words_[i >> 6] |= bit;
        } else {
            words_[i >> 6] &= ~bit;
        }
    }

    /// Number of foreground pixels.
    std::uint64_t count() const noexcept;
    bool none() const noexcept { return count() == 0; }
    bool same_shape(const BinaryMask& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    std::span<const std::uint64_t> words() const noexcept { return words_; }
    std::span<std::uint64_t> words() noexcept { return words_; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint64_t> words_;
};

/// COCO-uncompressed RLE: column-major runs, the first run counts zeros.
struct RleCounts {
    std::vector<std::uint64_t> counts;
    friend bool operator==(const RleCounts&, const RleCounts&) = default;
};

RleCounts rle_encode(const BinaryMask& mask);
/// Throws LengthMismatch when the runs do not cover exactly h×w pixels.
/// Non-canonical runs (interior zero-length runs) are accepted.
BinaryMask rle_decode(const RleCounts& rle, std::size_t height, std::size_t width);
/// Merges zero-length interior runs so the result equals rle_encode(rle_decode(rle)).
RleCounts rle_canonical(const RleCounts& rle);

struct OverlapCounts {
    std::uint64_t intersection = 0;
    std::uint64_t union_ = 0;
    std::uint64_t first = 0;   // |a|
    std::uint64_t second = 0;  // |b|
};

OverlapCounts overlap_counts(const BinaryMask& a, const BinaryMask& b);

/// |a∩b| / |a∪b|; 1.0 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);
/// |gt∩pred| / |pred|; 0.0 when pred is empty.
double iop(const BinaryMask& pred, const BinaryMask& gt);

BinaryMask union_masks(std::span<const BinaryMask> masks);

BinaryMask resize_nearest(const BinaryMask& mask, std::size_t out_height, std::size_t out_width);

/// Fraction of each grid cell's pixel footprint that is foreground, row-major
/// grid_h×grid_w. Cells and pixels are treated as areas, so a cell straddling
/// a pixel boundary receives a proportional share.
std::vector<double> coverage_weights(const BinaryMask& mask, std::size_t grid_h, std::size_t grid_w);

/// Feature map from an external image encoder; values are row-major
/// (row, col, channel).
class FeatureGrid {
public:
    FeatureGrid() = default;
    FeatureGrid(std::size_t grid_h, std::size_t grid_w, std::size_t channels);
    FeatureGrid(std::size_t grid_h, std::size_t grid_w, std::size_t channels, std::vector<float> values);

    std::size_t grid_h() const noexcept { return grid_h_; }
    std::size_t grid_w() const noexcept { return grid_w_; }
    std::size_t channels() const noexcept { return channels_; }

    std::span<const float> cell(std::size_t row, std::size_t col) const noexcept {
        return {values_.data() + (row * grid_w_ + col) * channels_, channels_};
    }
    std::span<float> cell(std::size_t row, std::size_t col) noexcept {
        return {values_.data() + (row * grid_w_ + col) * channels_, channels_};
    }
    std::span<const float> values() const noexcept { return values_; }

    friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

private:
    std::size_t grid_h_ = 0;
    std::size_t grid_w_ = 0;
    std::size_t channels_ = 0;
    std::vector<float> values_;
};

struct PooledEmbedding {
    std::vector<double> values;
    /// True when the mask covered no grid area and the plain cell mean was used.
    bool degenerate = false;
};

PooledEmbedding mask_pool(const FeatureGrid& features, const BinaryMask& mask);

}  // namespace llmseg
