#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "llmseg/mask.hpp"

namespace llmseg {

using json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Parses JSON text; syntax errors become ParseError carrying the byte offset.
json parse_json(std::string_view text, std::string_view what);

/// {"h": int, "w": int, "counts": [int, ...]}
json mask_to_json(const BinaryMask& mask);
/// Schema problems raise ParseError; an RLE that does not cover h×w raises
/// LengthMismatch.
BinaryMask mask_from_json(const json& value);

/// Little-endian binary encoder for the FGRD / MSEL / SEGV formats.
class ByteWriter {
public:
    void put_u32(std::uint32_t v);
    void put_f32(float v);
    void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
    const std::string& bytes() const noexcept { return buffer_; }

private:
    std::string buffer_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32();
    float f32();
    std::string_view take(std::size_t n);
    std::size_t offset() const noexcept { return offset_; }
    bool at_end() const noexcept { return offset_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t offset_ = 0;
};

/// FGRD: magic, u32 version=1, u32 grid_h, u32 grid_w, u32 channels, then
/// float32 values row-major (row, col, channel).
std::string encode_feature_grid(const FeatureGrid& grid);
FeatureGrid decode_feature_grid(std::string_view bytes);
void save_feature_grid(const FeatureGrid& grid, const std::filesystem::path& path);
FeatureGrid load_feature_grid(const std::filesystem::path& path);

/// Binary PGM (P5), foreground 255, background 0.
std::string encode_pgm(const BinaryMask& mask);
BinaryMask decode_pgm(std::string_view bytes);

}  // namespace llmseg
