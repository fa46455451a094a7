#include "llmseg/io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "llmseg/error.hpp"

namespace llmseg {

namespace {

constexpr std::string_view kGridMagic = "FGRD";
constexpr std::uint32_t kGridVersion = 1;

std::uint64_t require_uint(const json& obj, const char* key) {
    if (!obj.contains(key) || !obj[key].is_number_integer() || obj[key].get<std::int64_t>() < 0) {
        fail(ErrorCode::ParseError, std::string("mask field '") + key + "' must be a nonnegative integer");
    }
    return obj[key].get<std::uint64_t>();
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

json parse_json(std::string_view text, std::string_view what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseError,
             std::string(what) + ": malformed JSON at byte " + std::to_string(e.byte) + " (" + e.what() + ")");
    }
}

json mask_to_json(const BinaryMask& mask) {
    return json{{"h", mask.height()}, {"w", mask.width()}, {"counts", rle_encode(mask).counts}};
}

BinaryMask mask_from_json(const json& value) {
    if (!value.is_object()) fail(ErrorCode::ParseError, "mask must be a JSON object");
    const std::uint64_t h = require_uint(value, "h");
    const std::uint64_t w = require_uint(value, "w");
    if (!value.contains("counts") || !value["counts"].is_array()) {
        fail(ErrorCode::ParseError, "mask field 'counts' must be an array");
    }
    RleCounts rle;
    rle.counts.reserve(value["counts"].size());
    for (const json& n : value["counts"]) {
        if (!n.is_number_integer() || n.get<std::int64_t>() < 0) {
            fail(ErrorCode::ParseError, "RLE counts must be nonnegative integers");
        }
        rle.counts.push_back(n.get<std::uint64_t>());
    }
    return rle_decode(rle, h, w);
}

void ByteWriter::put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

std::string_view ByteReader::take(std::size_t n) {
    if (bytes_.size() - offset_ < n) {
        fail(ErrorCode::ParseError, "truncated input at byte " + std::to_string(offset_) + " (needed " +
                                        std::to_string(n) + " more bytes)");
    }
    const std::string_view out = bytes_.substr(offset_, n);
    offset_ += n;
    return out;
}

std::uint32_t ByteReader::u32() {
    const std::string_view b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string encode_feature_grid(const FeatureGrid& grid) {
    ByteWriter w;
    w.put_bytes(kGridMagic);
    w.put_u32(kGridVersion);
    w.put_u32(static_cast<std::uint32_t>(grid.grid_h()));
    w.put_u32(static_cast<std::uint32_t>(grid.grid_w()));
    w.put_u32(static_cast<std::uint32_t>(grid.channels()));
    for (float v : grid.values()) w.put_f32(v);
    return w.bytes();
}

FeatureGrid decode_feature_grid(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.take(4) != kGridMagic) fail(ErrorCode::ParseError, "not a feature grid file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kGridVersion) {
        fail(ErrorCode::VersionMismatch, "feature grid version " + std::to_string(version));
    }
    const std::size_t h = r.u32();
    const std::size_t w = r.u32();
    const std::size_t c = r.u32();
    std::vector<float> values(h * w * c);
    for (float& v : values) {
        v = r.f32();
        if (!std::isfinite(v)) fail(ErrorCode::ParseError, "non-finite feature value at byte " + std::to_string(r.offset() - 4));
    }
    if (!r.at_end()) fail(ErrorCode::ParseError, "trailing bytes after feature grid at byte " + std::to_string(r.offset()));
    return FeatureGrid(h, w, c, std::move(values));
}

void save_feature_grid(const FeatureGrid& grid, const std::filesystem::path& path) {
    write_file(path, encode_feature_grid(grid));
}

FeatureGrid load_feature_grid(const std::filesystem::path& path) { return decode_feature_grid(read_file(path)); }

std::string encode_pgm(const BinaryMask& mask) {
    std::string out = "P5\n" + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + "\n255\n";
    out.reserve(out.size() + mask.area());
    for (std::size_t r = 0; r < mask.height(); ++r) {
        for (std::size_t c = 0; c < mask.width(); ++c) out.push_back(mask.get(r, c) ? '\xFF' : '\0');
    }
    return out;
}

BinaryMask decode_pgm(std::string_view bytes) {
    std::size_t pos = 0;
    const auto token = [&]() {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return std::string(bytes.substr(start, pos - start));
    };
    if (token() != "P5") fail(ErrorCode::ParseError, "not a binary PGM");
    std::size_t w = 0;
    std::size_t h = 0;
    try {
        w = std::stoul(token());
        h = std::stoul(token());
        if (std::stoul(token()) != 255) fail(ErrorCode::ParseError, "PGM maxval must be 255");
    } catch (const std::logic_error&) {
        fail(ErrorCode::ParseError, "malformed PGM header");
    }
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos || bytes.size() - pos != w * h) fail(ErrorCode::ParseError, "PGM pixel data size mismatch");
    BinaryMask mask(h, w);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) mask.set(r, c, bytes[pos + r * w + c] != 0);
    }
    return mask;
}

}  // namespace llmseg
