#pragma once

// 8-bit grayscale heatmap export (PNG via zlib, binary PGM fallback).

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoad/binary_io.hpp"
#include "protoad/error.hpp"
#include "protoad/grid.hpp"

namespace protoad {

/// Gray level round(255·s/2) for anomaly scores s ∈ [0, 2].
inline Grid<std::uint8_t> heatmap_levels(const ScalarMap& scores) {
    Grid<std::uint8_t> out(scores.height, scores.width);
    for (std::size_t k = 0; k < scores.size(); ++k) {
        const double v = std::clamp(double(scores.values[k]), 0.0, 2.0);
        out.values[k] = static_cast<std::uint8_t>(std::lround(255.0 * v / 2.0));
    }
    return out;
}

inline void write_pgm(const Grid<std::uint8_t>& img, const std::filesystem::path& path) {
    const std::string header =
        "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), img.values.begin(), img.values.end());
    io::write_file(path, bytes);
}

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& body) {
    put_be32(out, static_cast<std::uint32_t>(body.size()));
    const auto start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), body.begin(), body.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Grid<std::uint8_t>& img) {
    std::vector<std::uint8_t> raw;
    raw.reserve(img.height * (img.width + 1));
    for (std::size_t i = 0; i < img.height; ++i) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), img.values.begin() + static_cast<std::ptrdiff_t>(i * img.width),
                   img.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * img.width));
    }
    uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_len);
    if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("zlib compression failed");
    packed.resize(packed_len);

    std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
    detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // 8-bit grayscale, no interlace
    detail::png_chunk(png, "IHDR", ihdr);
    detail::png_chunk(png, "IDAT", packed);
    detail::png_chunk(png, "IEND", {});
    return png;
}

inline void write_png(const Grid<std::uint8_t>& img, const std::filesystem::path& path) {
    io::write_file(path, encode_png(img));
}

}  // namespace protoad
