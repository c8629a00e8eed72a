#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "protoad/binary_io.hpp"
#include "protoad/error.hpp"
#include "protoad/finch.hpp"
#include "protoad/kernels.hpp"
#include "protoad/matrix.hpp"

namespace protoad {

/// Free-form key=value annotations carried alongside a bank.
using BankMeta = std::map<std::string, std::string>;

/// K unit-norm prototypes of dimension C. Row k is the k-th kernel of the
/// 1×1 convolution that scores a feature map.
struct PrototypeBank {
    RowMatrix kernels;
    BankMeta meta;

    std::size_t size() const { return kernels.rows; }
    std::size_t dim() const { return kernels.cols; }

    friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;
};

/// Rows whose cosine to an earlier kept row reaches this are dropped.
inline constexpr double kDuplicateCosine = 1.0 - 1e-9;

namespace detail {

inline double exact_cosine(std::span<const float> a, std::span<const float> b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        ab += double(a[c]) * b[c];
        aa += double(a[c]) * a[c];
        bb += double(b[c]) * b[c];
    }
    return ab / std::sqrt(aa * bb);
}

/// Indices of rows to keep: a row goes when some earlier kept row has cosine
/// ≥ kDuplicateCosine with it. Candidates are found with the float kernel
/// (loose screen) and confirmed in double precision.
inline std::vector<std::size_t> unique_rows(const RowMatrix& m, std::size_t workers) {
    constexpr float kScreen = 1.0f - 1e-5f;
    const std::size_t k = m.rows;
    std::vector<std::size_t> keep;
    if (k == 0) return keep;
    std::vector<std::vector<std::uint32_t>> near(k);
    if (k > 1) {
        const kernels::TransposedTiles tiles(m.data, k, m.cols);
        constexpr std::size_t kRowBlock = 64;
        const std::size_t blocks = (k + kRowBlock - 1) / kRowBlock;
        parallel_for(blocks, workers, [&](std::size_t blk, std::size_t) {
            std::vector<float> sims(kRowBlock * kernels::kTile);
            const std::size_t r0 = blk * kRowBlock;
            const std::size_t rows = std::min(kRowBlock, k - r0);
            for (std::size_t t = 0; t * kernels::kTile < r0 + rows; ++t) {
                kernels::tile_product(m.data.data() + r0 * m.cols, rows, m.cols, tiles.tile(t), sims.data());
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < tiles.tile_rows(t); ++c) {
                        const std::size_t j = t * kernels::kTile + c;
                        if (j < r0 + r && sims[r * kernels::kTile + c] >= kScreen)
                            near[r0 + r].push_back(static_cast<std::uint32_t>(j));
                    }
            }
        });
    }
    std::vector<std::uint8_t> kept(k, 0);
    for (std::size_t i = 0; i < k; ++i) {
        bool dup = false;
        for (auto j : near[i])
            if (kept[j] && exact_cosine(m.row(i), m.row(j)) >= kDuplicateCosine) {
                dup = true;
                break;
            }
        if (!dup) {
            kept[i] = 1;
            keep.push_back(i);
        }
    }
    return keep;
}

}  // namespace detail

/// Prototypes from a partition of unit-norm features: per cluster the
/// L2-renormalized mean (the first member when the mean vanishes), with
/// numerically identical rows collapsed. Records "prototypes_before_dedup"
/// in meta.
inline PrototypeBank build_bank(const RowsView& features, const Partition& part, BankMeta meta = {},
                                std::size_t workers = 1) {
    if (part.labels.size() != features.rows)
        throw DimensionError("partition has " + std::to_string(part.labels.size()) +
                             " labels for " + std::to_string(features.rows) + " features");
    const Partition fresh = make_partition(features, Labels{part.labels, part.num_clusters});
    const auto keep = detail::unique_rows(fresh.means, workers);

    PrototypeBank bank;
    bank.kernels = RowMatrix(keep.size(), features.cols);
    for (std::size_t r = 0; r < keep.size(); ++r) {
        const auto src = fresh.means.row(keep[r]);
        std::copy(src.begin(), src.end(), bank.kernels.row(r).begin());
    }
    std::size_t degenerate = 0;
    for (auto d : fresh.degenerate) degenerate += d;
    meta["prototypes_before_dedup"] = std::to_string(fresh.num_clusters);
    meta["degenerate_clusters"] = std::to_string(degenerate);
    bank.meta = std::move(meta);
    return bank;
}

// ".ptb" bank files: magic "PROTOBK1", u32 version (1), u32 K, u32 C,
// u32 meta length M, M bytes of key=value lines, then K·C little-endian floats.
inline constexpr std::string_view kBankMagic = "PROTOBK1";
inline constexpr std::uint32_t kBankVersion = 1;

inline std::string encode_meta(const BankMeta& meta) {
    std::string s;
    for (const auto& [k, v] : meta) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw InvalidArgument("meta entry '" + k + "' contains '=' in key or a newline");
        s += k + "=" + v + "\n";
    }
    return s;
}

inline BankMeta decode_meta(std::string_view text, std::size_t offset) {
    BankMeta meta;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(pos, end - pos);
        if (!line.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string_view::npos)
                throw FormatError("meta line without '='", offset + pos);
            meta.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
        }
        pos = end + 1;
    }
    return meta;
}

inline std::vector<std::uint8_t> encode_bank(const PrototypeBank& b) {
    const std::string meta = encode_meta(b.meta);
    io::Writer w;
    w.bytes(kBankMagic);
    w.u32(kBankVersion);
    w.u32(static_cast<std::uint32_t>(b.size()));
    w.u32(static_cast<std::uint32_t>(b.dim()));
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.bytes(meta);
    w.f32(b.kernels.data);
    return w.buffer();
}

inline PrototypeBank decode_bank(std::span<const std::uint8_t> bytes) {
    io::Reader r(bytes);
    if (r.bytes(kBankMagic.size(), "magic") != kBankMagic) throw FormatError("bad bank magic", 0);
    const std::size_t version_at = r.offset();
    if (const auto v = r.u32("version"); v != kBankVersion)
        throw UnsupportedVersion("unsupported bank version " + std::to_string(v), version_at);
    const std::size_t k_at = r.offset();
    const std::uint32_t k = r.u32("prototype count");
    const std::uint32_t c = r.u32("dimension");
    if (k == 0 || c == 0) throw FormatError("bank dimensions must be positive", k_at);
    const std::uint32_t m = r.u32("meta length");
    const std::size_t meta_at = r.offset();
    PrototypeBank b;
    b.meta = decode_meta(r.bytes(m, "meta"), meta_at);
    const std::uint64_t payload = std::uint64_t(k) * c * 4;
    if (payload > r.remaining())
        throw TruncationError("kernel payload declares " + std::to_string(payload) +
                                  " bytes, file has " + std::to_string(r.remaining()),
                              r.offset());
    b.kernels = RowMatrix(k, c);
    r.f32(b.kernels.data, "kernels");
    if (r.remaining() != 0) throw FormatError("trailing bytes after kernel payload", r.offset());
    return b;
}

inline void save_bank(const PrototypeBank& b, const std::filesystem::path& path) {
    if (b.size() == 0) throw InvalidArgument("cannot save an empty bank");
    io::write_file(path, encode_bank(b));
}

inline PrototypeBank load_bank(const std::filesystem::path& path) {
    try {
        return decode_bank(io::read_file(path));
    } catch (const TruncationError& e) {
        throw TruncationError(path.string() + ": " + e.message(), e.offset());
    } catch (const UnsupportedVersion& e) {
        throw UnsupportedVersion(path.string() + ": " + e.message(), e.offset());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.message(), e.offset());
    }
}

}  // namespace protoad
