#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protoad/binary_io.hpp"
#include "protoad/error.hpp"

namespace protoad {

/// H×W grid of C-dimensional patch vectors, row-major and channel-minor:
/// element (i, j, c) lives at ((i*W) + j)*C + c, so each patch vector is
/// contiguous.
class FeatureTensor {
public:
    FeatureTensor() = default;

    /// Zero-filled tensor.
    FeatureTensor(std::size_t height, std::size_t width, std::size_t channels)
        : FeatureTensor(height, width, channels,
                        std::vector<float>(checked_size(height, width, channels), 0.0f)) {}

    FeatureTensor(std::size_t height, std::size_t width, std::size_t channels,
                  std::vector<float> data)
        : h_(height), w_(width), c_(channels), data_(std::move(data)) {
        if (data_.size() != checked_size(h_, w_, c_))
            throw InvalidArgument("feature tensor data length " + std::to_string(data_.size()) +
                                  " does not match " + shape_string());
    }

    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t channels() const { return c_; }
    std::size_t cells() const { return h_ * w_; }
    bool empty() const { return data_.empty(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    std::span<const float> cell(std::size_t i, std::size_t j) const {
        return {data_.data() + (i * w_ + j) * c_, c_};
    }
    std::span<float> cell(std::size_t i, std::size_t j) {
        return {data_.data() + (i * w_ + j) * c_, c_};
    }

    float& at(std::size_t i, std::size_t j, std::size_t c) { return data_[(i * w_ + j) * c_ + c]; }
    float at(std::size_t i, std::size_t j, std::size_t c) const {
        return data_[(i * w_ + j) * c_ + c];
    }

    /// Throws InvalidArgument if any value is NaN or infinite.
    void require_finite() const {
        for (std::size_t k = 0; k < data_.size(); ++k)
            if (!std::isfinite(data_[k]))
                throw InvalidArgument("non-finite value at flat index " + std::to_string(k));
    }

    std::string shape_string() const {
        return std::to_string(h_) + "x" + std::to_string(w_) + "x" + std::to_string(c_);
    }

    friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;

private:
    static std::size_t checked_size(std::size_t h, std::size_t w, std::size_t c) {
        if (h == 0 || w == 0 || c == 0)
            throw InvalidArgument("feature tensor dimensions must be positive, got " +
                                  std::to_string(h) + "x" + std::to_string(w) + "x" +
                                  std::to_string(c));
        return h * w * c;
    }

    std::size_t h_ = 0;
    std::size_t w_ = 0;
    std::size_t c_ = 0;
    std::vector<float> data_;
};

struct NormalizeResult {
    FeatureTensor tensor;
    /// Row-major H×W flags, 1 where the input vector norm was below epsilon.
    std::vector<std::uint8_t> zero_mask;
    std::size_t zero_count = 0;
};

/// Divides every patch vector by its L2 norm. Vectors with norm < epsilon are
/// set to zero and flagged in zero_mask.
inline NormalizeResult l2_normalize(const FeatureTensor& t, double epsilon = 1e-12) {
    if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
    NormalizeResult res{t, std::vector<std::uint8_t>(t.cells(), 0), 0};
    const std::size_t c = t.channels();
    auto out = res.tensor.data();
    for (std::size_t k = 0; k < t.cells(); ++k) {
        float* v = out.data() + k * c;
        double sq = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) sq += double(v[ch]) * double(v[ch]);
        const double norm = std::sqrt(sq);
        if (norm < epsilon) {
            std::fill(v, v + c, 0.0f);
            res.zero_mask[k] = 1;
            ++res.zero_count;
            continue;
        }
        for (std::size_t ch = 0; ch < c; ++ch) v[ch] = static_cast<float>(double(v[ch]) / norm);
    }
    return res;
}

namespace detail {

/// Half-pixel-centre source coordinate, clamped to the valid range.
struct Sample {
    std::size_t lo;
    std::size_t hi;
    float frac;
};

inline std::vector<Sample> resample_axis(std::size_t in, std::size_t out) {
    std::vector<Sample> s(out);
    const double scale = double(in) / double(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (double(d) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, double(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        s[d] = {lo, std::min(lo + 1, in - 1), static_cast<float>(src - double(lo))};
    }
    return s;
}

inline float lerp(float a, float b, float t) { return a + (b - a) * t; }

}  // namespace detail

/// Bilinear resize of every channel to out_h×out_w. Source coordinate is
/// (dst + 0.5)·(in/out) − 0.5 clamped to the border; same-size input is
/// returned unchanged.
inline FeatureTensor bilinear_resize(const FeatureTensor& t, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw InvalidArgument("resize target must be positive");
    if (out_h == t.height() && out_w == t.width()) return t;
    const auto ys = detail::resample_axis(t.height(), out_h);
    const auto xs = detail::resample_axis(t.width(), out_w);
    const std::size_t c = t.channels();
    FeatureTensor out(out_h, out_w, c);
    for (std::size_t i = 0; i < out_h; ++i) {
        const auto& y = ys[i];
        for (std::size_t j = 0; j < out_w; ++j) {
            const auto& x = xs[j];
            const float* p00 = t.cell(y.lo, x.lo).data();
            const float* p01 = t.cell(y.lo, x.hi).data();
            const float* p10 = t.cell(y.hi, x.lo).data();
            const float* p11 = t.cell(y.hi, x.hi).data();
            float* dst = out.cell(i, j).data();
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float top = detail::lerp(p00[ch], p01[ch], x.frac);
                const float bottom = detail::lerp(p10[ch], p11[ch], x.frac);
                dst[ch] = detail::lerp(top, bottom, y.frac);
            }
        }
    }
    return out;
}

/// Feature maps of one image from successive backbone stages. The first level
/// fixes the output resolution.
struct LevelSet {
    std::vector<FeatureTensor> levels;
};

/// Resizes every level to the first level's grid and concatenates channels in
/// level order.
inline FeatureTensor aggregate_levels(const LevelSet& ls) {
    if (ls.levels.empty()) throw InvalidArgument("cannot aggregate an empty level set");
    const std::size_t h = ls.levels.front().height();
    const std::size_t w = ls.levels.front().width();
    std::size_t total_c = 0;
    for (const auto& lvl : ls.levels) {
        if (lvl.height() > h || lvl.width() > w)
            throw InvalidArgument("level " + lvl.shape_string() +
                                  " is larger than the first level's grid");
        total_c += lvl.channels();
    }
    if (ls.levels.size() == 1) return ls.levels.front();

    FeatureTensor out(h, w, total_c);
    std::size_t offset = 0;
    for (const auto& lvl : ls.levels) {
        const FeatureTensor resized = bilinear_resize(lvl, h, w);
        const std::size_t c = lvl.channels();
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                std::copy_n(resized.cell(i, j).data(), c, out.cell(i, j).data() + offset);
        offset += c;
    }
    return out;
}

// ".pft" feature tensor files: magic "PROTOFT1", u32 H, W, C, dtype (1 = f32),
// then H·W·C little-endian floats. No padding, no trailing bytes.
inline constexpr std::string_view kTensorMagic = "PROTOFT1";
inline constexpr std::uint32_t kDtypeF32 = 1;

inline std::vector<std::uint8_t> encode_tensor(const FeatureTensor& t) {
    io::Writer w;
    w.bytes(kTensorMagic);
    w.u32(static_cast<std::uint32_t>(t.height()));
    w.u32(static_cast<std::uint32_t>(t.width()));
    w.u32(static_cast<std::uint32_t>(t.channels()));
    w.u32(kDtypeF32);
    w.f32(t.data());
    return w.buffer();
}

inline FeatureTensor decode_tensor(std::span<const std::uint8_t> bytes) {
    io::Reader r(bytes);
    if (r.bytes(kTensorMagic.size(), "magic") != kTensorMagic)
        throw FormatError("bad feature tensor magic", 0);
    std::uint32_t dims[3];
    const char* names[3] = {"height", "width", "channels"};
    for (int k = 0; k < 3; ++k) {
        const std::size_t at = r.offset();
        dims[k] = r.u32(names[k]);
        if (dims[k] == 0) throw FormatError(std::string("zero ") + names[k], at);
    }
    const std::size_t dtype_at = r.offset();
    if (const auto dtype = r.u32("dtype"); dtype != kDtypeF32)
        throw FormatError("unsupported dtype code " + std::to_string(dtype), dtype_at);

    const std::uint64_t count = std::uint64_t(dims[0]) * dims[1] * dims[2];
    if (count * 4 > r.remaining())
        throw TruncationError("payload declares " + std::to_string(count * 4) + " bytes, file has " +
                                  std::to_string(r.remaining()),
                              r.offset());
    std::vector<float> data(count);
    r.f32(data, "payload");
    if (r.remaining() != 0) throw FormatError("trailing bytes after payload", r.offset());
    FeatureTensor t(dims[0], dims[1], dims[2], std::move(data));
    t.require_finite();
    return t;
}

inline void write_tensor(const FeatureTensor& t, const std::filesystem::path& path) {
    if (t.empty()) throw InvalidArgument("cannot write an empty tensor");
    io::write_file(path, encode_tensor(t));
}

inline FeatureTensor read_tensor(const std::filesystem::path& path) {
    try {
        return decode_tensor(io::read_file(path));
    } catch (const TruncationError& e) {
        throw TruncationError(path.string() + ": " + e.message(), e.offset());
    } catch (const UnsupportedVersion& e) {
        throw UnsupportedVersion(path.string() + ": " + e.message(), e.offset());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.message(), e.offset());
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

}  // namespace protoad
