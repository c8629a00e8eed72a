#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "protoad/error.hpp"
#include "protoad/grid.hpp"
#include "protoad/kernels.hpp"
#include "protoad/prototype.hpp"
#include "protoad/tensor.hpp"

namespace protoad {

struct PostprocessConfig {
    std::size_t out_height = 224;
    std::size_t out_width = 224;
    double sigma = 4.0;

    /// Gaussian support is [-radius, radius], radius = ceil(3σ).
    std::size_t radius() const { return static_cast<std::size_t>(std::ceil(3.0 * sigma)); }

    void validate(std::size_t grid_h, std::size_t grid_w) const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("gaussian sigma must be positive");
        if (out_height < grid_h || out_width < grid_w)
            throw InvalidArgument("output size " + std::to_string(out_height) + "x" +
                                  std::to_string(out_width) + " is smaller than the feature grid");
    }
};

/// Anomaly scores of one image.
struct ScoreMap {
    /// Upsampled, smoothed localization map in [0, 2].
    ScalarMap pixels;
    /// Patch-grid anomaly map, s = 1 − max_k cos(x, m_k).
    ScalarMap patch;
    /// Max of `patch`.
    float image_score = 0.0f;
    /// Cells whose feature vector had zero norm (scored as 1).
    std::size_t zero_cells = 0;
};

/// out(i, j, k) = x_ij · m_k as one (H·W)×C by C×K product. Features must be
/// unit-norm or zero cells.
inline FeatureTensor similarity_tensor(const FeatureTensor& features, const PrototypeBank& bank,
                                       std::size_t workers = 1) {
    if (features.channels() != bank.dim())
        throw DimensionError("feature channels " + std::to_string(features.channels()) +
                             " do not match bank dimension " + std::to_string(bank.dim()));
    if (bank.size() == 0) throw InvalidArgument("empty prototype bank");
    const kernels::TransposedTiles tiles(bank.kernels.data, bank.size(), bank.dim());
    FeatureTensor out(features.height(), features.width(), bank.size());
    kernels::similarity_matrix(features.data(), features.cells(), tiles, out.data(), workers);
    return out;
}

/// Per-cell maximum over the K similarity channels.
inline ScalarMap channel_max_pool(const FeatureTensor& sim) {
    ScalarMap out(sim.height(), sim.width());
    for (std::size_t i = 0; i < sim.height(); ++i)
        for (std::size_t j = 0; j < sim.width(); ++j) {
            const auto v = sim.cell(i, j);
            out.at(i, j) = *std::max_element(v.begin(), v.end());
        }
    return out;
}

/// 1 − normal score, clamped to [0, 2] against rounding past ±1.
inline ScalarMap anomaly_map(const ScalarMap& normal) {
    ScalarMap out = normal;
    for (auto& v : out.values) v = std::clamp(1.0f - v, 0.0f, 2.0f);
    return out;
}

namespace detail {

/// Half-sample symmetric reflection (… c b a | a b c … ) of an index into [0, n).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    const auto period = static_cast<std::ptrdiff_t>(2 * n);
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    return m < static_cast<std::ptrdiff_t>(n) ? static_cast<std::size_t>(m)
                                              : static_cast<std::size_t>(period - 1 - m);
}

inline std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
    std::vector<double> g(2 * radius + 1);
    double sum = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double x = double(k) - double(radius);
        g[k] = std::exp(-x * x / (2.0 * sigma * sigma));
        sum += g[k];
    }
    for (auto& v : g) v /= sum;
    return g;
}

}  // namespace detail

/// Separable normalized Gaussian blur with reflected borders.
inline ScalarMap gaussian_blur(const ScalarMap& in, double sigma) {
    const std::size_t r = static_cast<std::size_t>(std::ceil(3.0 * sigma));
    const auto g = detail::gaussian_kernel(sigma, r);
    const std::size_t h = in.height, w = in.width;
    const auto ir = static_cast<std::ptrdiff_t>(r);

    std::vector<double> tmp(h * w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -ir; k <= ir; ++k)
                acc += g[static_cast<std::size_t>(k + ir)] *
                       in.at(i, detail::reflect_index(static_cast<std::ptrdiff_t>(j) + k, w));
            tmp[i * w + j] = acc;
        }
    ScalarMap out(h, w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -ir; k <= ir; ++k)
                acc += g[static_cast<std::size_t>(k + ir)] *
                       tmp[detail::reflect_index(static_cast<std::ptrdiff_t>(i) + k, h) * w + j];
            out.at(i, j) = static_cast<float>(acc);
        }
    return out;
}

/// Bilinear upsampling to the output size (same alignment as
/// bilinear_resize), then Gaussian smoothing; result clamped to [0, 2].
inline ScalarMap postprocess(const ScalarMap& map, const PostprocessConfig& cfg) {
    cfg.validate(map.height, map.width);
    const FeatureTensor as_tensor(map.height, map.width, 1, map.values);
    const FeatureTensor up = bilinear_resize(as_tensor, cfg.out_height, cfg.out_width);
    ScalarMap out = gaussian_blur(ScalarMap(cfg.out_height, cfg.out_width,
                                            std::vector<float>(up.data().begin(), up.data().end())),
                                  cfg.sigma);
    for (auto& v : out.values) v = std::clamp(v, 0.0f, 2.0f);
    return out;
}

/// Maximum patch anomaly score.
inline float image_score(const ScalarMap& patch_map) {
    if (patch_map.values.empty()) throw InvalidArgument("image_score of an empty map");
    return *std::max_element(patch_map.values.begin(), patch_map.values.end());
}

/// Full scoring path for one image: normalize, similarity against every
/// prototype, channel max, 1 − max, image score over the patch grid, then
/// upsample and smooth for localization.
inline ScoreMap score_image(const FeatureTensor& features, const PrototypeBank& bank,
                            const PostprocessConfig& cfg, std::size_t workers = 1) {
    const NormalizeResult norm = l2_normalize(features);
    ScoreMap s;
    s.patch = anomaly_map(channel_max_pool(similarity_tensor(norm.tensor, bank, workers)));
    s.image_score = image_score(s.patch);
    s.pixels = postprocess(s.patch, cfg);
    s.zero_cells = norm.zero_count;
    return s;
}

}  // namespace protoad
