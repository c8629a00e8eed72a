#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "protoad/error.hpp"
#include "protoad/grid.hpp"

namespace protoad {

/// Area under the ROC curve as the Mann–Whitney statistic
/// (#{pos > neg} + ½·#{pos = neg}) / (P·N), via one sort. Labels are 0/1.
template <typename Score>
double auroc(std::span<const Score> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size())
        throw DimensionError("auroc: " + std::to_string(scores.size()) + " scores, " +
                             std::to_string(labels.size()) + " labels");
    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::uint32_t{0});
    for (const auto s : scores)
        if (std::isnan(static_cast<double>(s))) throw InvalidArgument("auroc: NaN score");
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });

    // Twice the win count keeps ties integral.
    std::uint64_t twice_wins = 0, negatives_below = 0, positives = 0;
    for (std::size_t g = 0; g < order.size();) {
        std::size_t e = g;
        std::uint64_t pos = 0, neg = 0;
        for (; e < order.size() && scores[order[e]] == scores[order[g]]; ++e)
            (labels[order[e]] ? pos : neg) += 1;
        twice_wins += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        positives += pos;
        g = e;
    }
    if (positives == 0 || negatives_below == 0)
        throw InvalidArgument("auroc is undefined for a single-class label set");
    return double(twice_wins) / (2.0 * double(positives) * double(negatives_below));
}

template <typename Score>
double auroc(const std::vector<Score>& scores, const std::vector<std::uint8_t>& labels) {
    return auroc(std::span<const Score>(scores), std::span<const std::uint8_t>(labels));
}

namespace detail {

inline void check_pairs(std::span<const ScalarMap> maps, std::span<const Mask> masks) {
    if (maps.size() != masks.size())
        throw DimensionError(std::to_string(maps.size()) + " maps but " + std::to_string(masks.size()) +
                             " masks");
    for (std::size_t k = 0; k < maps.size(); ++k)
        if (maps[k].height != masks[k].height || maps[k].width != masks[k].width)
            throw DimensionError("map/mask shape mismatch at image " + std::to_string(k));
}

}  // namespace detail

/// AUROC over the pooled pixels of all images.
inline double pixel_auroc(std::span<const ScalarMap> maps, std::span<const Mask> masks) {
    detail::check_pairs(maps, masks);
    std::vector<float> scores;
    std::vector<std::uint8_t> labels;
    for (std::size_t k = 0; k < maps.size(); ++k) {
        scores.insert(scores.end(), maps[k].values.begin(), maps[k].values.end());
        for (auto m : masks[k].values) labels.push_back(m != 0);
    }
    return auroc(scores, labels);
}

/// 8-connected components of the nonzero pixels. Background is -1, regions
/// are numbered from `first_id` in raster order of their first pixel.
inline std::vector<std::int64_t> label_regions(const Mask& mask, std::int64_t first_id,
                                               std::size_t* count = nullptr) {
    const std::size_t h = mask.height, w = mask.width;
    std::vector<std::int64_t> ids(mask.size(), -1);
    std::vector<std::size_t> stack;
    std::int64_t next = first_id;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask.values[start] || ids[start] >= 0) continue;
        ids[start] = next;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t i = p / w, j = p % w;
            for (std::size_t ni = (i == 0 ? 0 : i - 1); ni <= std::min(i + 1, h - 1); ++ni)
                for (std::size_t nj = (j == 0 ? 0 : j - 1); nj <= std::min(j + 1, w - 1); ++nj) {
                    const std::size_t q = ni * w + nj;
                    if (mask.values[q] && ids[q] < 0) {
                        ids[q] = next;
                        stack.push_back(q);
                    }
                }
        }
        ++next;
    }
    if (count) *count = static_cast<std::size_t>(next - first_id);
    return ids;
}

struct ProPoint {
    double fpr = 0.0;
    double pro = 0.0;
};

namespace detail {

/// All pixels of a split sorted by descending score, with their region id
/// (-1 for normal pixels) and the pixel count of every region.
struct RegionPixels {
    struct Pixel {
        float score;
        std::int64_t region;
    };
    std::vector<Pixel> pixels;
    std::vector<std::size_t> region_size;
    std::size_t normal = 0;
};

inline RegionPixels region_pixels(std::span<const ScalarMap> maps, std::span<const Mask> masks) {
    check_pairs(maps, masks);
    RegionPixels t;
    for (std::size_t k = 0; k < maps.size(); ++k) {
        std::size_t n_regions = 0;
        const auto ids = label_regions(masks[k], static_cast<std::int64_t>(t.region_size.size()), &n_regions);
        t.region_size.resize(t.region_size.size() + n_regions, 0);
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (std::isnan(maps[k].values[p])) throw InvalidArgument("NaN score in map " + std::to_string(k));
            t.pixels.push_back({maps[k].values[p], ids[p]});
            if (ids[p] >= 0)
                ++t.region_size[static_cast<std::size_t>(ids[p])];
            else
                ++t.normal;
        }
    }
    if (t.region_size.empty()) throw InvalidArgument("PRO needs at least one ground-truth region");
    if (t.normal == 0) throw InvalidArgument("PRO needs at least one normal pixel");
    std::stable_sort(t.pixels.begin(), t.pixels.end(),
                     [](const RegionPixels::Pixel& a, const RegionPixels::Pixel& b) { return a.score > b.score; });
    return t;
}

/// Running mean overlap over regions. Partial overlaps are summed in 64.64
/// fixed point so that a fully covered region contributes exactly 1 and
/// full coverage gives exactly PRO = 1.
class OverlapTally {
public:
    OverlapTally(const std::vector<std::size_t>& sizes) : sizes_(sizes), hits_(sizes.size(), 0) {}

    void hit(std::size_t region) {
        const std::size_t s = sizes_[region];
        std::size_t& h = hits_[region];
        partial_ -= share(h, s);
        if (++h == s)
            ++full_;
        else
            partial_ += share(h, s);
    }

    double value() const {
        const double partial = double(partial_) * 0x1.0p-64;
        return (double(full_) + partial) / double(sizes_.size());
    }

private:
    static unsigned __int128 share(std::size_t h, std::size_t s) {
        return ((static_cast<unsigned __int128>(h) << 64) / s);
    }

    const std::vector<std::size_t>& sizes_;
    std::vector<std::size_t> hits_;
    std::size_t full_ = 0;
    unsigned __int128 partial_ = 0;
};

}  // namespace detail

/// Per-region overlap and false-positive rate at each threshold (a pixel is
/// predicted anomalous when its score ≥ t). Thresholds must be descending.
/// One sort of all pixels, then a single sweep.
inline std::vector<ProPoint> pro_curve(std::span<const ScalarMap> maps, std::span<const Mask> masks,
                                       std::span<const float> thresholds) {
    if (!std::is_sorted(thresholds.begin(), thresholds.end(), std::greater<>()))
        throw InvalidArgument("pro_curve thresholds must be descending");
    const auto t = detail::region_pixels(maps, masks);
    detail::OverlapTally overlap(t.region_size);
    std::vector<ProPoint> curve;
    curve.reserve(thresholds.size());
    std::size_t cursor = 0, false_pos = 0;
    for (const float th : thresholds) {
        for (; cursor < t.pixels.size() && t.pixels[cursor].score >= th; ++cursor) {
            const auto r = t.pixels[cursor].region;
            if (r < 0)
                ++false_pos;
            else
                overlap.hit(static_cast<std::size_t>(r));
        }
        curve.push_back({double(false_pos) / double(t.normal), overlap.value()});
    }
    return curve;
}

struct ProResult {
    double score = 0.0;
    /// Upper FPR bound actually integrated to (fpr_limit unless the curve fell short).
    double integrated_to = 0.0;
    bool fpr_short = false;
    std::size_t thresholds = 0;
    /// The curve sampled at `thresholds` operating points.
    std::vector<ProPoint> curve;
};

namespace detail {

/// Trapezoidal integration of a PRO curve fed point by point, clipped at
/// `limit` with linear interpolation. Accumulates the area above the curve
/// so that a curve at 1 integrates to exactly 1.
class ProIntegral {
public:
    explicit ProIntegral(double limit) : limit_(limit) {}

    /// Points must arrive in non-decreasing FPR, starting from (0, 0).
    void add(ProPoint p) {
        if (done_) return;
        if (!started_) {
            prev_ = p;
            started_ = true;
            return;
        }
        if (p.fpr > limit_) {
            const double at = prev_.pro + (p.pro - prev_.pro) * (limit_ - prev_.fpr) / (p.fpr - prev_.fpr);
            p = {limit_, at};
            done_ = true;
        }
        deficit_ += (p.fpr - prev_.fpr) * ((1.0 - prev_.pro) + (1.0 - p.pro)) / 2.0;
        prev_ = p;
        if (p.fpr >= limit_) done_ = true;
    }

    double reach() const { return prev_.fpr; }
    double score() const { return reach() > 0.0 ? 1.0 - deficit_ / reach() : 0.0; }

private:
    double limit_;
    bool started_ = false, done_ = false;
    ProPoint prev_;
    double deficit_ = 0.0;
};

}  // namespace detail

/// Trapezoidal area under a PRO curve from FPR 0 to `limit` (the curve is
/// linearly interpolated at the limit), divided by the range integrated.
/// Points must be ordered by non-decreasing FPR and start at FPR 0.
inline ProResult integrate_pro(std::vector<ProPoint> curve, double limit) {
    detail::ProIntegral integral(limit);
    for (const auto& p : curve) integral.add(p);
    ProResult res;
    res.integrated_to = integral.reach();
    res.fpr_short = res.integrated_to < limit;
    res.score = integral.score();
    res.curve = std::move(curve);
    return res;
}

/// PRO score integrated over FPR ∈ [0, fpr_limit]. The curve is evaluated
/// at every distinct score (one operating point per tie group of the sorted
/// pixels), starts at (0, 0), and is integrated exactly by trapezoids.
/// The returned curve is sampled at quantiles of the normal-pixel scores
/// placed at FPR = fpr_limit·i/n_thresholds (i = 1..n).
inline ProResult pro_score(std::span<const ScalarMap> maps, std::span<const Mask> masks,
                           double fpr_limit = 0.3, std::size_t n_thresholds = 200) {
    if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw InvalidArgument("fpr_limit must lie in (0, 1]");
    if (n_thresholds == 0) throw InvalidArgument("n_thresholds must be positive");
    const auto t = detail::region_pixels(maps, masks);

    std::vector<float> normal_scores;
    normal_scores.reserve(t.normal);
    for (const auto& px : t.pixels)
        if (px.region < 0) normal_scores.push_back(px.score);
    std::vector<float> thresholds;
    const double m = double(normal_scores.size());
    for (std::size_t i = 1; i <= n_thresholds; ++i) {
        const double target = fpr_limit * double(i) / double(n_thresholds);
        const auto take = static_cast<std::size_t>(std::clamp(std::ceil(target * m - 1e-9), 1.0, m));
        thresholds.push_back(normal_scores[take - 1]);
    }
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    detail::OverlapTally overlap(t.region_size);
    detail::ProIntegral integral(fpr_limit);
    std::vector<ProPoint> sampled;
    sampled.reserve(thresholds.size());
    integral.add({0.0, 0.0});
    std::size_t false_pos = 0, next_threshold = 0;
    for (std::size_t g = 0; g < t.pixels.size();) {
        const float score = t.pixels[g].score;
        std::size_t e = g;
        for (; e < t.pixels.size() && t.pixels[e].score == score; ++e) {
            const auto r = t.pixels[e].region;
            if (r < 0)
                ++false_pos;
            else
                overlap.hit(static_cast<std::size_t>(r));
        }
        const ProPoint p{double(false_pos) / double(t.normal), overlap.value()};
        integral.add(p);
        const bool last = e == t.pixels.size();
        for (; next_threshold < thresholds.size() &&
               (last || t.pixels[e].score < thresholds[next_threshold]);
             ++next_threshold)
            sampled.push_back(p);
        g = e;
    }

    ProResult res;
    res.integrated_to = integral.reach();
    res.fpr_short = res.integrated_to < fpr_limit;
    res.score = integral.score();
    res.thresholds = thresholds.size();
    res.curve = std::move(sampled);
    return res;
}

/// Threshold-free evaluation of one dataset split.
struct EvalReport {
    double image_auroc = 0.0;
    double pixel_auroc = 0.0;
    double pro_score = 0.0;
    std::size_t n_images = 0;
    std::size_t n_anomalous_images = 0;
    std::size_t n_pixels = 0;
    std::size_t n_anomalous_pixels = 0;
    double sigma = 4.0;
    std::size_t gaussian_radius = 12;
    std::size_t pro_thresholds = 200;
    double fpr_limit = 0.3;
    double pro_integrated_to = 0.3;

    /// key=value lines; metrics with 4 decimals.
    std::string to_text() const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4);
        os << "image_auroc=" << image_auroc << '\n'
           << "pixel_auroc=" << pixel_auroc << '\n'
           << "pro_score=" << pro_score << '\n';
        os << "n_images=" << n_images << '\n'
           << "n_anomalous_images=" << n_anomalous_images << '\n'
           << "n_pixels=" << n_pixels << '\n'
           << "n_anomalous_pixels=" << n_anomalous_pixels << '\n'
           << "sigma=" << sigma << '\n'
           << "gaussian_radius=" << gaussian_radius << '\n'
           << "gaussian_border=reflect\n"
           << "pro_thresholds=" << pro_thresholds << '\n'
           << "pro_connectivity=8\n"
           << "pro_operating_points=every_distinct_score\n"
           << "fpr_limit=" << fpr_limit << '\n'
           << "pro_integrated_to=" << pro_integrated_to << '\n'
           << "image_score=patch_max_before_smoothing\n";
        return os.str();
    }
};

}  // namespace protoad
