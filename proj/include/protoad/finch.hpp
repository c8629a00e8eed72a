#pragma once

// Parameter-free hierarchical clustering by first-neighbour relations.
//
// Points i and j are linked when j is i's first neighbour, i is j's first
// neighbour, or both share the same first neighbour. Connected components of
// that graph form a partition; cluster means (renormalized) are then treated
// as points and the procedure repeats, yielding a hierarchy of ever coarser
// partitions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "protoad/error.hpp"
#include "protoad/kernels.hpp"
#include "protoad/matrix.hpp"

namespace protoad {

struct ClusterOptions {
    /// Threads for the neighbour search; 0 means hardware concurrency.
    std::size_t workers = 0;
    /// Tolerance on |‖row‖ − 1| accepted by the neighbour search.
    double unit_tolerance = 1e-4;
};

/// kappa[i] is the index of point i's most similar other point.
struct NeighborIndex {
    std::vector<std::uint32_t> kappa;
    /// Similarity of each point to its first neighbour.
    std::vector<float> similarity;
};

/// First (nearest by cosine) neighbour of every row, ties to the smallest index.
inline NeighborIndex first_neighbors(const RowsView& points, const ClusterOptions& opt = {}) {
    if (points.rows < 2) throw InvalidArgument("first_neighbors needs at least 2 points");
    if (points.rows > std::numeric_limits<std::uint32_t>::max())
        throw InvalidArgument("too many points for 32-bit neighbour indices");
    for (std::size_t i = 0; i < points.rows; ++i) {
        double sq = 0.0;
        for (float v : points.row(i)) {
            if (!std::isfinite(v))
                throw InvalidArgument("non-finite value in point " + std::to_string(i));
            sq += double(v) * v;
        }
        if (std::abs(std::sqrt(sq) - 1.0) > opt.unit_tolerance)
            throw InvalidArgument("point " + std::to_string(i) + " is not unit norm (" +
                                  std::to_string(std::sqrt(sq)) + ")");
    }
    const auto best = kernels::nearest_other(points.data, points.rows, points.cols, opt.workers);
    NeighborIndex nbr;
    nbr.kappa.resize(best.size());
    nbr.similarity.resize(best.size());
    for (std::size_t i = 0; i < best.size(); ++i) {
        nbr.kappa[i] = best[i].index;
        nbr.similarity[i] = best[i].sim;
    }
    return nbr;
}

/// Cluster ids of a flat clustering, numbered by first appearance.
struct Labels {
    std::vector<std::uint32_t> ids;
    std::size_t num_clusters = 0;
};

namespace detail {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) {
        std::iota(parent_.begin(), parent_.end(), std::uint32_t{0});
    }

    std::uint32_t find(std::uint32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) std::swap(a, b);
        parent_[a] = b;
    }

private:
    std::vector<std::uint32_t> parent_;
};

/// Renumbers arbitrary group keys so ids follow order of first appearance.
inline Labels canonical_labels(const std::vector<std::uint32_t>& keys) {
    constexpr auto kUnset = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> remap(keys.empty() ? 0 : *std::max_element(keys.begin(), keys.end()) + 1,
                                     kUnset);
    Labels out;
    out.ids.resize(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto& id = remap[keys[i]];
        if (id == kUnset) id = static_cast<std::uint32_t>(out.num_clusters++);
        out.ids[i] = id;
    }
    return out;
}

}  // namespace detail

/// Connected components of the first-neighbour graph. Linking each point to
/// its own first neighbour already connects points that share one, so the
/// union over (i, kappa[i]) yields the full adjacency's components.
inline Labels partition_from_neighbors(const NeighborIndex& nbr) {
    const std::size_t n = nbr.kappa.size();
    detail::DisjointSets sets(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (nbr.kappa[i] >= n || nbr.kappa[i] == i)
            throw InvalidArgument("invalid first neighbour for point " + std::to_string(i));
        sets.unite(static_cast<std::uint32_t>(i), nbr.kappa[i]);
    }
    std::vector<std::uint32_t> roots(n);
    for (std::size_t i = 0; i < n; ++i) roots[i] = sets.find(static_cast<std::uint32_t>(i));
    return detail::canonical_labels(roots);
}

/// One flat clustering of the input points.
struct Partition {
    std::vector<std::uint32_t> labels;
    std::size_t num_clusters = 0;
    /// num_clusters × C, each row the L2-renormalized mean of its members.
    RowMatrix means;
    std::vector<std::size_t> sizes;
    /// 1 where the member mean vanished and the first member stands in.
    std::vector<std::uint8_t> degenerate;

    friend bool operator==(const Partition&, const Partition&) = default;
};

inline constexpr double kDegenerateNorm = 1e-12;

/// Builds a Partition from labels already numbered 0..num_clusters-1.
inline Partition make_partition(const RowsView& points, Labels labels) {
    if (labels.ids.size() != points.rows)
        throw DimensionError("label count " + std::to_string(labels.ids.size()) +
                             " does not match point count " + std::to_string(points.rows));
    const std::size_t k = labels.num_clusters;
    const std::size_t dim = points.cols;
    constexpr auto kNone = std::numeric_limits<std::size_t>::max();

    Partition p;
    p.num_clusters = k;
    p.sizes.assign(k, 0);
    p.degenerate.assign(k, 0);
    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> first(k, kNone);
    for (std::size_t i = 0; i < points.rows; ++i) {
        const std::uint32_t l = labels.ids[i];
        if (l >= k) throw InvalidArgument("label out of range at point " + std::to_string(i));
        ++p.sizes[l];
        if (first[l] == kNone) first[l] = i;
        const auto row = points.row(i);
        double* acc = sums.data() + l * dim;
        for (std::size_t c = 0; c < dim; ++c) acc[c] += row[c];
    }

    p.means = RowMatrix(k, dim);
    for (std::size_t l = 0; l < k; ++l) {
        if (p.sizes[l] == 0) throw InvalidArgument("labels are not onto: cluster " + std::to_string(l) + " is empty");
        const double* acc = sums.data() + l * dim;
        double sq = 0.0;
        for (std::size_t c = 0; c < dim; ++c) sq += acc[c] * acc[c];
        const double norm = std::sqrt(sq) / double(p.sizes[l]);
        auto out = p.means.row(l);
        if (norm < kDegenerateNorm) {
            p.degenerate[l] = 1;
            const auto src = points.row(first[l]);
            std::copy(src.begin(), src.end(), out.begin());
            continue;
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t c = 0; c < dim; ++c) out[c] = static_cast<float>(acc[c] * inv);
    }
    p.labels = std::move(labels.ids);
    return p;
}

/// Nested partitions, finest first, with strictly decreasing cluster counts.
struct PartitionHierarchy {
    std::vector<Partition> levels;

    std::vector<std::size_t> cluster_counts() const {
        std::vector<std::size_t> counts;
        for (const auto& p : levels) counts.push_back(p.num_clusters);
        return counts;
    }
};

struct FinchOptions : ClusterOptions {
    /// Stop once a level has fewer clusters than this; 0 builds the full
    /// hierarchy down to a single cluster.
    std::size_t stop_below = 0;
};

/// Runs first-neighbour clustering recursively on unit-norm points. Merge
/// levels cluster the renormalized means of the previous level; every level
/// is expressed as labels over the original points and its means are taken
/// over the original points. Stops after a single-cluster level or when a
/// level fails to reduce the count.
inline PartitionHierarchy finch(const RowsView& points, const FinchOptions& opt = {}) {
    PartitionHierarchy h;
    h.levels.push_back(make_partition(points, partition_from_neighbors(first_neighbors(points, opt))));
    while (true) {
        const Partition& cur = h.levels.back();
        if (cur.num_clusters <= 1) break;
        if (opt.stop_below != 0 && cur.num_clusters < opt.stop_below) break;
        const Labels merged = partition_from_neighbors(first_neighbors(cur.means.view(), opt));
        if (merged.num_clusters >= cur.num_clusters) break;
        Labels composed;
        composed.num_clusters = merged.num_clusters;
        composed.ids.resize(cur.labels.size());
        for (std::size_t i = 0; i < cur.labels.size(); ++i) composed.ids[i] = merged.ids[cur.labels[i]];
        h.levels.push_back(make_partition(points, std::move(composed)));
    }
    return h;
}

/// "level index, num_clusters" per line.
inline std::string format_hierarchy(const PartitionHierarchy& h) {
    std::ostringstream os;
    for (std::size_t l = 0; l < h.levels.size(); ++l)
        os << l << ", " << h.levels[l].num_clusters << '\n';
    return os.str();
}

struct PartitionSelection {
    std::size_t level = 0;
    /// Set when no level fell below the threshold and the last one was taken.
    bool fallback = false;
};

/// First level with fewer than max_clusters clusters; the last level (with
/// fallback set) if none qualifies.
inline PartitionSelection select_partition(const PartitionHierarchy& h, std::size_t max_clusters = 10000) {
    if (h.levels.empty()) throw InvalidArgument("cannot select from an empty hierarchy");
    if (max_clusters == 0) throw InvalidArgument("max_clusters must be positive");
    for (std::size_t l = 0; l < h.levels.size(); ++l)
        if (h.levels[l].num_clusters < max_clusters) return {l, false};
    return {h.levels.size() - 1, true};
}

struct KMeansResult {
    Partition partition;
    /// Raw (not renormalized) centroids of the non-empty clusters.
    RowMatrix centroids;
    double distortion = 0.0;
    std::size_t iterations = 0;
};

struct KMeansOptions {
    std::size_t max_iterations = 100;
    /// Stop when ‖Δcentroids‖ / ‖centroids‖ falls below this.
    double tolerance = 1e-4;
    std::size_t workers = 1;
};

/// Lloyd's k-means with seeded k-means++ initialization on the Euclidean
/// metric. Clusters left empty at convergence are dropped, so the returned
/// partition can have fewer than k clusters when points coincide.
inline KMeansResult kmeans_reference(const RowsView& points, std::size_t k, std::uint64_t seed,
                                     const KMeansOptions& opt = {}) {
    const std::size_t n = points.rows;
    const std::size_t dim = points.cols;
    if (k < 1 || k > n)
        throw InvalidArgument("k must lie in [1, " + std::to_string(n) + "], got " + std::to_string(k));

    std::mt19937_64 rng(seed);
    auto uniform = [&rng] { return double(rng() >> 11) * 0x1.0p-53; };
    auto sqdist = [&](std::span<const float> a, std::span<const float> b) {
        double s = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double d = double(a[c]) - b[c];
            s += d * d;
        }
        return s;
    };

    RowMatrix centroids(k, dim);
    std::vector<std::uint8_t> chosen(n, 0);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = static_cast<std::size_t>(uniform() * double(n));
    for (std::size_t c = 0; c < k; ++c) {
        chosen[pick] = 1;
        const auto src = points.row(pick);
        std::copy(src.begin(), src.end(), centroids.row(c).begin());
        if (c + 1 == k) break;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sqdist(points.row(i), centroids.row(c)));
            if (!chosen[i]) total += d2[i];
        }
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
            continue;
        }
        const double target = uniform() * total;
        double run = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i]) continue;
            run += d2[i];
            pick = i;
            if (run > target) break;
        }
    }

    std::vector<std::uint32_t> assign(n, 0);
    auto assign_all = [&] {
        // argmin ‖x − c‖² = argmax (x·c − ‖c‖²/2)
        std::vector<float> bias(k);
        for (std::size_t c = 0; c < k; ++c) {
            double sq = 0.0;
            for (float v : centroids.row(c)) sq += double(v) * v;
            bias[c] = static_cast<float>(-0.5 * sq);
        }
        const kernels::TransposedTiles tiles(centroids.data, k, dim);
        const auto best = kernels::best_match(points.data, n, tiles, bias, opt.workers);
        for (std::size_t i = 0; i < n; ++i) assign[i] = best[i].index;
    };

    KMeansResult res;
    for (res.iterations = 1; res.iterations <= opt.max_iterations; ++res.iterations) {
        assign_all();
        std::vector<double> sums(k * dim, 0.0);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            const auto row = points.row(i);
            for (std::size_t c = 0; c < dim; ++c) sums[assign[i] * dim + c] += row[c];
        }
        double shift = 0.0, scale = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            auto cen = centroids.row(c);
            for (std::size_t d = 0; d < dim; ++d) {
                const double old = cen[d];
                scale += old * old;
                if (counts[c] == 0) continue;
                const double now = sums[c * dim + d] / double(counts[c]);
                shift += (now - old) * (now - old);
                cen[d] = static_cast<float>(now);
            }
        }
        if (std::sqrt(shift) <= opt.tolerance * std::max(std::sqrt(scale), 1e-300)) break;
    }
    res.iterations = std::min(res.iterations, opt.max_iterations);
    assign_all();

    // Drop empty clusters, keeping centroid order.
    std::vector<std::size_t> counts(k, 0);
    for (auto a : assign) ++counts[a];
    std::vector<std::uint32_t> remap(k, 0);
    std::size_t kept = 0;
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0) remap[c] = static_cast<std::uint32_t>(kept++);
    res.centroids = RowMatrix(kept, dim);
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0) {
            const auto src = centroids.row(c);
            std::copy(src.begin(), src.end(), res.centroids.row(remap[c]).begin());
        }
    Labels labels{std::vector<std::uint32_t>(n), kept};
    for (std::size_t i = 0; i < n; ++i) {
        labels.ids[i] = remap[assign[i]];
        res.distortion += sqdist(points.row(i), res.centroids.row(labels.ids[i]));
    }
    res.partition = make_partition(points, std::move(labels));
    return res;
}

}  // namespace protoad
