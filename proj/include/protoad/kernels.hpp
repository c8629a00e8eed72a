#pragma once

// Dense dot-product kernels shared by clustering and scoring.
//
// Every dot product is accumulated in ascending channel order, one float
// accumulator per output element. The value of dot(a, b) therefore does not
// depend on tiling, row grouping, worker count or argument order, which the
// nearest-neighbour search relies on for reproducible tie-breaking.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <new>
#include <span>
#include <vector>

#include "protoad/parallel.hpp"

namespace protoad::kernels {

/// Candidate rows per transposed tile. Also the row-block height of the
/// symmetric neighbour search.
inline constexpr std::size_t kTile = 64;

inline constexpr std::size_t kAlign = 64;

/// Row-major n×dim matrix repacked as ceil(n/kTile) tiles of dim×kTile,
/// zero-padded past the last row. Every tile row starts on a kAlign boundary.
class TransposedTiles {
public:
    TransposedTiles(std::span<const float> rows, std::size_t n, std::size_t dim)
        : n_(n), dim_(dim), tiles_((n + kTile - 1) / kTile),
          data_(new(std::align_val_t{kAlign}) float[tiles_ * dim * kTile]()) {
        for (std::size_t t = 0; t < tiles_; ++t) {
            float* dst = data_.get() + t * dim * kTile;
            const std::size_t first = t * kTile;
            const std::size_t count = std::min(kTile, n - first);
            for (std::size_t r = 0; r < count; ++r) {
                const float* src = rows.data() + (first + r) * dim;
                for (std::size_t c = 0; c < dim; ++c) dst[c * kTile + r] = src[c];
            }
        }
    }

    std::size_t rows() const { return n_; }
    std::size_t dim() const { return dim_; }
    std::size_t tiles() const { return tiles_; }
    std::size_t tile_rows(std::size_t t) const { return std::min(kTile, n_ - t * kTile); }
    const float* tile(std::size_t t) const { return data_.get() + t * dim_ * kTile; }

private:
    struct AlignedDelete {
        void operator()(float* p) const { ::operator delete[](p, std::align_val_t{kAlign}); }
    };

    std::size_t n_;
    std::size_t dim_;
    std::size_t tiles_;
    std::unique_ptr<float[], AlignedDelete> data_;
};

namespace detail {

#if defined(__GNUC__)
// Float vector matching the widest SIMD register the target enables.
#if defined(__AVX512F__)
inline constexpr std::size_t kLanes = 16;
#elif defined(__AVX__)
inline constexpr std::size_t kLanes = 8;
#else
inline constexpr std::size_t kLanes = 4;
#endif
typedef float lanes __attribute__((vector_size(kLanes * sizeof(float))));

template <std::size_t Rows>
inline void tile_rows(const float* a, std::size_t dim, const float* bt, float* out) {
    constexpr std::size_t kChunks = kTile / kLanes;
    lanes acc[Rows][kChunks] = {};
    for (std::size_t c = 0; c < dim; ++c) {
        const auto* col = reinterpret_cast<const lanes*>(bt + c * kTile);
        for (std::size_t r = 0; r < Rows; ++r) {
            const float x = a[r * dim + c];
            for (std::size_t q = 0; q < kChunks; ++q) acc[r][q] += x * col[q];
        }
    }
    for (std::size_t r = 0; r < Rows; ++r) std::memcpy(out + r * kTile, acc[r], sizeof acc[r]);
}
#else
template <std::size_t Rows>
inline void tile_rows(const float* a, std::size_t dim, const float* bt, float* out) {
    float acc[Rows][kTile] = {};
    for (std::size_t c = 0; c < dim; ++c) {
        const float* col = bt + c * kTile;
        for (std::size_t r = 0; r < Rows; ++r) {
            const float x = a[r * dim + c];
            for (std::size_t j = 0; j < kTile; ++j) acc[r][j] += x * col[j];
        }
    }
    for (std::size_t r = 0; r < Rows; ++r) std::copy_n(acc[r], kTile, out + r * kTile);
}
#endif

}  // namespace detail

/// out[i*kTile + j] = dot(a_i, tile row j) for i < m. Rows of `a` are
/// contiguous with stride dim; bt must be a tile from TransposedTiles (aligned);
/// out must hold m*kTile floats.
inline void tile_product(const float* a, std::size_t m, std::size_t dim, const float* bt,
                         float* out) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) detail::tile_rows<4>(a + i * dim, dim, bt, out + i * kTile);
    for (; i < m; ++i) detail::tile_rows<1>(a + i * dim, dim, bt, out + i * kTile);
}

/// Full product out = A·Bᵀ, A is m×dim, B given as transposed tiles (n×dim);
/// out is m×n row-major.
inline void similarity_matrix(std::span<const float> a, std::size_t m, const TransposedTiles& b,
                              std::span<float> out, std::size_t workers) {
    const std::size_t dim = b.dim();
    const std::size_t n = b.rows();
    constexpr std::size_t kRowBlock = 64;
    const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
    parallel_for(blocks, workers, [&](std::size_t blk, std::size_t) {
        std::vector<float> scratch(kRowBlock * kTile);
        const std::size_t r0 = blk * kRowBlock;
        const std::size_t rows = std::min(kRowBlock, m - r0);
        for (std::size_t t = 0; t < b.tiles(); ++t) {
            tile_product(a.data() + r0 * dim, rows, dim, b.tile(t), scratch.data());
            const std::size_t cols = b.tile_rows(t);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(scratch.data() + r * kTile, cols,
                            out.data() + (r0 + r) * n + t * kTile);
        }
    });
}

/// Best candidate so far: larger similarity wins, equal similarity goes to
/// the smaller index. The order is total, so merging partial results in any
/// order gives the same answer.
struct Best {
    float sim = -std::numeric_limits<float>::infinity();
    std::uint32_t index = std::numeric_limits<std::uint32_t>::max();

    void offer(float s, std::uint32_t j) {
        if (s > sim || (s == sim && j < index)) {
            sim = s;
            index = j;
        }
    }
};

inline constexpr float kMinusInf = -std::numeric_limits<float>::infinity();

/// For each row i of the n×dim matrix, the row j ≠ i maximizing dot(i, j),
/// ties to the smallest j. Requires n ≥ 2. Uses the symmetry of the dot
/// product: each unordered pair of tiles is multiplied once.
inline std::vector<Best> nearest_other(std::span<const float> points, std::size_t n, std::size_t dim,
                                       std::size_t workers) {
    const TransposedTiles tiles(points, n, dim);
    const std::size_t nb = tiles.tiles();
    if (workers == 0) workers = default_workers();
    workers = std::max<std::size_t>(1, std::min(workers, nb));

    std::vector<std::vector<Best>> local(workers, std::vector<Best>(n));
    parallel_for(nb, workers, [&](std::size_t bi, std::size_t w) {
        std::vector<float> sims(kTile * kTile);
        std::vector<float> col_top(kTile);
        auto& best = local[w];
        const std::size_t i0 = bi * kTile;
        const std::size_t rows = tiles.tile_rows(bi);
        for (std::size_t bj = bi; bj < nb; ++bj) {
            const std::size_t j0 = bj * kTile;
            const std::size_t cols = tiles.tile_rows(bj);
            tile_product(points.data() + i0 * dim, rows, dim, tiles.tile(bj), sims.data());
            if (bj == bi)
                for (std::size_t r = 0; r < rows; ++r) sims[r * kTile + r] = kMinusInf;

            for (std::size_t r = 0; r < rows; ++r) {
                const float* row = sims.data() + r * kTile;
                float top = kMinusInf;
                for (std::size_t c = 0; c < cols; ++c) top = std::max(top, row[c]);
                Best& b = best[i0 + r];
                if (top == kMinusInf || top < b.sim) continue;
                const std::size_t c = static_cast<std::size_t>(std::find(row, row + cols, top) - row);
                b.offer(top, static_cast<std::uint32_t>(j0 + c));
            }
            if (bj == bi) continue;

            std::fill(col_top.begin(), col_top.end(), kMinusInf);
            for (std::size_t r = 0; r < rows; ++r) {
                const float* row = sims.data() + r * kTile;
                for (std::size_t c = 0; c < cols; ++c) col_top[c] = std::max(col_top[c], row[c]);
            }
            for (std::size_t c = 0; c < cols; ++c) {
                Best& b = best[j0 + c];
                if (col_top[c] < b.sim) continue;
                std::size_t r = 0;
                while (sims[r * kTile + c] != col_top[c]) ++r;
                b.offer(col_top[c], static_cast<std::uint32_t>(i0 + r));
            }
        }
    });

    std::vector<Best> merged = std::move(local[0]);
    for (std::size_t w = 1; w < workers; ++w)
        for (std::size_t i = 0; i < n; ++i) merged[i].offer(local[w][i].sim, local[w][i].index);
    return merged;
}

/// For each row i of the m×dim matrix `a`, the candidate j maximizing
/// dot(a_i, b_j) + bias[j], ties to the smallest j. An empty bias means zero.
inline std::vector<Best> best_match(std::span<const float> a, std::size_t m,
                                    const TransposedTiles& b, std::span<const float> bias,
                                    std::size_t workers) {
    const std::size_t dim = b.dim();
    constexpr std::size_t kRowBlock = 64;
    const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
    std::vector<Best> best(m);
    parallel_for(blocks, workers, [&](std::size_t blk, std::size_t) {
        std::vector<float> sims(kRowBlock * kTile);
        const std::size_t r0 = blk * kRowBlock;
        const std::size_t rows = std::min(kRowBlock, m - r0);
        for (std::size_t t = 0; t < b.tiles(); ++t) {
            tile_product(a.data() + r0 * dim, rows, dim, b.tile(t), sims.data());
            const std::size_t cols = b.tile_rows(t);
            for (std::size_t r = 0; r < rows; ++r) {
                float* row = sims.data() + r * kTile;
                if (!bias.empty())
                    for (std::size_t c = 0; c < cols; ++c) row[c] += bias[t * kTile + c];
                for (std::size_t c = 0; c < cols; ++c)
                    best[r0 + r].offer(row[c], static_cast<std::uint32_t>(t * kTile + c));
            }
        }
    });
    return best;
}

/// Plain sequential dot product in ascending channel order.
inline float dot(const float* a, const float* b, std::size_t dim) {
    float s = 0.0f;
    for (std::size_t c = 0; c < dim; ++c) s += a[c] * b[c];
    return s;
}

}  // namespace protoad::kernels
