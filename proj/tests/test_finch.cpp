#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "protoad/finch.hpp"

using protoad::RowsView;

namespace {

std::vector<float> planar(std::initializer_list<double> degrees) {
    std::vector<float> out;
    for (double d : degrees) {
        const double r = d * std::numbers::pi / 180.0;
        out.push_back(float(std::cos(r)));
        out.push_back(float(std::sin(r)));
    }
    return out;
}

protoad::NeighborIndex index_of(std::vector<std::uint32_t> kappa) {
    return {std::move(kappa), {}};
}

protoad::PartitionHierarchy counts_only(std::initializer_list<std::size_t> counts) {
    protoad::PartitionHierarchy h;
    for (auto c : counts) {
        protoad::Partition p;
        p.num_clusters = c;
        h.levels.push_back(p);
    }
    return h;
}

/// Clustered unit vectors: a few random centres with jitter.
std::vector<float> clustered(std::mt19937_64& rng, std::size_t n, std::size_t dim, std::size_t centres) {
    const auto c = oracle::unit_rows(rng, centres, dim);
    std::normal_distribution<double> nd(0.0, 0.3);
    std::vector<float> out(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = rng() % centres;
        double sq = 0.0;
        std::vector<double> v(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            v[d] = c[k * dim + d] + nd(rng);
            sq += v[d] * v[d];
        }
        for (std::size_t d = 0; d < dim; ++d) out[i * dim + d] = float(v[d] / std::sqrt(sq));
    }
    return out;
}

}  // namespace

TEST(FirstNeighbors, TwoPoints) {
    const auto p = planar({0, 30});
    EXPECT_EQ(protoad::first_neighbors(RowsView(p, 2, 2)).kappa, (std::vector<std::uint32_t>{1, 0}));
}

TEST(FirstNeighbors, PlanarAngles) {
    // cos(0°,10°) = 0.985, cos(0°,90°) = 0, cos(10°,90°) = 0.174.
    const auto p = planar({0, 10, 90});
    EXPECT_EQ(protoad::first_neighbors(RowsView(p, 3, 2)).kappa, (std::vector<std::uint32_t>{1, 0, 1}));
}

TEST(FirstNeighbors, IdenticalPointsTieToSmallestIndex) {
    for (std::size_t n : {2u, 5u, 70u, 150u}) {
        std::vector<float> p;
        for (std::size_t i = 0; i < n; ++i) p.insert(p.end(), {0.6f, 0.0f, 0.8f});
        const auto k = protoad::first_neighbors(RowsView(p, n, 3)).kappa;
        EXPECT_EQ(k[0], 1u);
        for (std::size_t i = 1; i < n; ++i) EXPECT_EQ(k[i], 0u) << "n=" << n << " i=" << i;
    }
}

TEST(FirstNeighbors, Preconditions) {
    const auto one = planar({0});
    EXPECT_THROW(protoad::first_neighbors(RowsView(one, 1, 2)), protoad::InvalidArgument);
    std::vector<float> nan = {1.0f, 0.0f, std::nanf(""), 0.0f};
    EXPECT_THROW(protoad::first_neighbors(RowsView(nan, 2, 2)), protoad::InvalidArgument);
    std::vector<float> long_rows = {2.0f, 0.0f, 0.0f, 1.0f};
    EXPECT_THROW(protoad::first_neighbors(RowsView(long_rows, 2, 2)), protoad::InvalidArgument);
}

TEST(FirstNeighbors, MatchesBruteForceAcrossTilesAndWorkers) {
    std::mt19937_64 rng(99);
    for (std::size_t n : {2u, 3u, 63u, 64u, 65u, 200u, 333u}) {
        const std::size_t dim = 1 + rng() % 40;
        const auto p = oracle::unit_rows(rng, n, dim);
        const auto expect = oracle::first_neighbors(p, n, dim);
        for (std::size_t workers : {1u, 3u, 4u}) {
            protoad::ClusterOptions opt;
            opt.workers = workers;
            EXPECT_EQ(protoad::first_neighbors(RowsView(p, n, dim), opt).kappa, expect)
                << "n=" << n << " workers=" << workers;
        }
    }
}

TEST(PartitionFromNeighbors, MutualPair) {
    const auto l = protoad::partition_from_neighbors(index_of({1, 0}));
    EXPECT_EQ(l.num_clusters, 1u);
    EXPECT_EQ(l.ids, (std::vector<std::uint32_t>{0, 0}));
}

TEST(PartitionFromNeighbors, TwoSeparatePairs) {
    const auto l = protoad::partition_from_neighbors(index_of({1, 0, 3, 2}));
    EXPECT_EQ(l.ids, (std::vector<std::uint32_t>{0, 0, 1, 1}));
    EXPECT_EQ(l.ids, oracle::canonical(oracle::adjacency_components({1, 0, 3, 2})));
}

TEST(PartitionFromNeighbors, ChainJoinsThroughSharedNeighbour) {
    const auto l = protoad::partition_from_neighbors(index_of({1, 0, 1}));
    EXPECT_EQ(l.num_clusters, 1u);
    EXPECT_EQ(l.ids, (std::vector<std::uint32_t>{0, 0, 0}));
}

TEST(PartitionFromNeighbors, SharedNeighbourWithoutDirectLink) {
    // Points 1 and 2 both point at 0 and never at each other.
    const auto l = protoad::partition_from_neighbors(index_of({1, 0, 0, 4, 3}));
    EXPECT_EQ(l.ids, (std::vector<std::uint32_t>{0, 0, 0, 1, 1}));
}

TEST(PartitionFromNeighbors, RejectsSelfNeighbour) {
    EXPECT_THROW(protoad::partition_from_neighbors(index_of({0, 0})), protoad::InvalidArgument);
}

TEST(PartitionFromNeighbors, RandomGraphsMatchEdgeEnumeration) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 60;
        std::vector<std::uint32_t> kappa(n);
        for (std::size_t i = 0; i < n; ++i) {
            do kappa[i] = std::uint32_t(rng() % n);
            while (kappa[i] == i);
        }
        EXPECT_EQ(protoad::partition_from_neighbors(index_of(kappa)).ids,
                  oracle::canonical(oracle::adjacency_components(kappa)));
    }
}

TEST(Finch, TwoTightPairs) {
    // Level 0: {0°,5°} and {90°,95°}; their means (2.5°, 92.5°) are each
    // other's only neighbour, so level 1 merges everything.
    const auto p = planar({0, 5, 90, 95});
    const auto h = protoad::finch(RowsView(p, 4, 2));
    EXPECT_EQ(h.cluster_counts(), (std::vector<std::size_t>{2, 1}));
    EXPECT_EQ(h.levels[0].labels, (std::vector<std::uint32_t>{0, 0, 1, 1}));
    EXPECT_NEAR(h.levels[0].means.row(0)[0], std::cos(2.5 * std::numbers::pi / 180), 1e-6);
}

TEST(Finch, TwoPointsMergeAtOnce) {
    const auto p = planar({0, 120});
    EXPECT_EQ(protoad::finch(RowsView(p, 2, 2)).cluster_counts(), (std::vector<std::size_t>{1}));
}

TEST(Finch, IdenticalPointsFormOneCluster) {
    std::vector<float> p;
    for (int i = 0; i < 10; ++i) p.insert(p.end(), {0.0f, 1.0f});
    const auto h = protoad::finch(RowsView(p, 10, 2));
    EXPECT_EQ(h.cluster_counts(), (std::vector<std::size_t>{1}));
    EXPECT_EQ(h.levels[0].sizes, (std::vector<std::size_t>{10}));
}

TEST(Finch, AntipodalClusterIsDegenerate) {
    // 0 and 1 are antipodal but pick each other over nothing else.
    const std::vector<float> p = {1.0f, 0.0f, -1.0f, 0.0f};
    const auto h = protoad::finch(RowsView(p, 2, 2));
    ASSERT_EQ(h.levels.size(), 1u);
    EXPECT_EQ(h.levels[0].degenerate[0], 1);
    EXPECT_EQ(h.levels[0].means.row(0)[0], 1.0f);
}

TEST(Finch, HierarchyInvariantsOnRandomData) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 15; ++trial) {
        const std::size_t n = 20 + rng() % 400;
        const std::size_t dim = std::size_t{1} << (1 + rng() % 6);
        const auto p = clustered(rng, n, dim, 1 + rng() % 12);
        const auto h = protoad::finch(RowsView(p, n, dim));
        ASSERT_FALSE(h.levels.empty());
        for (std::size_t l = 0; l < h.levels.size(); ++l) {
            const auto& part = h.levels[l];
            std::size_t total = 0;
            for (auto s : part.sizes) total += s;
            EXPECT_EQ(total, n);
            for (std::size_t k = 0; k < part.num_clusters; ++k) {
                double sq = 0.0;
                for (float v : part.means.row(k)) sq += double(v) * v;
                if (!part.degenerate[k]) {
                    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
                }
            }
            if (l == 0) {
                for (auto s : part.sizes) EXPECT_GE(s, 2u);
            }
            if (l + 1 < h.levels.size()) {
                const auto& next = h.levels[l + 1];
                EXPECT_LT(next.num_clusters, part.num_clusters);
                // Coarsening: points sharing a cluster keep sharing one.
                std::vector<std::int64_t> image(part.num_clusters, -1);
                for (std::size_t i = 0; i < n; ++i) {
                    auto& m = image[part.labels[i]];
                    if (m < 0) m = next.labels[i];
                    EXPECT_EQ(m, std::int64_t(next.labels[i]));
                }
            }
        }
        EXPECT_EQ(h.levels.back().num_clusters, 1u);
    }
}

TEST(Finch, LevelZeroInvariantUnderPermutation) {
    std::mt19937_64 rng(23);
    const std::size_t n = 150, dim = 8;
    const auto p = clustered(rng, n, dim, 6);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<float> q(n * dim);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(&p[perm[i] * dim], dim, &q[i * dim]);

    const auto a = protoad::finch(RowsView(p, n, dim)).levels[0].labels;
    const auto b = protoad::finch(RowsView(q, n, dim)).levels[0].labels;
    std::vector<std::uint32_t> b_in_original_order(n);
    for (std::size_t i = 0; i < n; ++i) b_in_original_order[perm[i]] = b[i];
    EXPECT_EQ(oracle::canonical(b_in_original_order), a);
}

TEST(Finch, DeterministicAndWorkerInvariant) {
    std::mt19937_64 rng(31);
    const std::size_t n = 700, dim = 16;
    const auto p = clustered(rng, n, dim, 9);
    protoad::FinchOptions one, four;
    one.workers = 1;
    four.workers = 4;
    const auto a = protoad::finch(RowsView(p, n, dim), one);
    const auto b = protoad::finch(RowsView(p, n, dim), one);
    const auto c = protoad::finch(RowsView(p, n, dim), four);
    ASSERT_EQ(a.levels.size(), b.levels.size());
    ASSERT_EQ(a.levels.size(), c.levels.size());
    for (std::size_t l = 0; l < a.levels.size(); ++l) {
        EXPECT_EQ(a.levels[l], b.levels[l]);
        EXPECT_EQ(a.levels[l], c.levels[l]);
    }
}

TEST(Finch, StopBelowTruncatesHierarchy) {
    std::mt19937_64 rng(2);
    const auto p = clustered(rng, 300, 4, 5);
    protoad::FinchOptions opt;
    opt.stop_below = 1000;
    EXPECT_EQ(protoad::finch(RowsView(p, 300, 4), opt).levels.size(), 1u);
}

TEST(Finch, HierarchyDump) {
    const auto p = planar({0, 5, 90, 95});
    EXPECT_EQ(protoad::format_hierarchy(protoad::finch(RowsView(p, 4, 2))), "0, 2\n1, 1\n");
}

TEST(SelectPartition, ThresholdRule) {
    // Cluster counts reported for partitions P2-P4 on texture categories.
    auto sel = protoad::select_partition(counts_only({48132, 7802, 1166}), 10000);
    EXPECT_EQ(sel.level, 1u);
    EXPECT_FALSE(sel.fallback);

    sel = protoad::select_partition(counts_only({50, 7}), 10000);
    EXPECT_EQ(sel.level, 0u);

    sel = protoad::select_partition(counts_only({20000, 15000}), 10000);
    EXPECT_EQ(sel.level, 1u);
    EXPECT_TRUE(sel.fallback);

    sel = protoad::select_partition(counts_only({10000, 9999}), 10000);
    EXPECT_EQ(sel.level, 1u);
}

TEST(SelectPartition, EmptyHierarchyThrows) {
    EXPECT_THROW(protoad::select_partition({}, 10), protoad::InvalidArgument);
}

TEST(KMeansReference, KEqualsNGivesZeroDistortion) {
    std::mt19937_64 rng(4);
    const auto p = oracle::unit_rows(rng, 12, 5);
    const auto r = protoad::kmeans_reference(RowsView(p, 12, 5), 12, 1);
    EXPECT_EQ(r.partition.num_clusters, 12u);
    EXPECT_NEAR(r.distortion, 0.0, 1e-9);
    for (auto s : r.partition.sizes) EXPECT_EQ(s, 1u);
}

TEST(KMeansReference, KOneIsGrandMean) {
    std::mt19937_64 rng(5);
    const auto p = oracle::unit_rows(rng, 30, 4);
    const auto r = protoad::kmeans_reference(RowsView(p, 30, 4), 1, 3);
    ASSERT_EQ(r.centroids.rows, 1u);
    for (std::size_t d = 0; d < 4; ++d) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 30; ++i) mean += p[i * 4 + d];
        EXPECT_NEAR(r.centroids.row(0)[d], mean / 30.0, 1e-6);
    }
}

TEST(KMeansReference, RecoversSeparatedBlobs) {
    // Blob centres 10 apart, within-blob spread 1.
    std::mt19937_64 rng(6);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    std::vector<float> p;
    std::vector<int> truth;
    for (int i = 0; i < 80; ++i) {
        const int b = i % 2;
        p.push_back(nd(rng) + (b ? 10.0f : 0.0f));
        p.push_back(nd(rng));
        truth.push_back(b);
    }
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        const auto r = protoad::kmeans_reference(RowsView(p, 80, 2), 2, seed);
        ASSERT_EQ(r.partition.num_clusters, 2u);
        const auto l0 = r.partition.labels[0];
        for (std::size_t i = 0; i < 80; ++i)
            EXPECT_EQ(r.partition.labels[i] == l0, truth[i] == truth[0]);
    }
}

TEST(KMeansReference, KOutOfRange) {
    const auto p = planar({0, 90});
    EXPECT_THROW(protoad::kmeans_reference(RowsView(p, 2, 2), 0, 1), protoad::InvalidArgument);
    EXPECT_THROW(protoad::kmeans_reference(RowsView(p, 2, 2), 3, 1), protoad::InvalidArgument);
}
