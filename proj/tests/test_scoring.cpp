#include <gtest/gtest.h>

#include <zlib.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "scratch.hpp"
#include "protoad/binary_io.hpp"
#include "protoad/image_io.hpp"
#include "protoad/scoring.hpp"

using protoad::FeatureTensor;
using protoad::PrototypeBank;
using protoad::ScalarMap;

namespace {

PrototypeBank bank_of(std::vector<float> rows, std::size_t k, std::size_t dim) {
    PrototypeBank b;
    b.kernels = protoad::RowMatrix(k, dim);
    b.kernels.data = std::move(rows);
    return b;
}

PrototypeBank basis_bank(std::size_t k, std::size_t dim) {
    std::vector<float> rows(k * dim, 0.0f);
    for (std::size_t i = 0; i < k; ++i) rows[i * dim + i] = 1.0f;
    return bank_of(rows, k, dim);
}

protoad::PostprocessConfig cfg(std::size_t out, double sigma) {
    protoad::PostprocessConfig c;
    c.out_height = c.out_width = out;
    c.sigma = sigma;
    return c;
}

}  // namespace

TEST(SimilarityTensor, SelfSimilarityChannel) {
    const auto bank = basis_bank(5, 5);
    FeatureTensor f(3, 4, 5);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) f.at(i, j, 3) = 1.0f;
    const auto sim = protoad::similarity_tensor(f, bank);
    ASSERT_EQ(sim.channels(), 5u);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(sim.at(i, j, 3), 1.0f);
}

TEST(SimilarityTensor, OrthogonalFeaturesGiveZero) {
    const auto bank = basis_bank(3, 6);
    FeatureTensor f(2, 2, 6);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) f.at(i, j, 4 + (i + j) % 2) = 1.0f;
    const auto sim = protoad::similarity_tensor(f, bank);
    for (float v : sim.data()) EXPECT_EQ(v, 0.0f);
}

TEST(SimilarityTensor, MatchesTripleLoop) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = oracle::unit_rows(rng, 4, 4);
        const auto m = oracle::unit_rows(rng, 3, 4);
        const FeatureTensor f(2, 2, 4, x);
        const auto sim = protoad::similarity_tensor(f, bank_of(m, 3, 4));
        for (std::size_t cell = 0; cell < 4; ++cell)
            for (std::size_t k = 0; k < 3; ++k) {
                double d = 0.0;
                for (std::size_t c = 0; c < 4; ++c) d += double(x[cell * 4 + c]) * m[k * 4 + c];
                EXPECT_NEAR(sim.data()[cell * 3 + k], d, 1e-6);
            }
    }
}

TEST(SimilarityTensor, DimensionMismatchThrows) {
    EXPECT_THROW(protoad::similarity_tensor(FeatureTensor(2, 2, 4), basis_bank(2, 3)), protoad::DimensionError);
}

TEST(ChannelMaxPool, SingleChannelIsIdentity) {
    FeatureTensor sim(2, 3, 1, {0.1f, -0.5f, 0.9f, 0.0f, 1.0f, -1.0f});
    const auto m = protoad::channel_max_pool(sim);
    EXPECT_EQ(m.values, (std::vector<float>{0.1f, -0.5f, 0.9f, 0.0f, 1.0f, -1.0f}));
}

TEST(ChannelMaxPool, PicksLargestChannel) {
    FeatureTensor sim(1, 1, 3, {0.2f, 0.9f, -1.0f});
    EXPECT_EQ(protoad::channel_max_pool(sim).values[0], 0.9f);
}

TEST(ChannelMaxPool, MatchesLoop) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    FeatureTensor sim(7, 5, 11);
    for (auto& v : sim.data()) v = u(rng);
    const auto m = protoad::channel_max_pool(sim);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            float best = -2.0f;
            for (std::size_t k = 0; k < 11; ++k) best = std::max(best, sim.at(i, j, k));
            EXPECT_EQ(m.at(i, j), best);
        }
}

TEST(AnomalyMap, CosineToScore) {
    const auto s = protoad::anomaly_map(ScalarMap(1, 3, std::vector<float>{1.0f, 0.0f, -1.0f}));
    EXPECT_EQ(s.values, (std::vector<float>{0.0f, 1.0f, 2.0f}));
}

TEST(AnomalyMap, ClampsRoundingOvershoot) {
    const auto s = protoad::anomaly_map(ScalarMap(1, 2, std::vector<float>{1.0000001f, -1.0000001f}));
    EXPECT_EQ(s.values, (std::vector<float>{0.0f, 2.0f}));
}

TEST(Postprocess, ConstantMapPreserved) {
    const auto out = protoad::postprocess(ScalarMap(4, 4, 0.75f), cfg(32, 4.0));
    for (float v : out.values) EXPECT_NEAR(v, 0.75f, 1e-6f);
}

TEST(Postprocess, HotPixelIsSpread) {
    ScalarMap m(16, 16, 0.0f);
    m.at(7, 9) = 1.0f;
    const auto out = protoad::postprocess(m, cfg(16, 1.0));
    const float peak = *std::max_element(out.values.begin(), out.values.end());
    EXPECT_LT(peak, 1.0f);
    EXPECT_GT(peak, 0.0f);
}

TEST(Postprocess, MatchesDirectConvolution) {
    const ScalarMap m(2, 2, std::vector<float>{0.0f, 1.0f, 2.0f, 0.5f});
    const auto out = protoad::postprocess(m, cfg(8, 1.0));
    const FeatureTensor up = protoad::bilinear_resize(FeatureTensor(2, 2, 1, m.values), 8, 8);
    const auto expect =
        oracle::direct_gaussian(ScalarMap(8, 8, std::vector<float>(up.data().begin(), up.data().end())), 1.0);
    for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(out.values[k], expect.values[k], 1e-5);
}

TEST(Postprocess, BlurMatchesDirectConvolutionOnRandomMaps) {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<float> u(0.0f, 2.0f);
    for (double sigma : {0.5, 1.0, 2.5, 4.0}) {
        ScalarMap m(9, 13);
        for (auto& v : m.values) v = u(rng);
        const auto a = protoad::gaussian_blur(m, sigma);
        const auto b = oracle::direct_gaussian(m, sigma);
        for (std::size_t k = 0; k < m.size(); ++k) EXPECT_NEAR(a.values[k], b.values[k], 1e-5);
    }
}

TEST(Postprocess, DefaultRadiusAndRejections) {
    EXPECT_EQ(protoad::PostprocessConfig{}.radius(), 12u);
    EXPECT_THROW(protoad::postprocess(ScalarMap(4, 4), cfg(2, 4.0)), protoad::InvalidArgument);
    EXPECT_THROW(protoad::postprocess(ScalarMap(4, 4), cfg(8, 0.0)), protoad::InvalidArgument);
}

TEST(ImageScore, Cases) {
    EXPECT_EQ(protoad::image_score(ScalarMap(3, 3, 0.0f)), 0.0f);
    ScalarMap m(3, 3, 0.0f);
    m.at(2, 1) = 1.7f;
    EXPECT_EQ(protoad::image_score(m), 1.7f);
}

TEST(ImageScore, IsMaxOfPatchScores) {
    std::mt19937_64 rng(15);
    const auto x = oracle::unit_rows(rng, 36, 8);
    const auto m = oracle::unit_rows(rng, 4, 8);
    const auto s = protoad::score_image(FeatureTensor(6, 6, 8, x), bank_of(m, 4, 8), cfg(24, 1.0));
    const auto ref = oracle::exhaustive_patch_scores(x, 36, m, 4, 8);
    EXPECT_NEAR(s.image_score, *std::max_element(ref.begin(), ref.end()), 1e-6);
}

TEST(ScoreImage, PrototypeFeaturesScoreZero) {
    const auto bank = basis_bank(4, 4);
    FeatureTensor f(4, 4, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) f.at(i, j, (i * 4 + j) % 4) = 2.5f;
    const auto s = protoad::score_image(f, bank, cfg(16, 4.0));
    EXPECT_EQ(s.image_score, 0.0f);
    for (float v : s.pixels.values) EXPECT_EQ(v, 0.0f);
}

TEST(ScoreImage, ZeroCellsScoreOne) {
    const auto bank = basis_bank(2, 3);
    FeatureTensor f(2, 2, 3);
    f.at(0, 0, 0) = 1.0f;
    f.at(1, 1, 1) = 1.0f;
    const auto s = protoad::score_image(f, bank, cfg(4, 1.0));
    EXPECT_EQ(s.zero_cells, 2u);
    EXPECT_EQ(s.patch.at(0, 1), 1.0f);
    EXPECT_EQ(s.patch.at(1, 0), 1.0f);
    EXPECT_EQ(s.patch.at(0, 0), 0.0f);
}

TEST(ScoreImage, EqualsExhaustiveNearestPrototype) {
    std::mt19937_64 rng(16);
    std::normal_distribution<float> nd;
    for (std::size_t k : {1u, 5u, 50u, 130u}) {
        std::vector<float> x(8 * 8 * 32);
        for (auto& v : x) v = nd(rng);  // not normalized: score_image normalizes
        const auto m = oracle::unit_rows(rng, k, 32);
        const auto s = protoad::score_image(FeatureTensor(8, 8, 32, x), bank_of(m, k, 32), cfg(8, 1.0));
        const auto ref = oracle::exhaustive_patch_scores(x, 64, m, k, 32);
        for (std::size_t c = 0; c < 64; ++c) EXPECT_NEAR(s.patch.values[c], ref[c], 1e-6) << "k=" << k;
    }
}

TEST(ScoreImage, HalfSquaredDistanceEqualsOneMinusCosine) {
    std::mt19937_64 rng(17);
    for (std::size_t dim : {2u, 8u, 64u, 1792u}) {
        const auto v = oracle::unit_rows(rng, 200, dim);
        for (std::size_t p = 0; p + 1 < 200; p += 2) {
            const float* a = &v[p * dim];
            const float* b = &v[(p + 1) * dim];
            double d2 = 0.0, ab = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                d2 += (double(a[c]) - b[c]) * (double(a[c]) - b[c]);
                ab += double(a[c]) * b[c];
            }
            EXPECT_LT(std::abs(0.5 * d2 - (1.0 - ab)), 1e-6);
        }
    }
}

TEST(ScoreImage, AddingPrototypeNeverRaisesScores) {
    std::mt19937_64 rng(18);
    const auto x = oracle::unit_rows(rng, 25, 6);
    auto m = oracle::unit_rows(rng, 3, 6);
    const FeatureTensor f(5, 5, 6, x);
    const auto before = protoad::score_image(f, bank_of(m, 3, 6), cfg(5, 1.0));
    const auto extra = oracle::unit_rows(rng, 1, 6);
    m.insert(m.end(), extra.begin(), extra.end());
    const auto after = protoad::score_image(f, bank_of(m, 4, 6), cfg(5, 1.0));
    for (std::size_t c = 0; c < 25; ++c) EXPECT_LE(after.patch.values[c], before.patch.values[c]);
    EXPECT_LE(after.image_score, before.image_score);
}

TEST(ScoreImage, OutputsStayInRange) {
    std::mt19937_64 rng(19);
    const auto x = oracle::unit_rows(rng, 16, 3);
    const auto m = oracle::unit_rows(rng, 2, 3);
    const auto s = protoad::score_image(FeatureTensor(4, 4, 3, x), bank_of(m, 2, 3), cfg(20, 2.0));
    for (float v : s.patch.values) EXPECT_TRUE(v >= 0.0f && v <= 2.0f);
    for (float v : s.pixels.values) EXPECT_TRUE(v >= 0.0f && v <= 2.0f);
    EXPECT_EQ(s.pixels.height, 20u);
}

TEST(ScoreImage, WorkerCountInvariant) {
    std::mt19937_64 rng(20);
    const auto x = oracle::unit_rows(rng, 32 * 32, 64);
    const auto m = oracle::unit_rows(rng, 300, 64);
    const FeatureTensor f(32, 32, 64, x);
    const auto a = protoad::score_image(f, bank_of(m, 300, 64), cfg(64, 4.0), 1);
    const auto b = protoad::score_image(f, bank_of(m, 300, 64), cfg(64, 4.0), 4);
    EXPECT_EQ(a.patch, b.patch);
    EXPECT_EQ(a.pixels, b.pixels);
}

TEST(Heatmap, GrayLevels) {
    const auto g = protoad::heatmap_levels(ScalarMap(1, 4, std::vector<float>{0.0f, 1.0f, 2.0f, 0.5f}));
    EXPECT_EQ(g.values, (std::vector<std::uint8_t>{0, 128, 255, 64}));
}

TEST(Heatmap, PngDecodesToSamePixels) {
    protoad::Grid<std::uint8_t> img(3, 5);
    for (std::size_t k = 0; k < img.size(); ++k) img.values[k] = std::uint8_t(k * 17);
    const auto png = protoad::encode_png(img);
    const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    ASSERT_TRUE(std::equal(sig, sig + 8, png.begin()));

    // Walk chunks, collect IDAT, then inflate the filtered scanlines.
    std::vector<std::uint8_t> idat;
    std::size_t at = 8;
    while (at + 12 <= png.size()) {
        const std::uint32_t len = std::uint32_t(png[at]) << 24 | std::uint32_t(png[at + 1]) << 16 |
                                  std::uint32_t(png[at + 2]) << 8 | png[at + 3];
        const std::string type(png.begin() + at + 4, png.begin() + at + 8);
        const std::uint32_t crc = ::crc32(::crc32(0, nullptr, 0), &png[at + 4], len + 4);
        const std::uint32_t stored = std::uint32_t(png[at + 8 + len]) << 24 | std::uint32_t(png[at + 9 + len]) << 16 |
                                     std::uint32_t(png[at + 10 + len]) << 8 | png[at + 11 + len];
        EXPECT_EQ(crc, stored) << type;
        if (type == "IHDR") {
            EXPECT_EQ(png[at + 8 + 8], 8);  // bit depth
        }
        if (type == "IDAT") idat.insert(idat.end(), png.begin() + at + 8, png.begin() + at + 8 + len);
        at += 12 + len;
    }
    std::vector<std::uint8_t> raw(3 * 6);
    uLongf raw_len = raw.size();
    ASSERT_EQ(::uncompress(raw.data(), &raw_len, idat.data(), idat.size()), Z_OK);
    ASSERT_EQ(raw_len, raw.size());
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(raw[i * 6], 0);
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(raw[i * 6 + 1 + j], img.at(i, j));
    }
}

TEST(Heatmap, PgmLayout) {
    const auto path = testing_scratch::dir("pgm") / "heatmap.pgm";
    protoad::write_pgm(protoad::Grid<std::uint8_t>(2, 3, std::uint8_t{7}), path);
    const auto bytes = protoad::io::read_file(path);
    const std::string header = "P5\n3 2\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 6);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
}
