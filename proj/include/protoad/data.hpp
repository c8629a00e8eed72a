#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "protoad/error.hpp"
#include "protoad/grid.hpp"
#include "protoad/parallel.hpp"
#include "protoad/scoring.hpp"
#include "protoad/tensor.hpp"

namespace protoad {

namespace fs = std::filesystem;

// Dataset layout (MVTec convention with feature tensors in place of images):
//   <root>/<category>/train/good/*.pft
//   <root>/<category>/test/<defect_type>/*.pft       ("good" = normal)
//   <root>/<category>/ground_truth/<defect_type>/<stem>_mask.pft   (C = 1, 0/1)

struct TestItem {
    fs::path tensor;
    std::string defect_type;
    bool anomalous = false;
    std::optional<fs::path> mask;
};

struct DatasetIndex {
    std::string category;
    fs::path root;
    std::vector<fs::path> train;
    std::vector<TestItem> test;
    /// Side of the square output maps that masks are compared at.
    std::size_t image_size = 224;

    std::size_t anomalous_count() const {
        return static_cast<std::size_t>(
            std::count_if(test.begin(), test.end(), [](const TestItem& t) { return t.anomalous; }));
    }
};

/// Shape from a ".pft" header; throws on a malformed header or a file size
/// that does not match it.
inline std::array<std::size_t, 3> probe_tensor(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::uint8_t header[24];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    const auto got = static_cast<std::size_t>(in.gcount());
    io::Reader r(std::span<const std::uint8_t>(header, got));
    try {
        if (r.bytes(kTensorMagic.size(), "magic") != kTensorMagic)
            throw FormatError("bad feature tensor magic", 0);
        const auto h = r.u32("height"), w = r.u32("width"), c = r.u32("channels");
        if (h == 0 || w == 0 || c == 0) throw FormatError("zero dimension", 8);
        if (r.u32("dtype") != kDtypeF32) throw FormatError("unsupported dtype code", 20);
        const auto size = fs::file_size(path);
        const std::uint64_t expect = 24 + std::uint64_t(h) * w * c * 4;
        if (size < expect) throw TruncationError("payload shorter than header declares", size);
        if (size > expect) throw FormatError("trailing bytes after payload", expect);
        return {h, w, c};
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.message(), e.offset());
    }
}

namespace detail {

inline std::vector<fs::path> list_tensors(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pft") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Scans and validates one category. Tensor headers are checked; masks are
/// only located here and read by load_mask.
inline DatasetIndex load_dataset(const fs::path& root, const std::string& category,
                                 std::size_t image_size = 224) {
    const fs::path base = root / category;
    if (!fs::is_directory(base)) throw IoError("category directory not found: " + base.string());
    DatasetIndex idx;
    idx.category = category;
    idx.root = root;
    idx.image_size = image_size;
    idx.train = detail::list_tensors(base / "train" / "good");
    if (idx.train.empty()) throw InvalidArgument("empty train set: " + (base / "train" / "good").string());
    for (const auto& p : idx.train) probe_tensor(p);

    std::vector<fs::path> defect_dirs;
    if (fs::is_directory(base / "test"))
        for (const auto& e : fs::directory_iterator(base / "test"))
            if (e.is_directory()) defect_dirs.push_back(e.path());
    std::sort(defect_dirs.begin(), defect_dirs.end());
    for (const auto& dir : defect_dirs) {
        const std::string defect = dir.filename().string();
        for (const auto& p : detail::list_tensors(dir)) {
            probe_tensor(p);
            TestItem item{p, defect, defect != "good", std::nullopt};
            if (item.anomalous) {
                const fs::path mask = base / "ground_truth" / defect / (p.stem().string() + "_mask.pft");
                if (!fs::is_regular_file(mask))
                    throw InvalidArgument("anomalous item " + p.string() + " has no mask (expected " +
                                          mask.string() + ")");
                item.mask = mask;
            }
            idx.test.push_back(std::move(item));
        }
    }
    return idx;
}

/// Nearest-neighbour resize of a binary mask.
inline Mask resize_nearest(const Mask& m, std::size_t out_h, std::size_t out_w) {
    if (m.height == out_h && m.width == out_w) return m;
    Mask out(out_h, out_w);
    for (std::size_t i = 0; i < out_h; ++i) {
        const auto si = std::min(m.height - 1, ((2 * i + 1) * m.height) / (2 * out_h));
        for (std::size_t j = 0; j < out_w; ++j) {
            const auto sj = std::min(m.width - 1, ((2 * j + 1) * m.width) / (2 * out_w));
            out.at(i, j) = m.at(si, sj);
        }
    }
    return out;
}

/// Reads a C = 1 0/1 mask tensor and brings it to out_h×out_w.
inline Mask load_mask(const fs::path& path, std::size_t out_h, std::size_t out_w) {
    const FeatureTensor t = read_tensor(path);
    if (t.channels() != 1) throw InvalidArgument(path.string() + ": mask must have one channel");
    Mask m(t.height(), t.width());
    for (std::size_t k = 0; k < m.size(); ++k) {
        const float v = t.data()[k];
        if (v != 0.0f && v != 1.0f) throw InvalidArgument(path.string() + ": mask is not binary");
        m.values[k] = v != 0.0f;
    }
    if ((t.height() != out_h || t.width() != out_w) && (t.height() > out_h || t.width() > out_w))
        throw DimensionError(path.string() + ": mask " + t.shape_string() + " exceeds output size");
    return resize_nearest(m, out_h, out_w);
}

/// Parameters of the feature-space synthetic dataset.
struct SynthConfig {
    std::uint64_t seed = 7;
    std::string category = "synthetic";
    std::size_t n_train = 40;
    std::size_t n_test_normal = 20;
    std::size_t n_test_anomalous = 20;
    std::size_t grid_h = 32;
    std::size_t grid_w = 32;
    std::size_t channels = 64;
    std::size_t latent_directions = 8;
    /// Blur (in cells) of the random fields that choose each cell's direction.
    double smoothness = 2.0;
    double jitter = 0.1;
    std::size_t defect_min = 3;
    std::size_t defect_max = 8;
    /// Rotation of defect cells away from their source vector, degrees.
    double shift_degrees = 45.0;

    void validate() const {
        if (n_train < 1) throw InvalidArgument("n_train must be at least 1");
        if (n_test_anomalous > 0 && n_test_normal < 1)
            throw InvalidArgument("anomalous items need at least one normal test item as source");
        if (grid_h < 1 || grid_w < 1 || channels < 1) throw InvalidArgument("grid and channels must be positive");
        if (latent_directions < 1 || latent_directions > channels)
            throw InvalidArgument("latent_directions must lie in [1, channels]");
        if (defect_min < 1 || defect_min > defect_max || defect_max > std::min(grid_h, grid_w))
            throw InvalidArgument("defect size range must satisfy 1 <= min <= max <= grid");
        if (!(smoothness > 0.0) || !(jitter >= 0.0)) throw InvalidArgument("smoothness/jitter out of range");
        if (!(shift_degrees >= 0.0 && shift_degrees <= 90.0))
            throw InvalidArgument("shift_degrees must lie in [0, 90]");
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded generator with platform-independent uniform and normal draws.
class SynthRng {
public:
    SynthRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
        : state_(splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return splitmix64(state_);
    }
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * double(n)); }
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * uniform());
    }

private:
    std::uint64_t state_;
};

enum Stream : std::uint64_t { kLatent = 1, kTrain = 2, kTestNormal = 3, kTestAnomalous = 4 };

inline void normalize(std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double n = std::sqrt(sq);
    for (double& x : v) x /= n;
}

inline RowMatrix latent_basis(const SynthConfig& cfg) {
    SynthRng rng(cfg.seed, kLatent, 0);
    std::vector<std::vector<double>> basis;
    while (basis.size() < cfg.latent_directions) {
        std::vector<double> v(cfg.channels);
        for (double& x : v) x = rng.normal();
        for (const auto& b : basis) {
            double d = 0.0;
            for (std::size_t c = 0; c < v.size(); ++c) d += v[c] * b[c];
            for (std::size_t c = 0; c < v.size(); ++c) v[c] -= d * b[c];
        }
        double sq = 0.0;
        for (double x : v) sq += x * x;
        if (sq < 1e-6) continue;
        normalize(v);
        basis.push_back(std::move(v));
    }
    RowMatrix out(basis.size(), cfg.channels);
    for (std::size_t r = 0; r < basis.size(); ++r)
        for (std::size_t c = 0; c < cfg.channels; ++c) out.row(r)[c] = static_cast<float>(basis[r][c]);
    return out;
}

/// Normal sample: each cell takes the latent direction whose smoothed random
/// field is largest there, plus Gaussian jitter, renormalized.
inline FeatureTensor normal_sample(const SynthConfig& cfg, const RowMatrix& basis, SynthRng rng) {
    const std::size_t h = cfg.grid_h, w = cfg.grid_w, c = cfg.channels;
    std::vector<ScalarMap> fields;
    for (std::size_t d = 0; d < basis.rows; ++d) {
        ScalarMap f(h, w);
        for (auto& v : f.values) v = static_cast<float>(rng.normal());
        fields.push_back(gaussian_blur(f, cfg.smoothness));
    }
    FeatureTensor t(h, w, c);
    std::vector<double> v(c);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            std::size_t pick = 0;
            for (std::size_t d = 1; d < fields.size(); ++d)
                if (fields[d].at(i, j) > fields[pick].at(i, j)) pick = d;
            const auto dir = basis.row(pick);
            for (std::size_t k = 0; k < c; ++k) v[k] = dir[k] + cfg.jitter * rng.normal();
            normalize(v);
            auto cell = t.cell(i, j);
            for (std::size_t k = 0; k < c; ++k) cell[k] = static_cast<float>(v[k]);
        }
    return t;
}

/// Copies `source` and rotates every cell of a random rectangle by the
/// configured angle towards a random orthogonal direction, rejecting
/// rotations that land closer than that angle to any latent direction.
inline std::pair<FeatureTensor, Mask> anomalous_sample(const SynthConfig& cfg, const RowMatrix& basis,
                                                       const FeatureTensor& source, SynthRng rng) {
    const std::size_t h = cfg.grid_h, w = cfg.grid_w, c = cfg.channels;
    const std::size_t span = cfg.defect_max - cfg.defect_min + 1;
    const std::size_t dh = cfg.defect_min + rng.below(span);
    const std::size_t dw = cfg.defect_min + rng.below(span);
    const std::size_t r0 = rng.below(h - dh + 1);
    const std::size_t c0 = rng.below(w - dw + 1);

    FeatureTensor out = source;
    Mask mask(h, w);
    const double theta = cfg.shift_degrees * std::numbers::pi / 180.0;
    const double cos_limit = std::cos(theta) + 1e-9;
    std::vector<double> x(c), u(c), v(c);
    for (std::size_t i = r0; i < r0 + dh; ++i)
        for (std::size_t j = c0; j < c0 + dw; ++j) {
            mask.at(i, j) = 1;
            if (cfg.shift_degrees == 0.0) continue;
            const auto src = source.cell(i, j);
            for (std::size_t k = 0; k < c; ++k) x[k] = src[k];
            normalize(x);
            for (int attempt = 0;; ++attempt) {
                if (attempt == 100000)
                    throw InvalidArgument("could not place a defect vector at the requested shift");
                for (auto& e : u) e = rng.normal();
                double d = 0.0;
                for (std::size_t k = 0; k < c; ++k) d += u[k] * x[k];
                for (std::size_t k = 0; k < c; ++k) u[k] -= d * x[k];
                normalize(u);
                for (std::size_t k = 0; k < c; ++k) v[k] = std::cos(theta) * x[k] + std::sin(theta) * u[k];
                bool ok = true;
                for (std::size_t b = 0; b < basis.rows && ok; ++b) {
                    double cosv = 0.0;
                    for (std::size_t k = 0; k < c; ++k) cosv += v[k] * basis.row(b)[k];
                    ok = cosv <= cos_limit;
                }
                if (ok) break;
            }
            auto cell = out.cell(i, j);
            for (std::size_t k = 0; k < c; ++k) cell[k] = static_cast<float>(v[k]);
        }
    return {std::move(out), mask};
}

inline std::string item_name(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

inline FeatureTensor mask_tensor(const Mask& m) {
    FeatureTensor t(m.height, m.width, 1);
    for (std::size_t k = 0; k < m.size(); ++k) t.data()[k] = m.values[k] ? 1.0f : 0.0f;
    return t;
}

}  // namespace detail

/// Writes a synthetic category under out_root/<category> and returns its
/// index. Anomalous item i is derived from normal test item i mod
/// n_test_normal; the pairing is listed in synth_manifest.txt.
inline DatasetIndex synth_generate(const SynthConfig& cfg, const fs::path& out_root,
                                   std::size_t workers = 1) {
    cfg.validate();
    const fs::path base = out_root / cfg.category;
    const fs::path train_dir = base / "train" / "good";
    const fs::path good_dir = base / "test" / "good";
    const fs::path bad_dir = base / "test" / "synthetic";
    const fs::path gt_dir = base / "ground_truth" / "synthetic";
    for (const auto& d : {train_dir, good_dir, bad_dir, gt_dir}) fs::create_directories(d);

    const RowMatrix basis = detail::latent_basis(cfg);
    using detail::SynthRng;
    parallel_for(cfg.n_train, workers, [&](std::size_t i, std::size_t) {
        write_tensor(detail::normal_sample(cfg, basis, SynthRng(cfg.seed, detail::kTrain, i)),
                     train_dir / (detail::item_name(i) + ".pft"));
    });
    std::vector<FeatureTensor> normals(cfg.n_test_normal);
    parallel_for(cfg.n_test_normal, workers, [&](std::size_t i, std::size_t) {
        normals[i] = detail::normal_sample(cfg, basis, SynthRng(cfg.seed, detail::kTestNormal, i));
        write_tensor(normals[i], good_dir / (detail::item_name(i) + ".pft"));
    });
    parallel_for(cfg.n_test_anomalous, workers, [&](std::size_t i, std::size_t) {
        const auto [t, mask] = detail::anomalous_sample(cfg, basis, normals[i % cfg.n_test_normal],
                                                        SynthRng(cfg.seed, detail::kTestAnomalous, i));
        write_tensor(t, bad_dir / (detail::item_name(i) + ".pft"));
        write_tensor(detail::mask_tensor(mask), gt_dir / (detail::item_name(i) + "_mask.pft"));
    });

    std::ofstream manifest(base / "synth_manifest.txt");
    manifest << "seed=" << cfg.seed << "\nshift_degrees=" << cfg.shift_degrees
             << "\ngrid=" << cfg.grid_h << "x" << cfg.grid_w << "\nchannels=" << cfg.channels << '\n';
    for (std::size_t i = 0; i < cfg.n_test_anomalous; ++i)
        manifest << "test/synthetic/" << detail::item_name(i) << ".pft source=test/good/"
                 << detail::item_name(i % cfg.n_test_normal) << ".pft\n";
    if (!manifest) throw IoError("cannot write " + (base / "synth_manifest.txt").string());
    manifest.close();

    return load_dataset(out_root, cfg.category);
}

}  // namespace protoad
