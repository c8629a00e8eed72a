#pragma once

// Fit and evaluation drivers shared by the CLI and the acceptance suite.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "protoad/data.hpp"
#include "protoad/finch.hpp"
#include "protoad/metrics.hpp"
#include "protoad/prototype.hpp"
#include "protoad/scoring.hpp"
#include "protoad/tensor.hpp"

namespace protoad {

struct RunConfig {
    std::size_t max_clusters = 10000;
    double sigma = 4.0;
    std::size_t out_size = 224;
    /// Informational: which backbone stages the tensors were built from.
    std::string feature_levels = "1,2,3";
    /// 0 = hardware concurrency. Results do not depend on it.
    std::size_t workers = 0;
    /// Ablation: take this hierarchy level instead of the threshold rule.
    std::optional<std::size_t> force_level;
    /// Ablation: k-means with this k instead of the first-neighbour hierarchy.
    std::size_t kmeans_k = 0;
    std::uint64_t seed = 7;

    PostprocessConfig postprocess() const { return {out_size, out_size, sigma}; }
};

struct FitReport {
    std::size_t n_images = 0;
    std::size_t n_vectors = 0;
    std::size_t zero_excluded = 0;
    std::vector<std::size_t> level_counts;
    std::size_t selected_level = 0;
    bool fallback = false;
    std::size_t prototypes = 0;
    double seconds = 0.0;

    std::string to_text() const {
        std::ostringstream os;
        os << "images=" << n_images << "\nvectors=" << n_vectors << "\nzero_excluded=" << zero_excluded
           << '\n';
        for (std::size_t l = 0; l < level_counts.size(); ++l)
            os << "level_" << l << "_clusters=" << level_counts[l] << '\n';
        os << "selected_level=" << selected_level << "\nselection_fallback=" << (fallback ? 1 : 0)
           << "\nprototypes=" << prototypes << "\nseconds=" << std::fixed << std::setprecision(3)
           << seconds << '\n';
        return os.str();
    }
};

struct FitResult {
    PrototypeBank bank;
    FitReport report;
};

/// Pools the normalized patch vectors of every training tensor (zero-norm
/// cells excluded), clusters them and builds the prototype bank.
inline FitResult fit_bank(const DatasetIndex& data, const RunConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    FitResult res;
    res.report.n_images = data.train.size();
    std::vector<float> pooled;
    std::size_t dim = 0;
    for (const auto& path : data.train) {
        const FeatureTensor t = read_tensor(path);
        if (dim == 0) dim = t.channels();
        if (t.channels() != dim)
            throw DimensionError(path.string() + ": has " + std::to_string(t.channels()) +
                                 " channels, expected " + std::to_string(dim));
        const NormalizeResult n = l2_normalize(t);
        res.report.zero_excluded += n.zero_count;
        for (std::size_t k = 0; k < t.cells(); ++k)
            if (!n.zero_mask[k]) {
                const auto v = n.tensor.data().subspan(k * dim, dim);
                pooled.insert(pooled.end(), v.begin(), v.end());
            }
    }
    const std::size_t n = dim == 0 ? 0 : pooled.size() / dim;
    if (n == 0) throw InvalidArgument("training set has no non-zero patch vectors");
    res.report.n_vectors = n;
    const RowsView points(pooled, n, dim);

    BankMeta meta{{"category", data.category},
                  {"feature_levels", cfg.feature_levels},
                  {"max_clusters", std::to_string(cfg.max_clusters)},
                  {"vectors", std::to_string(n)}};
    Partition chosen;
    if (n == 1) {
        chosen = make_partition(points, Labels{{0}, 1});
        res.report.level_counts = {1};
        meta["clusterer"] = "single";
    } else if (cfg.kmeans_k > 0) {
        KMeansOptions ko;
        ko.workers = cfg.workers;
        auto km = kmeans_reference(points, std::min(cfg.kmeans_k, n), cfg.seed, ko);
        chosen = std::move(km.partition);
        res.report.level_counts = {chosen.num_clusters};
        meta["clusterer"] = "kmeans";
        meta["kmeans_k"] = std::to_string(cfg.kmeans_k);
        meta["kmeans_seed"] = std::to_string(cfg.seed);
    } else {
        FinchOptions fo;
        fo.workers = cfg.workers;
        PartitionHierarchy h = finch(points, fo);
        res.report.level_counts = h.cluster_counts();
        PartitionSelection sel = select_partition(h, cfg.max_clusters);
        if (cfg.force_level) {
            if (*cfg.force_level >= h.levels.size())
                throw InvalidArgument("hierarchy has only " + std::to_string(h.levels.size()) + " levels");
            sel = {*cfg.force_level, false};
        }
        res.report.selected_level = sel.level;
        res.report.fallback = sel.fallback;
        chosen = std::move(h.levels[sel.level]);
        meta["clusterer"] = "finch";
        std::string counts;
        for (auto c : res.report.level_counts) counts += (counts.empty() ? "" : ",") + std::to_string(c);
        meta["hierarchy_counts"] = counts;
        meta["source_level"] = std::to_string(sel.level);
    }
    res.bank = build_bank(points, chosen, std::move(meta), cfg.workers);
    res.report.prototypes = res.bank.size();
    res.report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

struct ItemScore {
    std::filesystem::path tensor;
    bool anomalous = false;
    float image_score = 0.0f;
};

struct EvalResult {
    EvalReport report;
    std::vector<ItemScore> items;
};

/// Scores every test item and computes image AUROC, pooled pixel AUROC and
/// PRO at the configured output size.
inline EvalResult evaluate(const DatasetIndex& data, const PrototypeBank& bank, const RunConfig& cfg,
                           double fpr_limit = 0.3, std::size_t pro_thresholds = 200) {
    const std::size_t n = data.test.size();
    const std::size_t anomalous = data.anomalous_count();
    if (n == 0 || anomalous == 0 || anomalous == n)
        throw InvalidArgument("evaluation needs both normal and anomalous test items (have " +
                              std::to_string(n - anomalous) + " normal, " + std::to_string(anomalous) +
                              " anomalous)");
    const PostprocessConfig post = cfg.postprocess();
    std::vector<ScalarMap> maps(n);
    std::vector<Mask> masks(n);
    EvalResult res;
    res.items.resize(n);
    parallel_for(n, cfg.workers, [&](std::size_t k, std::size_t) {
        const TestItem& item = data.test[k];
        const FeatureTensor t = read_tensor(item.tensor);
        if (t.channels() != bank.dim())
            throw DimensionError(item.tensor.string() + ": has " + std::to_string(t.channels()) +
                                 " channels, bank has " + std::to_string(bank.dim()));
        ScoreMap s = score_image(t, bank, post, 1);
        res.items[k] = {item.tensor, item.anomalous, s.image_score};
        maps[k] = std::move(s.pixels);
        masks[k] = item.mask ? load_mask(*item.mask, post.out_height, post.out_width)
                             : Mask(post.out_height, post.out_width);
    });

    std::vector<float> image_scores;
    std::vector<std::uint8_t> image_labels;
    for (const auto& it : res.items) {
        image_scores.push_back(it.image_score);
        image_labels.push_back(it.anomalous);
    }
    EvalReport& r = res.report;
    r.image_auroc = auroc(image_scores, image_labels);
    r.pixel_auroc = pixel_auroc(maps, masks);
    const ProResult pro = pro_score(maps, masks, fpr_limit, pro_thresholds);
    r.pro_score = pro.score;
    r.pro_integrated_to = pro.integrated_to;
    r.n_images = n;
    r.n_anomalous_images = anomalous;
    for (const auto& m : masks) {
        r.n_pixels += m.size();
        for (auto v : m.values) r.n_anomalous_pixels += v;
    }
    r.sigma = cfg.sigma;
    r.gaussian_radius = post.radius();
    r.pro_thresholds = pro_thresholds;
    r.fpr_limit = fpr_limit;
    return res;
}

}  // namespace protoad
