// protoad: prototype-bank anomaly detection over feature tensors.
//
//   protoad synth --out DIR [--seed N] [--shift DEG] [--force]
//   protoad fit   --root DIR --category NAME --out DIR
//   protoad score --bank FILE --tensor FILE --out DIR
//   protoad eval  --root DIR --category NAME --bank FILE --out DIR
//   protoad inspect-bank FILE

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "protoad/protoad.hpp"

namespace fs = std::filesystem;

namespace {

void configure_logging() {
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("PROTOAD_LOG")) {
        const std::string level = env;
        if (level == "error")
            spdlog::set_level(spdlog::level::err);
        else if (level == "debug")
            spdlog::set_level(spdlog::level::debug);
        else if (level != "info")
            spdlog::warn("ignoring PROTOAD_LOG={} (expected error, info or debug)", level);
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw protoad::IoError("cannot write " + path.string());
}

/// Refuses a non-empty directory unless forced.
void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw protoad::InvalidArgument("output directory " + dir.string() +
                                       " exists and is not empty (use --force)");
    fs::create_directories(dir);
}

std::string run_meta(const protoad::RunConfig& cfg) {
    std::ostringstream os;
    os << "max_clusters=" << cfg.max_clusters << "\nsigma=" << cfg.sigma << "\nout_size=" << cfg.out_size
       << "\nfeature_levels=" << cfg.feature_levels << '\n';
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();

    CLI::App app{"Prototype-bank anomaly detection and localization on feature tensors"};
    app.require_subcommand(1);

    protoad::RunConfig cfg;
    std::string root, category = "synthetic", out, bank_path, tensor_path;
    bool force = false;
    auto add_run_flags = [&](CLI::App* cmd) {
        cmd->add_option("--max-clusters", cfg.max_clusters, "Cluster-count threshold for partition selection")
            ->capture_default_str();
        cmd->add_option("--sigma", cfg.sigma, "Gaussian smoothing sigma in output pixels")->capture_default_str();
        cmd->add_option("--out-size", cfg.out_size, "Side of the square output score map")->capture_default_str();
        cmd->add_option("--workers", cfg.workers, "Worker threads (0 = all cores)")->capture_default_str();
        cmd->add_option("--feature-levels", cfg.feature_levels, "Backbone stages the tensors came from (recorded only)")
            ->capture_default_str();
    };

    auto* fit = app.add_subcommand("fit", "Learn a prototype bank from train/good");
    fit->add_option("--root", root, "Dataset root")->required();
    fit->add_option("--category", category, "Category directory under the root")->capture_default_str();
    fit->add_option("--out", out, "Output directory for the bank and fit report")->required();
    fit->add_option("--level", cfg.force_level, "Use this hierarchy level instead of the threshold rule");
    fit->add_option("--kmeans", cfg.kmeans_k, "Cluster with k-means (this k) instead of the hierarchy");
    fit->add_option("--seed", cfg.seed, "Seed for --kmeans initialization")->capture_default_str();
    add_run_flags(fit);

    auto* score = app.add_subcommand("score", "Score one tensor against a bank");
    score->add_option("--bank", bank_path, "Bank file (.ptb)")->required();
    score->add_option("--tensor", tensor_path, "Feature tensor (.pft)")->required();
    score->add_option("--out", out, "Output directory for heatmap and raw map")->required();
    bool pgm = false;
    score->add_flag("--pgm", pgm, "Write the heatmap as PGM instead of PNG");
    add_run_flags(score);

    auto* eval = app.add_subcommand("eval", "Evaluate a bank on the test split");
    eval->add_option("--root", root, "Dataset root")->required();
    eval->add_option("--category", category, "Category directory under the root")->capture_default_str();
    eval->add_option("--bank", bank_path, "Bank file (.ptb)")->required();
    eval->add_option("--out", out, "Output directory for the report")->required();
    add_run_flags(eval);

    protoad::SynthConfig synth_cfg;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic feature-space dataset");
    synth->add_option("--out", out, "Dataset root to create")->required();
    synth->add_option("--category", synth_cfg.category, "Category name")->capture_default_str();
    synth->add_option("--seed", synth_cfg.seed, "Generator seed")->capture_default_str();
    synth->add_option("--train", synth_cfg.n_train, "Training images")->capture_default_str();
    synth->add_option("--test-normal", synth_cfg.n_test_normal, "Normal test images")->capture_default_str();
    synth->add_option("--test-anomalous", synth_cfg.n_test_anomalous, "Anomalous test images")->capture_default_str();
    synth->add_option("--grid", synth_cfg.grid_h, "Grid side (square)")->capture_default_str();
    synth->add_option("--channels", synth_cfg.channels, "Feature channels")->capture_default_str();
    synth->add_option("--shift", synth_cfg.shift_degrees, "Defect rotation in degrees")->capture_default_str();
    synth->add_flag("--force", force, "Write into a non-empty directory");
    synth->add_option("--workers", cfg.workers, "Worker threads (0 = all cores)")->capture_default_str();

    auto* inspect = app.add_subcommand("inspect-bank", "Print K, C and metadata of a bank");
    inspect->add_option("bank", bank_path, "Bank file (.ptb)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*fit) {
            const auto data = protoad::load_dataset(root, category, cfg.out_size);
            spdlog::info("fitting {} on {} training tensors", category, data.train.size());
            const auto res = protoad::fit_bank(data, cfg);
            fs::create_directories(out);
            const fs::path bank_file = fs::path(out) / (category + ".ptb");
            protoad::save_bank(res.bank, bank_file);
            write_text(fs::path(out) / "fit_report.txt", res.report.to_text() + run_meta(cfg));
            std::printf("vectors: %zu (zero-norm excluded: %zu)\n", res.report.n_vectors,
                        res.report.zero_excluded);
            for (std::size_t l = 0; l < res.report.level_counts.size(); ++l)
                std::printf("level %zu: %zu clusters\n", l, res.report.level_counts[l]);
            std::printf("selected level: %zu%s\n", res.report.selected_level,
                        res.report.fallback ? " (no level below threshold; took the last)" : "");
            std::printf("prototypes: %zu\nwall time: %.3f s\nbank: %s\n", res.report.prototypes,
                        res.report.seconds, bank_file.string().c_str());
            if (res.report.fallback)
                spdlog::warn("no partition has fewer than {} clusters", cfg.max_clusters);
        } else if (*score) {
            const auto bank = protoad::load_bank(bank_path);
            const auto tensor = protoad::read_tensor(tensor_path);
            const auto s = protoad::score_image(tensor, bank, cfg.postprocess(), cfg.workers);
            fs::create_directories(out);
            const std::string stem = fs::path(tensor_path).stem().string();
            const auto levels = protoad::heatmap_levels(s.pixels);
            if (pgm)
                protoad::write_pgm(levels, fs::path(out) / (stem + "_heatmap.pgm"));
            else
                protoad::write_png(levels, fs::path(out) / (stem + "_heatmap.png"));
            protoad::write_tensor(protoad::FeatureTensor(s.pixels.height, s.pixels.width, 1, s.pixels.values),
                                  fs::path(out) / (stem + "_scores.pft"));
            if (s.zero_cells > 0) spdlog::warn("{} zero-norm cells scored as 1", s.zero_cells);
            std::printf("%.6f\n", s.image_score);
        } else if (*eval) {
            const auto data = protoad::load_dataset(root, category, cfg.out_size);
            const auto bank = protoad::load_bank(bank_path);
            spdlog::info("evaluating {} test items against {} prototypes", data.test.size(), bank.size());
            const auto res = protoad::evaluate(data, bank, cfg);
            fs::create_directories(out);
            const std::string text = res.report.to_text();
            write_text(fs::path(out) / "eval_report.txt", text);
            std::string scores;
            for (const auto& it : res.items) {
                char line[64];
                std::snprintf(line, sizeof line, " %d %.6f\n", it.anomalous ? 1 : 0, it.image_score);
                scores += fs::relative(it.tensor, fs::path(root) / category).string() + line;
            }
            write_text(fs::path(out) / "image_scores.txt", scores);
            if (res.report.pro_integrated_to < res.report.fpr_limit)
                spdlog::warn("PRO curve reached only FPR {:.4f}", res.report.pro_integrated_to);
            std::cout << text;
        } else if (*synth) {
            synth_cfg.grid_w = synth_cfg.grid_h;
            prepare_out_dir(out, force);
            const auto idx = protoad::synth_generate(synth_cfg, out, cfg.workers);
            std::printf("%s/%s: %zu train, %zu test (%zu anomalous), grid %zux%zu, C=%zu, shift %.1f deg\n",
                        out.c_str(), synth_cfg.category.c_str(), idx.train.size(), idx.test.size(),
                        idx.anomalous_count(), synth_cfg.grid_h, synth_cfg.grid_w, synth_cfg.channels,
                        synth_cfg.shift_degrees);
        } else if (*inspect) {
            const auto bank = protoad::load_bank(bank_path);
            std::printf("K=%zu\nC=%zu\n", bank.size(), bank.dim());
            for (const auto& [k, v] : bank.meta) std::printf("%s=%s\n", k.c_str(), v.c_str());
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
