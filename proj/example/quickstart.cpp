// Generates a small synthetic category in a temporary directory, fits a
// prototype bank and prints the evaluation report.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "protoad/protoad.hpp"

int main() {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "protoad_quickstart";
    fs::remove_all(root);

    protoad::SynthConfig synth;
    synth.n_train = 10;
    synth.n_test_normal = 8;
    synth.n_test_anomalous = 8;
    synth.grid_h = synth.grid_w = 16;
    synth.defect_max = 6;
    const protoad::DatasetIndex data = protoad::synth_generate(synth, root);

    protoad::RunConfig cfg;
    const protoad::FitResult fit = protoad::fit_bank(data, cfg);
    std::printf("%zu vectors -> %zu prototypes (hierarchy:", fit.report.n_vectors, fit.bank.size());
    for (auto c : fit.report.level_counts) std::printf(" %zu", c);
    std::printf(")\n");

    const protoad::EvalResult eval = protoad::evaluate(data, fit.bank, cfg);
    std::cout << eval.report.to_text();
    fs::remove_all(root);
}
