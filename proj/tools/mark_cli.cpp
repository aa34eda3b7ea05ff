// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the MARK continual-learning engine.
//
//   mark train <config>                        run one variant across seeds
//   mark ablate <config>                       run all six variants
//   mark analyze <what> <checkpoint> <config>  critical | updates | retrain
//   mark inspect <checkpoint>                  list a checkpoint's tensors
//   mark config-reference                      print every config key
//
// Overrides: --seed (repeatable, replaces the seed list), --out (output
// directory), --threads (inner-loop parallelism).  Execution-only settings
// never change results: a replay into a different --out at any --threads
// writes byte-identical summaries.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mark/checkpoint.hpp"
#include "mark/errors.hpp"
#include "mark/runner.hpp"

namespace {

struct Overrides {
    std::vector<uint64_t> seeds;
    std::string out;
    size_t threads = 0;
};

void add_overrides(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--seed", ov.seeds, "override the config's seed list (repeatable)");
    cmd->add_option("--out", ov.out, "override the output directory");
    cmd->add_option("--threads", ov.threads, "override the worker thread count");
}

mark::ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
    mark::ExperimentConfig cfg = mark::parse_config(path);
    if (!ov.seeds.empty()) cfg.seeds = ov.seeds;
    if (!ov.out.empty()) cfg.out_dir = ov.out;
    if (ov.threads != 0) cfg.train.threads = ov.threads;
    return cfg;
}

void inspect(const std::string& path) {
    const std::vector<mark::CheckpointEntry> entries = mark::read_checkpoint(path);
    size_t total = 0;
    for (const mark::CheckpointEntry& e : entries) total += e.values.size();
    std::cout << path << ": " << entries.size() << " tensors, " << total << " values\n";
    for (const mark::CheckpointEntry& e : entries) {
        std::cout << "  " << e.name << "  [";
        for (size_t i = 0; i < e.shape.size(); ++i)
            std::cout << (i ? ", " : "") << e.shape[i];
        std::cout << "]  " << e.values.size() << "\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MARK continual learning: shared knowledge base, per-task masks, "
                 "episodic meta-updates"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, what;
    Overrides ov;

    CLI::App* train = app.add_subcommand("train", "train one variant across all seeds");
    train->add_option("config", config_path, "experiment config file")->required();
    add_overrides(train, ov);

    CLI::App* ablate = app.add_subcommand("ablate", "train every variant on shared data");
    ablate->add_option("config", config_path, "experiment config file")->required();
    add_overrides(ablate, ov);

    CLI::App* analyze =
        app.add_subcommand("analyze", "run one analysis against a saved checkpoint");
    analyze->add_option("what", what, "critical | updates | retrain")->required();
    analyze->add_option("checkpoint", checkpoint_path, "model.ckpt from `mark train`")
        ->required();
    analyze->add_option("config", config_path, "config the checkpoint was trained with")
        ->required();
    add_overrides(analyze, ov);

    CLI::App* inspect_cmd = app.add_subcommand("inspect", "list a checkpoint's tensors");
    inspect_cmd->add_option("checkpoint", checkpoint_path, "any .ckpt file")->required();

    app.add_subcommand("config-reference", "print every config key with its default");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            mark::run_experiment(load_config(config_path, ov));
        } else if (ablate->parsed()) {
            mark::run_ablation(load_config(config_path, ov));
        } else if (analyze->parsed()) {
            const mark::ExperimentConfig cfg = load_config(config_path, ov);
            std::string out = ov.out;
            if (out.empty())
                out = std::filesystem::path(checkpoint_path).parent_path().string();
            if (out.empty()) out = ".";
            mark::run_analysis(cfg, what, checkpoint_path, out);
        } else if (inspect_cmd->parsed()) {
            inspect(checkpoint_path);
        } else { // config-reference
            std::cout << mark::config_reference();
        }
    } catch (const std::exception& e) {
        std::cerr << "mark: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
