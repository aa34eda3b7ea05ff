// SPDX-License-Identifier: Apache-2.0
#include "mark/runner.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "mark/checkpoint.hpp"
#include "mark/data_io.hpp"
#include "mark/errors.hpp"

namespace mark {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string resolve_data_path(const std::string& path) {
    if (path.empty()) return path;
    const char* root = std::getenv("MARK_DATA_DIR");
    if (!root || !*root) return path;
    const fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(root) / p).string();
}

Scenario build_scenario(const ExperimentConfig& cfg, uint64_t seed) {
    const ScenarioConfig& sc = cfg.scenario;
    switch (sc.source) {
        case ScenarioSource::synthetic: {
            const Shape input_shape =
                cfg.arch.block_kind == BlockKind::dense
                    ? Shape{cfg.arch.in_dim}
                    : Shape{cfg.arch.in_channels, cfg.arch.in_h, cfg.arch.in_w};
            return gen_synthetic(sc.n_tasks, sc.classes_per_task, input_shape,
                                 sc.separation, sc.noise, seed, sc.samples_per_class);
        }
        case ScenarioSource::idx: {
            const RawDataset train = load_idx(resolve_data_path(sc.train_images),
                                              resolve_data_path(sc.train_labels));
            if (sc.test_images.empty())
                return split_tasks(train, sc.n_tasks, seed, sc.order);
            const RawDataset test = load_idx(resolve_data_path(sc.test_images),
                                             resolve_data_path(sc.test_labels));
            return split_tasks(train, sc.n_tasks, seed, sc.order, &test);
        }
        case ScenarioSource::cifar100: {
            const RawDataset train = load_cifar100(resolve_data_path(sc.cifar_train));
            if (sc.cifar_test.empty())
                return split_tasks(train, sc.n_tasks, seed, sc.order);
            const RawDataset test = load_cifar100(resolve_data_path(sc.cifar_test));
            return split_tasks(train, sc.n_tasks, seed, sc.order, &test);
        }
    }
    throw value_error("build_scenario: bad ScenarioSource");
}

Tensor load_embedding_table(const ExperimentConfig& cfg) {
    if (cfg.scenario.embeddings.empty()) return {};
    return load_embeddings(resolve_data_path(cfg.scenario.embeddings));
}

RunOutcome run_one(const ExperimentConfig& cfg, Variant variant, uint64_t seed) {
    const Scenario scenario = build_scenario(cfg, seed);
    const Tensor table = load_embedding_table(cfg);
    return train_sequence(scenario, cfg.arch, cfg.train, variant, seed, table);
}

// ---------------------------------------------------------------------------
// Output bookkeeping
// ---------------------------------------------------------------------------

namespace {

/// Remembers every file and directory one invocation created so a failure
/// can take its partial outputs away again.  Pre-existing files that were
/// overwritten are out of scope — only this run's additions are removed.
class OutputTracker {
public:
    void add_file(const fs::path& p) { files_.push_back(p); }

    /// create_directories, recording the components that did not exist yet.
    void make_dirs(const fs::path& dir) {
        fs::path partial;
        for (const fs::path& part : dir) {
            partial /= part;
            if (partial.empty() || fs::exists(partial)) continue;
            std::error_code ec;
            if (fs::create_directory(partial, ec) && !ec) dirs_.push_back(partial);
            else if (ec)
                throw io_error("cannot create directory " + partial.string() + " (" +
                               ec.message() + ")");
        }
    }

    void remove_partial_outputs() {
        std::error_code ec;
        for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove(*it, ec);
        // Directories go in reverse creation order; non-empty ones (holding
        // files from earlier runs) are left alone.
        for (auto it = dirs_.rbegin(); it != dirs_.rend(); ++it) fs::remove(*it, ec);
    }

private:
    std::vector<fs::path> files_;
    std::vector<fs::path> dirs_;
};

void write_tracked(OutputTracker& tracker, const fs::path& path, const std::string& text) {
    write_text_atomic(path.string(), text);
    tracker.add_file(path);
}

void check_referenced_paths(const ExperimentConfig& cfg) {
    const ScenarioConfig& sc = cfg.scenario;
    std::vector<std::string> paths;
    if (sc.source == ScenarioSource::idx) {
        paths = {sc.train_images, sc.train_labels, sc.test_images, sc.test_labels};
    } else if (sc.source == ScenarioSource::cifar100) {
        paths = {sc.cifar_train, sc.cifar_test};
    }
    paths.push_back(sc.embeddings);
    for (const std::string& p : paths) {
        if (p.empty()) continue;
        const std::string resolved = resolve_data_path(p);
        if (!fs::exists(resolved))
            throw config_error("referenced path does not exist: " + resolved);
    }
}

std::vector<CheckpointEntry> snapshot_entries(const std::vector<KbSnapshot>& snapshots) {
    std::vector<CheckpointEntry> entries;
    for (size_t t = 0; t < snapshots.size(); ++t)
        for (size_t b = 0; b < snapshots[t].blocks.size(); ++b) {
            const std::vector<float>& values = snapshots[t].blocks[b];
            entries.push_back({"snap" + std::to_string(t) + ".block" + std::to_string(b),
                               {values.size()},
                               values});
        }
    return entries;
}

std::vector<KbSnapshot> snapshots_from_entries(const std::vector<CheckpointEntry>& entries,
                                               const std::string& origin) {
    std::vector<KbSnapshot> snaps;
    for (const CheckpointEntry& e : entries) {
        size_t t = 0, b = 0;
        int consumed = 0;
        if (std::sscanf(e.name.c_str(), "snap%zu.block%zu%n", &t, &b, &consumed) != 2 ||
            consumed != static_cast<int>(e.name.size()))
            throw format_error(origin + ": '" + e.name + "' is not a KB snapshot entry");
        if (t >= snaps.size()) snaps.resize(t + 1);
        if (b >= snaps[t].blocks.size()) snaps[t].blocks.resize(b + 1);
        snaps[t].blocks[b] = e.values;
    }
    for (const KbSnapshot& s : snaps)
        for (const std::vector<float>& block : s.blocks)
            if (block.empty())
                throw format_error(origin + ": snapshot series has gaps");
    return snaps;
}

std::string timing_json(uint64_t seed, double seconds) {
    json j;
    j["seed"] = seed;
    j["wall_clock_seconds"] = seconds;
    j["note"] = "observational; not part of the canonical result payload";
    return j.dump(2) + "\n";
}

std::vector<SeedSummary> run_experiment_impl(const ExperimentConfig& cfg,
                                             OutputTracker& tracker) {
    const fs::path out_dir(cfg.out_dir);
    tracker.make_dirs(out_dir);
    write_tracked(tracker, out_dir / "config.cfg", echo_config(cfg));
    const std::string hash = config_hash(cfg);
    const Tensor table = load_embedding_table(cfg);

    std::vector<SeedSummary> sums;
    for (uint64_t seed : cfg.seeds) {
        const Scenario scenario = build_scenario(cfg, seed);
        const auto t0 = std::chrono::steady_clock::now();
        RunOutcome out = train_sequence(scenario, cfg.arch, cfg.train, cfg.variant, seed,
                                        table);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        const fs::path dir = out_dir / ("seed_" + std::to_string(seed));
        tracker.make_dirs(dir);
        write_tracked(tracker, dir / "summary.json", summary_json(out.result, hash));
        write_tracked(tracker, dir / "acc_matrix.csv",
                      acc_matrix_csv(out.result.acc_matrix));
        write_tracked(tracker, dir / "events.jsonl", events_jsonl(out.result.events));
        save_checkpoint(out.model, (dir / "model.ckpt").string());
        tracker.add_file(dir / "model.ckpt");
        write_checkpoint((dir / "kb_snapshots.ckpt").string(),
                         snapshot_entries(out.result.kb_snapshots));
        tracker.add_file(dir / "kb_snapshots.ckpt");
        write_tracked(tracker, dir / "timing.json", timing_json(seed, seconds));

        if (cfg.analysis.updates)
            write_tracked(tracker, dir / "analysis_updates.json",
                          updates_json(out.result.kb_snapshots, cfg.analysis.tau));
        if (cfg.analysis.critical) {
            std::vector<CriticalReport> reports;
            for (const TaskDataset& task : scenario.tasks)
                reports.push_back(critical_dimensions(out.model, task,
                                                      cfg.analysis.critical_threshold,
                                                      cfg.train.batch_size));
            write_tracked(tracker, dir / "analysis_critical.json", critical_json(reports));
        }
        if (cfg.analysis.retrain) {
            const RetrainReport rep =
                retrain_gain(out.model, scenario, cfg.train, out.result.acc_matrix, seed);
            write_tracked(tracker, dir / "analysis_retrain.json", retrain_json(rep));
        }

        sums.push_back({seed, out.result.acc, out.result.bwt_value, out.result.bwt_defined,
                        out.result.params.total()});
        std::cout << "[" << to_string(cfg.variant) << " seed " << seed
                  << "] acc=" << out.result.acc;
        if (out.result.bwt_defined) std::cout << " bwt=" << out.result.bwt_value;
        std::cout << " (" << seconds << " s)\n";
    }

    write_tracked(tracker, out_dir / "aggregate.json",
                  aggregate_json(cfg.variant, sums, hash));
    return sums;
}

VariantSummary summarize_variant(Variant variant, const std::vector<SeedSummary>& sums) {
    VariantSummary row;
    row.variant = variant;
    std::vector<double> accs, bwts;
    row.bwt_defined = true;
    for (const SeedSummary& s : sums) {
        accs.push_back(s.acc);
        bwts.push_back(s.bwt);
        row.bwt_defined = row.bwt_defined && s.bwt_defined;
    }
    row.acc = mean_std(accs);
    if (row.bwt_defined) row.bwt = mean_std(bwts);
    row.params_total = sums.front().params_total;
    return row;
}

} // namespace

std::vector<SeedSummary> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    check_referenced_paths(cfg);
    OutputTracker tracker;
    try {
        return run_experiment_impl(cfg, tracker);
    } catch (...) {
        tracker.remove_partial_outputs();
        throw;
    }
}

void run_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    check_referenced_paths(cfg);
    OutputTracker tracker;
    try {
        const fs::path out_dir(cfg.out_dir);
        tracker.make_dirs(out_dir);
        write_tracked(tracker, out_dir / "config.cfg", echo_config(cfg));

        std::vector<VariantSummary> rows;
        for (Variant variant : all_variants()) {
            ExperimentConfig sub = cfg;
            sub.variant = variant;
            sub.out_dir = (out_dir / to_string(variant)).string();
            rows.push_back(summarize_variant(variant, run_experiment(sub)));
        }
        write_tracked(tracker, out_dir / "comparison.csv", comparison_csv(rows));
        write_tracked(tracker, out_dir / "comparison.json", comparison_json(rows));
    } catch (...) {
        tracker.remove_partial_outputs();
        throw;
    }
}

void run_analysis(const ExperimentConfig& cfg, const std::string& what,
                  const std::string& checkpoint_path, const std::string& out_dir) {
    cfg.validate();
    check_referenced_paths(cfg);
    if (what != "critical" && what != "updates" && what != "retrain")
        throw config_error("unknown analysis '" + what +
                           "' (expected critical, updates, or retrain)");

    const uint64_t seed = cfg.seeds.front();
    const Scenario scenario = build_scenario(cfg, seed);

    // Rebuild the model skeleton the checkpoint was saved from; every value
    // is overwritten by the load, so only the layout has to match.
    Rng rng(seed);
    ModelState model = make_model(cfg.arch, rng);
    model.embedding_table = load_embedding_table(cfg);
    for (const TaskDataset& task : scenario.tasks) add_task(model, task.n_classes(), rng);
    load_checkpoint(model, checkpoint_path);

    OutputTracker tracker;
    tracker.make_dirs(out_dir);
    const fs::path report_path = fs::path(out_dir) / ("analysis_" + what + ".json");
    const fs::path sibling_dir = fs::path(checkpoint_path).parent_path();

    if (what == "critical") {
        std::vector<CriticalReport> reports;
        for (const TaskDataset& task : scenario.tasks)
            reports.push_back(critical_dimensions(model, task,
                                                  cfg.analysis.critical_threshold,
                                                  cfg.train.batch_size));
        write_text_atomic(report_path.string(), critical_json(reports));
    } else if (what == "updates") {
        const fs::path snaps_path = sibling_dir / "kb_snapshots.ckpt";
        if (!fs::exists(snaps_path))
            throw io_error("updates analysis needs " + snaps_path.string() +
                           " (written next to the checkpoint by `mark train`)");
        const std::vector<KbSnapshot> snapshots = snapshots_from_entries(
            read_checkpoint(snaps_path.string()), snaps_path.string());
        write_text_atomic(report_path.string(), updates_json(snapshots, cfg.analysis.tau));
    } else { // retrain
        const fs::path summary_path = sibling_dir / "summary.json";
        if (!fs::exists(summary_path))
            throw io_error("retrain analysis needs " + summary_path.string() +
                           " (written next to the checkpoint by `mark train`)");
        json j;
        try {
            std::ifstream in(summary_path);
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw format_error(summary_path.string() + ": " + e.what());
        }
        AccuracyMatrix matrix;
        for (const auto& row : j.at("acc_matrix"))
            matrix.add_row(row.get<std::vector<double>>());
        const RetrainReport rep = retrain_gain(model, scenario, cfg.train, matrix, seed);
        write_text_atomic(report_path.string(), retrain_json(rep));
    }
    std::cout << "wrote " << report_path.string() << "\n";
}

} // namespace mark
