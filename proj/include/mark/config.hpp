// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mark/model.hpp"
#include "mark/scenario.hpp"
#include "mark/training.hpp"

namespace mark {

/// Where a scenario's data comes from: generated Gaussian blobs, an IDX
/// image/label file pair, or a CIFAR-100 binary file.
enum class ScenarioSource { synthetic, idx, cifar100 };

std::string to_string(ScenarioSource source);
ScenarioSource scenario_source_from_string(const std::string& name);

struct ScenarioConfig {
    ScenarioSource source = ScenarioSource::synthetic;
    size_t n_tasks = 5;
    size_t classes_per_task = 4;

    // synthetic source
    size_t samples_per_class = 40;
    double separation = 4.0;
    double noise = 0.5;

    // file-backed sources
    TaskOrder order = TaskOrder::sorted;
    std::string train_images, train_labels; // idx pair
    std::string test_images, test_labels;   // optional idx test pair
    std::string cifar_train, cifar_test;    // cifar100 files (test optional)
    std::string embeddings;                 // optional external embedding table

    void validate() const;
};

/// Post-run analysis toggles and their thresholds.
struct AnalysisConfig {
    bool critical = false; // per-dimension mask gating probe
    bool updates = false;  // per-block weight-change fractions
    bool retrain = false;  // re-query every task against the final KB
    double critical_threshold = 1.0; // accuracy drop, percentage points
    double tau = 1e-3;               // per-weight change threshold

    void validate() const;
};

/// Everything one experiment needs, as read from a single config file.
struct ExperimentConfig {
    Variant variant = Variant::full_mark;
    std::vector<uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "runs/mark";
    ScenarioConfig scenario;
    ArchConfig arch;
    TrainConfig train; // holds SGD, meta, and thread-count knobs
    AnalysisConfig analysis;

    void validate() const;
};

/// Parses a config file: `key = value` lines scoped by `[section]` headers,
/// `#` comments, dotted keys (`meta.K = 10`) usable anywhere.  An empty file
/// yields the defaults.  Unknown keys, unknown sections, and malformed
/// values are config errors naming the file and line.
ExperimentConfig parse_config(const std::string& path);

/// Same grammar from an in-memory string; `origin` labels error messages.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin = "<config>");

/// Canonical text form: every key in reference order under its section
/// header.  Parsing the echo reproduces the config exactly, and the echo of
/// a parsed echo is byte-identical — this is what makes runs replayable.
std::string echo_config(const ExperimentConfig& cfg);

/// Digest of the canonical echo minus execution-only keys (run.out_dir,
/// run.threads): two configs hash equal exactly when they describe the same
/// experiment, regardless of where results land or how many workers ran.
std::string config_hash(const ExperimentConfig& cfg);

/// The generated reference page: every key with its default and meaning.
/// The page itself parses as a valid config equal to the defaults.
std::string config_reference();

} // namespace mark
