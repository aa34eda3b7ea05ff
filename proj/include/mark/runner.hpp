// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mark/config.hpp"
#include "mark/results.hpp"
#include "mark/training.hpp"

namespace mark {

/// Expands a relative data path against the MARK_DATA_DIR environment
/// variable when it is set; absolute paths and unset environments pass
/// through unchanged.
std::string resolve_data_path(const std::string& path);

/// Builds the scenario one training run sees.  Synthetic data is generated
/// from the run seed; file-backed data uses the seed for splits and task
/// order.  The seed is the only run-dependent input, so every variant
/// trained at the same seed works on identical bytes.
Scenario build_scenario(const ExperimentConfig& cfg, uint64_t seed);

/// Loads the configured external embedding table; returns an undefined
/// tensor when the config names none.
Tensor load_embedding_table(const ExperimentConfig& cfg);

/// Trains one seed of one variant in memory (no files written).
RunOutcome run_one(const ExperimentConfig& cfg, Variant variant, uint64_t seed);

/// The `train` subcommand.  For every seed: trains cfg.variant, then writes
/// under cfg.out_dir/seed_<s>/ the summary, accuracy matrix, event log,
/// model checkpoint, KB snapshot series, and any enabled analysis reports.
/// The canonical config echo lands at cfg.out_dir/config.cfg and the
/// cross-seed aggregate at cfg.out_dir/aggregate.json.  Every file is
/// written atomically; on error, everything this call created is removed
/// before the error propagates.  Returns the per-seed headline numbers.
std::vector<SeedSummary> run_experiment(const ExperimentConfig& cfg);

/// The `ablate` subcommand: run_experiment for all six variants under
/// cfg.out_dir/<variant>/, sharing the seed list (and therefore the data),
/// plus comparison.csv / comparison.json across variants.
void run_ablation(const ExperimentConfig& cfg);

/// The `analyze` subcommand: rebuilds the model described by the config
/// (first seed of the list unless overridden), restores the checkpoint into
/// it, runs one diagnostic, and writes analysis_<what>.json into out_dir.
/// `what` is one of critical | updates | retrain.  updates reads the
/// kb_snapshots.ckpt written next to the checkpoint by `train`; retrain
/// reads the sibling summary.json for the accuracies each task had when
/// first trained.
void run_analysis(const ExperimentConfig& cfg, const std::string& what,
                  const std::string& checkpoint_path, const std::string& out_dir);

} // namespace mark
