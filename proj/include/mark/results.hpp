// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mark/analysis.hpp"
#include "mark/training.hpp"

namespace mark {

/// Writes `text` so the file appears atomically: bytes go to a temporary
/// sibling first, which is renamed over `path` once fully written.  I/O
/// failures name the path.
void write_text_atomic(const std::string& path, const std::string& text);

/// All serializers below are deterministic: the same inputs produce the same
/// bytes, with sorted JSON keys and shortest-round-trip float text.  Nothing
/// time- or host-dependent goes into them — that is what makes replayed runs
/// byte-identical.

/// summary.json: headline metrics, parameter counts, the full accuracy
/// matrix, KB digests at task boundaries, and the config hash.
std::string summary_json(const RunResult& result, const std::string& config_hash);

/// acc_matrix.csv: row `after_i` holds the accuracies measured after
/// training task i, one column per task, cells past the diagonal blank.
std::string acc_matrix_csv(const AccuracyMatrix& matrix);

/// events.jsonl: one JSON object per line per recorded evaluation event.
std::string events_jsonl(const std::vector<EvalEvent>& events);

/// analysis_updates.json: per task transition, the per-block fraction of KB
/// weights whose change exceeded tau.
std::string updates_json(const std::vector<KbSnapshot>& snapshots, double tau);

/// analysis_critical.json: per task, the per-dimension accuracy drops and
/// impact classes, plus the cross-task shared-critical histogram.
std::string critical_json(const std::vector<CriticalReport>& reports);

/// analysis_retrain.json: per-task accuracies before/after re-querying
/// against the final KB and both gain series.
std::string retrain_json(const RetrainReport& report);

/// One seed's headline numbers, as collected for aggregation.
struct SeedSummary {
    uint64_t seed = 0;
    double acc = 0.0;
    double bwt = 0.0;
    bool bwt_defined = false;
    size_t params_total = 0;
};

/// Mean and population standard deviation (the "std over N runs" convention
/// used when reporting a small fixed seed set).
struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& values);

/// aggregate.json: mean/std of Acc and BWT over the run's seeds.
std::string aggregate_json(Variant variant, const std::vector<SeedSummary>& seeds,
                           const std::string& config_hash);

/// comparison.csv / comparison.json: the ablation table, one row per variant
/// with aggregated Acc and BWT.
struct VariantSummary {
    Variant variant = Variant::full_mark;
    MeanStd acc;
    MeanStd bwt;
    bool bwt_defined = false;
    size_t params_total = 0;
};

std::string comparison_csv(const std::vector<VariantSummary>& rows);
std::string comparison_json(const std::vector<VariantSummary>& rows);

} // namespace mark
