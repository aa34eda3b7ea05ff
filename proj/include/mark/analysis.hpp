// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mark/model.hpp"
#include "mark/scenario.hpp"

namespace mark {

/// Lower-triangular task accuracy record: entry (i, j), j <= i, is the test
/// accuracy on task j measured right after finishing training task i.
struct AccuracyMatrix {
    std::vector<std::vector<double>> rows;

    size_t n_tasks() const { return rows.size(); }

    /// Appends the row measured after finishing one more task.  The row must
    /// have exactly one more entry than the previous row, all in [0, 1].
    void add_row(std::vector<double> row);

    double at(size_t after_task, size_t task) const;
};

/// Mean of the final row: average accuracy over all tasks at the end of the
/// sequence.  Errors if the matrix is empty.
double avg_accuracy(const AccuracyMatrix& matrix);

/// Backward transfer: mean over earlier tasks of (final accuracy − accuracy
/// right after that task was trained).  Negative values measure forgetting.
/// Errors when fewer than two tasks were recorded.
double bwt(const AccuracyMatrix& matrix);

/// One recorded evaluation: during training of `task`, at `epoch` (1-based)
/// of `phase`, the model scored `accuracy`/`loss` on `split`.
struct EvalEvent {
    size_t task = 0;
    size_t epoch = 0;
    std::string phase;
    std::string split;
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Knowledge-base parameters captured at a task boundary, one flat value
/// vector per block; the trunk projection is the last entry.
struct KbSnapshot {
    std::vector<std::vector<float>> blocks;
};

KbSnapshot snapshot_kb(const KnowledgeBase& kb);

/// Per-block fraction of weights whose absolute change between the two
/// snapshots exceeds tau.  Snapshots must be congruent.
std::vector<double> weight_update_fraction(const KbSnapshot& before, const KbSnapshot& after,
                                           double tau = 1e-3);

/// Per-epoch accuracy series for one phase/split, averaged over tasks: entry
/// e is the mean accuracy across tasks at epoch e+1 of that task's `phase`.
/// Errors when no matching events exist.
std::vector<double> learning_curve(const std::vector<EvalEvent>& events,
                                   const std::string& phase,
                                   const std::string& split = "test");

/// Per-dimension impact of zeroing one mask channel for every test sample.
struct CriticalReport {
    enum Impact { none = 0, impact = 1, critical = 2 };

    double base_accuracy = 0.0;
    double threshold_points = 1.0;         // accuracy drop, percentage points
    std::vector<int> block_of_dim;         // owning KB block per mask dimension
    std::vector<double> drop;              // base accuracy − gated accuracy
    std::vector<int> impact_class;         // Impact per dimension

    size_t count(Impact c, int block = -1) const;
};

/// Zeroes each mask dimension in turn on the task's test split and measures
/// the accuracy drop against the intact model.  A dimension is critical when
/// the drop reaches `threshold_points` percentage points, has impact when the
/// drop is positive but smaller, and no impact otherwise.  Read-only on the
/// model.
CriticalReport critical_dimensions(ModelState& model, const TaskDataset& task,
                                   double threshold_points = 1.0, size_t batch_size = 128);

/// For each mask dimension, in how many of the given per-task reports it was
/// classified critical.
std::vector<size_t> shared_critical_modules(const std::vector<CriticalReport>& reports);

} // namespace mark
