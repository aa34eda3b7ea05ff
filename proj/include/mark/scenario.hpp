// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mark/data_io.hpp"
#include "mark/tensor.hpp"

namespace mark {

/// One task of a continual-learning scenario.  `inputs` holds every sample of
/// the task (train, validation and test together); the three index lists
/// partition its rows.  Labels are within-task ints in [0, n_classes); the
/// global class owning within-task label j is `global_classes[j]`.
/// `global_indices[i]` is row i's position in the source dataset, which is
/// what an external embedding table is indexed by (for split datasets the
/// test file continues after the last training row).
struct TaskDataset {
    size_t task_id = 0;
    Tensor inputs;                       // {N, ...}
    std::vector<int> labels;             // within-task label per row
    std::vector<int> global_classes;     // global class id per within-task label
    std::vector<size_t> train_idx;
    std::vector<size_t> val_idx;
    std::vector<size_t> test_idx;
    std::vector<size_t> global_indices;  // source-dataset position per row

    size_t size() const { return labels.size(); }
    size_t n_classes() const { return global_classes.size(); }
};

/// An ordered sequence of tasks with pairwise disjoint global class sets and
/// task ids 0..T-1 in presentation order.
struct Scenario {
    std::vector<TaskDataset> tasks;

    size_t n_tasks() const { return tasks.size(); }
};

enum class TaskOrder { sorted, shuffled };

std::string to_string(TaskOrder order);
TaskOrder task_order_from_string(const std::string& name);

/// Generates a synthetic scenario of Gaussian class blobs.  Class means are
/// built from a direction pool shared by every task, so later tasks reuse the
/// feature directions of earlier ones, and are scaled so that every pair of
/// means is at least `separation` apart.  `noise` is the per-coordinate
/// standard deviation around the mean; with noise 0 a nearest-mean classifier
/// is exact.  The same seed reproduces the scenario bit for bit.  If the
/// means cannot be placed (for example more classes than a 1-d space can
/// hold apart), generation fails with a data error.
Scenario gen_synthetic(size_t n_tasks, size_t classes_per_task, const Shape& input_shape,
                       double separation, double noise, uint64_t seed,
                       size_t samples_per_class = 40);

/// Splits a labelled dataset into `n_tasks` tasks of equal class count.
/// The distinct global classes must divide evenly by `n_tasks`; otherwise the
/// partition fails with a data error.  With TaskOrder::sorted (the default)
/// classes are assigned to tasks in ascending global id; shuffled draws a
/// seeded permutation first.  Labels are remapped to within-task ints.
/// When `test` is given its rows become the test split and the training rows
/// are divided 90/10 into train/validation per class; without it 20% of each
/// class is held out as test before the validation split.  Splits are
/// stratified by class and driven by `seed`.
Scenario split_tasks(const RawDataset& train, size_t n_tasks, uint64_t seed,
                     TaskOrder order = TaskOrder::sorted, const RawDataset* test = nullptr);

/// Checks every scenario invariant: task ids are 0..T-1 in order, global
/// class sets are pairwise disjoint, labels are in range and every
/// within-task label is used, splits are disjoint and exhaustive, and the
/// validation split is nonempty.  Throws data_error naming the violation.
void validate_scenario(const Scenario& scenario);

/// Gathers `rows` of a {N, ...} tensor into a new {rows.size(), ...} tensor.
Tensor gather_rows(const Tensor& inputs, const std::vector<size_t>& rows);

std::vector<int> gather_values(const std::vector<int>& values, const std::vector<size_t>& rows);
std::vector<size_t> gather_values(const std::vector<size_t>& values,
                                  const std::vector<size_t>& rows);

} // namespace mark
