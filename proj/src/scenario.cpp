// SPDX-License-Identifier: Apache-2.0
#include "mark/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "mark/errors.hpp"
#include "mark/rng.hpp"

namespace mark {

namespace {

// Stream tags so every phase of scenario construction draws from its own
// independent RNG stream.
constexpr uint64_t kTagMeans = 0x11;
constexpr uint64_t kTagSamples = 0x22;
constexpr uint64_t kTagSplits = 0x33;
constexpr uint64_t kTagOrder = 0x44;

struct HoldoutCounts {
    size_t test, val, train;
};

// 20% test (at least one row), then 10% of the remainder as validation (at
// least one row), rest train.  Needs n >= 3.
HoldoutCounts holdout_counts(size_t n) {
    const size_t test = std::max<size_t>(1, size_t(std::lround(0.2 * double(n))));
    const size_t val = std::max<size_t>(1, size_t(std::lround(0.1 * double(n - test))));
    return {test, val, n - test - val};
}

// Validation share of a training pool whose test rows live elsewhere.
// Needs n >= 2.
size_t val_count_of_pool(size_t n) {
    return std::max<size_t>(1, size_t(std::lround(0.1 * double(n))));
}

std::vector<std::vector<double>> place_class_means(size_t n_classes, size_t dim,
                                                   double separation, Rng& rng) {
    size_t P = std::max<size_t>(4, std::min<size_t>(64, 2 * n_classes));
    while (P * P < n_classes) ++P;

    constexpr int kAttempts = 200;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        // A pool of unit directions shared by every class; each mean mixes a
        // primary and a secondary pool direction, so tasks that come later
        // re-use the feature directions of earlier ones.
        std::vector<std::vector<double>> pool(P, std::vector<double>(dim));
        for (auto& u : pool) {
            double norm2 = 0.0;
            for (double& x : u) {
                x = rng.normal();
                norm2 += x * x;
            }
            double norm = std::sqrt(norm2);
            if (norm < 1e-12) {
                u.assign(dim, 0.0);
                u[0] = 1.0;
                norm = 1.0;
            } else {
                for (double& x : u) x /= norm;
            }
        }

        const auto combos =
            rng.sample_without_replacement(int64_t(P) * int64_t(P), int64_t(n_classes));
        std::vector<std::vector<double>> cand(n_classes, std::vector<double>(dim));
        bool degenerate = false;
        for (size_t c = 0; c < n_classes; ++c) {
            const size_t primary = size_t(combos[c]) / P;
            const size_t secondary = size_t(combos[c]) % P;
            double norm2 = 0.0;
            for (size_t d = 0; d < dim; ++d) {
                cand[c][d] = pool[primary][d] + 0.5 * pool[secondary][d];
                norm2 += cand[c][d] * cand[c][d];
            }
            const double norm = std::sqrt(norm2);
            if (norm < 1e-9) {
                degenerate = true;
                break;
            }
            for (double& x : cand[c]) x /= norm;
        }
        if (degenerate) continue;

        double dmin = std::numeric_limits<double>::infinity();
        for (size_t a = 0; a < n_classes; ++a) {
            for (size_t b = a + 1; b < n_classes; ++b) {
                double d2 = 0.0;
                for (size_t d = 0; d < dim; ++d) {
                    const double diff = cand[a][d] - cand[b][d];
                    d2 += diff * diff;
                }
                dmin = std::min(dmin, std::sqrt(d2));
            }
        }
        // Scale so the closest pair sits just past `separation`.  Reject
        // draws whose closest pair is too tight: those would blow the means
        // up by more than 5x the separation.
        if (dmin < 0.2) continue;
        // The extra factor keeps the minimum pairwise distance above
        // `separation` even after the means are rounded to float32.
        const double scale = 1.000001 * separation / dmin;
        for (auto& mean : cand)
            for (double& x : mean) x *= scale;
        return cand;
    }
    throw data_error("gen_synthetic: could not place " + std::to_string(n_classes) +
                     " class means at least " + std::to_string(separation) + " apart in " +
                     std::to_string(dim) + " dimensions");
}

} // namespace

std::string to_string(TaskOrder order) {
    switch (order) {
    case TaskOrder::sorted: return "sorted";
    case TaskOrder::shuffled: return "shuffled";
    }
    throw value_error("unknown task order");
}

TaskOrder task_order_from_string(const std::string& name) {
    if (name == "sorted") return TaskOrder::sorted;
    if (name == "shuffled") return TaskOrder::shuffled;
    throw value_error("unknown task order '" + name + "' (expected sorted or shuffled)");
}

Scenario gen_synthetic(size_t n_tasks, size_t classes_per_task, const Shape& input_shape,
                       double separation, double noise, uint64_t seed,
                       size_t samples_per_class) {
    if (n_tasks == 0) throw value_error("gen_synthetic: n_tasks must be positive");
    if (classes_per_task < 2)
        throw value_error("gen_synthetic: need at least 2 classes per task, got " +
                          std::to_string(classes_per_task));
    if (!std::isfinite(separation) || separation <= 0.0)
        throw value_error("gen_synthetic: separation must be positive and finite");
    if (!std::isfinite(noise) || noise < 0.0)
        throw value_error("gen_synthetic: noise must be non-negative and finite");
    if (samples_per_class < 3)
        throw value_error("gen_synthetic: need at least 3 samples per class for "
                          "train/val/test splits, got " +
                          std::to_string(samples_per_class));
    if (input_shape.empty())
        throw value_error("gen_synthetic: input_shape must not be empty");
    const size_t dim = shape_numel(input_shape);
    if (dim == 0) throw value_error("gen_synthetic: input_shape has zero elements");

    const size_t n_classes = n_tasks * classes_per_task;
    Rng mean_rng(derive_seed(seed, {kTagMeans}));
    const auto means = place_class_means(n_classes, dim, separation, mean_rng);

    Scenario scenario;
    scenario.tasks.resize(n_tasks);
    size_t next_global_index = 0;
    for (size_t t = 0; t < n_tasks; ++t) {
        TaskDataset& task = scenario.tasks[t];
        task.task_id = t;
        const size_t task_rows = classes_per_task * samples_per_class;
        std::vector<float> values(task_rows * dim);
        task.labels.reserve(task_rows);
        task.global_indices.reserve(task_rows);

        for (size_t j = 0; j < classes_per_task; ++j) {
            const size_t g = t * classes_per_task + j;
            task.global_classes.push_back(int(g));
            Rng sample_rng(derive_seed(seed, {kTagSamples, g}));
            for (size_t i = 0; i < samples_per_class; ++i) {
                float* row = values.data() + (j * samples_per_class + i) * dim;
                for (size_t d = 0; d < dim; ++d) {
                    double v = means[g][d];
                    if (noise > 0.0) v += noise * sample_rng.normal();
                    row[d] = float(v);
                }
                task.labels.push_back(int(j));
                task.global_indices.push_back(next_global_index++);
            }
        }

        Shape shape;
        shape.push_back(task_rows);
        shape.insert(shape.end(), input_shape.begin(), input_shape.end());
        task.inputs = Tensor::from_data(shape, std::move(values));

        Rng split_rng(derive_seed(seed, {kTagSplits, t}));
        for (size_t j = 0; j < classes_per_task; ++j) {
            std::vector<size_t> idx(samples_per_class);
            for (size_t i = 0; i < samples_per_class; ++i) idx[i] = j * samples_per_class + i;
            split_rng.shuffle(idx);
            const HoldoutCounts c = holdout_counts(samples_per_class);
            size_t k = 0;
            for (size_t i = 0; i < c.test; ++i) task.test_idx.push_back(idx[k++]);
            for (size_t i = 0; i < c.val; ++i) task.val_idx.push_back(idx[k++]);
            for (size_t i = 0; i < c.train; ++i) task.train_idx.push_back(idx[k++]);
        }
        std::sort(task.train_idx.begin(), task.train_idx.end());
        std::sort(task.val_idx.begin(), task.val_idx.end());
        std::sort(task.test_idx.begin(), task.test_idx.end());
    }

    validate_scenario(scenario);
    return scenario;
}

Scenario split_tasks(const RawDataset& train, size_t n_tasks, uint64_t seed, TaskOrder order,
                     const RawDataset* test) {
    if (n_tasks == 0) throw value_error("split_tasks: n_tasks must be positive");
    if (!train.inputs.defined() || train.inputs.rank() < 2)
        throw value_error("split_tasks: training inputs must be at least rank 2");
    if (train.labels.size() != train.inputs.dim(0))
        throw value_error("split_tasks: " + std::to_string(train.labels.size()) +
                          " labels for " + std::to_string(train.inputs.dim(0)) + " rows");
    if (train.size() == 0) throw data_error("split_tasks: empty training dataset");
    if (test) {
        if (!test->inputs.defined() || test->inputs.rank() != train.inputs.rank())
            throw data_error("split_tasks: test inputs rank differs from training inputs");
        for (size_t d = 1; d < train.inputs.rank(); ++d)
            if (test->inputs.dim(d) != train.inputs.dim(d))
                throw data_error("split_tasks: test row shape differs from training row shape");
        if (test->labels.size() != test->inputs.dim(0))
            throw value_error("split_tasks: test label count differs from test rows");
    }

    const std::set<int> class_set(train.labels.begin(), train.labels.end());
    std::vector<int> classes(class_set.begin(), class_set.end());
    if (classes.size() % n_tasks != 0)
        throw data_error("split_tasks: cannot partition " + std::to_string(classes.size()) +
                         " classes into " + std::to_string(n_tasks) + " equal tasks");
    const size_t cpt = classes.size() / n_tasks;
    if (cpt < 2)
        throw data_error("split_tasks: each task needs at least 2 classes, got " +
                         std::to_string(cpt));

    if (order == TaskOrder::shuffled) {
        Rng order_rng(derive_seed(seed, {kTagOrder}));
        const auto perm = order_rng.permutation(int64_t(classes.size()));
        std::vector<int> shuffled(classes.size());
        for (size_t i = 0; i < classes.size(); ++i) shuffled[i] = classes[size_t(perm[i])];
        classes = std::move(shuffled);
    }

    std::unordered_map<int, std::pair<size_t, int>> where; // global class -> (task, label)
    for (size_t t = 0; t < n_tasks; ++t)
        for (size_t j = 0; j < cpt; ++j) where[classes[t * cpt + j]] = {t, int(j)};

    struct Row {
        size_t src;
        bool from_test;
        int label;
        size_t global_index;
    };
    std::vector<std::vector<Row>> task_rows(n_tasks);
    const size_t n_train_rows = train.size();
    for (size_t i = 0; i < n_train_rows; ++i) {
        const auto& slot = where.at(train.labels[i]);
        task_rows[slot.first].push_back({i, false, slot.second, i});
    }
    if (test) {
        for (size_t i = 0; i < test->size(); ++i) {
            const auto it = where.find(test->labels[i]);
            if (it == where.end())
                throw data_error("split_tasks: test file contains class " +
                                 std::to_string(test->labels[i]) +
                                 " absent from the training data");
            task_rows[it->second.first].push_back(
                {i, true, it->second.second, n_train_rows + i});
        }
    }

    size_t row_numel = 1;
    for (size_t d = 1; d < train.inputs.rank(); ++d) row_numel *= train.inputs.dim(d);

    Scenario scenario;
    scenario.tasks.resize(n_tasks);
    for (size_t t = 0; t < n_tasks; ++t) {
        TaskDataset& task = scenario.tasks[t];
        task.task_id = t;
        for (size_t j = 0; j < cpt; ++j) task.global_classes.push_back(classes[t * cpt + j]);

        const auto& rows = task_rows[t];
        std::vector<float> values(rows.size() * row_numel);
        task.labels.reserve(rows.size());
        task.global_indices.reserve(rows.size());
        std::vector<std::vector<size_t>> pool_by_class(cpt); // train-pool positions per class
        for (size_t r = 0; r < rows.size(); ++r) {
            const Row& row = rows[r];
            const std::vector<float>& src =
                row.from_test ? test->inputs.data() : train.inputs.data();
            std::copy_n(src.data() + row.src * row_numel, row_numel,
                        values.data() + r * row_numel);
            task.labels.push_back(row.label);
            task.global_indices.push_back(row.global_index);
            if (row.from_test)
                task.test_idx.push_back(r);
            else
                pool_by_class[size_t(row.label)].push_back(r);
        }

        Rng split_rng(derive_seed(seed, {kTagSplits, t}));
        for (size_t j = 0; j < cpt; ++j) {
            std::vector<size_t>& idx = pool_by_class[j];
            split_rng.shuffle(idx);
            if (test) {
                if (idx.size() < 2)
                    throw data_error("split_tasks: class " + std::to_string(classes[t * cpt + j]) +
                                     " has only " + std::to_string(idx.size()) +
                                     " training rows; need at least 2");
                const size_t val = val_count_of_pool(idx.size());
                for (size_t i = 0; i < idx.size(); ++i)
                    (i < val ? task.val_idx : task.train_idx).push_back(idx[i]);
            } else {
                if (idx.size() < 3)
                    throw data_error("split_tasks: class " + std::to_string(classes[t * cpt + j]) +
                                     " has only " + std::to_string(idx.size()) +
                                     " rows; need at least 3");
                const HoldoutCounts c = holdout_counts(idx.size());
                size_t k = 0;
                for (size_t i = 0; i < c.test; ++i) task.test_idx.push_back(idx[k++]);
                for (size_t i = 0; i < c.val; ++i) task.val_idx.push_back(idx[k++]);
                for (size_t i = 0; i < c.train; ++i) task.train_idx.push_back(idx[k++]);
            }
        }
        std::sort(task.train_idx.begin(), task.train_idx.end());
        std::sort(task.val_idx.begin(), task.val_idx.end());
        std::sort(task.test_idx.begin(), task.test_idx.end());

        Shape shape;
        shape.push_back(rows.size());
        for (size_t d = 1; d < train.inputs.rank(); ++d) shape.push_back(train.inputs.dim(d));
        task.inputs = Tensor::from_data(shape, std::move(values));
    }

    validate_scenario(scenario);
    return scenario;
}

void validate_scenario(const Scenario& scenario) {
    if (scenario.tasks.empty()) throw data_error("scenario has no tasks");
    std::unordered_set<int> seen_classes;
    for (size_t t = 0; t < scenario.tasks.size(); ++t) {
        const TaskDataset& task = scenario.tasks[t];
        const std::string who = "task " + std::to_string(t);
        if (task.task_id != t)
            throw data_error(who + " carries id " + std::to_string(task.task_id) +
                             "; ids must be 0..T-1 in presentation order");
        if (task.n_classes() < 2) throw data_error(who + " has fewer than 2 classes");
        if (!task.inputs.defined() || task.inputs.rank() < 2 ||
            task.inputs.dim(0) != task.size())
            throw data_error(who + ": input rows do not match label count");
        if (task.global_indices.size() != task.size())
            throw data_error(who + ": global index count does not match label count");

        for (int g : task.global_classes)
            if (!seen_classes.insert(g).second)
                throw data_error("global class " + std::to_string(g) +
                                 " appears in more than one task");

        std::vector<char> used(task.n_classes(), 0);
        for (size_t i = 0; i < task.labels.size(); ++i) {
            const int label = task.labels[i];
            if (label < 0 || size_t(label) >= task.n_classes())
                throw data_error(who + ": label " + std::to_string(label) +
                                 " outside [0, " + std::to_string(task.n_classes()) + ")");
            used[size_t(label)] = 1;
        }
        for (size_t j = 0; j < used.size(); ++j)
            if (!used[j])
                throw data_error(who + ": within-task label " + std::to_string(j) +
                                 " has no rows");

        std::vector<int> cover(task.size(), 0);
        const auto mark_split = [&](const std::vector<size_t>& idx, const char* name) {
            for (size_t i : idx) {
                if (i >= task.size())
                    throw data_error(who + ": " + name + " index " + std::to_string(i) +
                                     " out of range");
                ++cover[i];
            }
        };
        mark_split(task.train_idx, "train");
        mark_split(task.val_idx, "val");
        mark_split(task.test_idx, "test");
        for (size_t i = 0; i < cover.size(); ++i)
            if (cover[i] != 1)
                throw data_error(who + ": row " + std::to_string(i) + " is covered " +
                                 std::to_string(cover[i]) + " times by the splits");
        if (task.train_idx.empty()) throw data_error(who + ": train split is empty");
        if (task.val_idx.empty()) throw data_error(who + ": validation split is empty");
        if (task.test_idx.empty()) throw data_error(who + ": test split is empty");
    }
}

Tensor gather_rows(const Tensor& inputs, const std::vector<size_t>& rows) {
    if (!inputs.defined() || inputs.rank() < 1)
        throw value_error("gather_rows: inputs must be a defined tensor");
    if (rows.empty()) throw value_error("gather_rows: empty row list");
    const size_t n = inputs.dim(0);
    const size_t row_numel = inputs.numel() / n;
    Shape shape = inputs.shape();
    shape[0] = rows.size();
    std::vector<float> values(rows.size() * row_numel);
    const std::vector<float>& src = inputs.data();
    for (size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n)
            throw value_error("gather_rows: row " + std::to_string(rows[r]) +
                              " out of range [0, " + std::to_string(n) + ")");
        std::copy_n(src.data() + rows[r] * row_numel, row_numel, values.data() + r * row_numel);
    }
    return Tensor::from_data(shape, std::move(values));
}

std::vector<int> gather_values(const std::vector<int>& values, const std::vector<size_t>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (size_t r : rows) {
        if (r >= values.size()) throw value_error("gather_values: index out of range");
        out.push_back(values[r]);
    }
    return out;
}

std::vector<size_t> gather_values(const std::vector<size_t>& values,
                                  const std::vector<size_t>& rows) {
    std::vector<size_t> out;
    out.reserve(rows.size());
    for (size_t r : rows) {
        if (r >= values.size()) throw value_error("gather_values: index out of range");
        out.push_back(values[r]);
    }
    return out;
}

} // namespace mark
