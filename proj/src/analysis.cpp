// SPDX-License-Identifier: Apache-2.0
#include "mark/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "mark/errors.hpp"
#include "mark/ops.hpp"

namespace mark {

// ---------------------------------------------------------------------------
// Accuracy matrix & sequence metrics
// ---------------------------------------------------------------------------

void AccuracyMatrix::add_row(std::vector<double> row) {
    if (row.size() != rows.size() + 1)
        throw metric_error("accuracy row " + std::to_string(rows.size()) + " must have " +
                           std::to_string(rows.size() + 1) + " entries, got " +
                           std::to_string(row.size()));
    for (double v : row)
        if (!(v >= 0.0 && v <= 1.0))
            throw metric_error("accuracy " + std::to_string(v) + " outside [0, 1]");
    rows.push_back(std::move(row));
}

double AccuracyMatrix::at(size_t after_task, size_t task) const {
    if (after_task >= rows.size() || task > after_task)
        throw metric_error("accuracy matrix entry (" + std::to_string(after_task) + ", " +
                           std::to_string(task) + ") is not set");
    return rows[after_task][task];
}

double avg_accuracy(const AccuracyMatrix& matrix) {
    if (matrix.rows.empty()) throw metric_error("average accuracy of an empty matrix");
    const std::vector<double>& last = matrix.rows.back();
    double sum = 0.0;
    for (double v : last) sum += v;
    return sum / double(last.size());
}

double bwt(const AccuracyMatrix& matrix) {
    const size_t T = matrix.n_tasks();
    if (T < 2) throw metric_error("backward transfer needs at least 2 tasks, got " +
                                  std::to_string(T));
    double sum = 0.0;
    for (size_t i = 0; i + 1 < T; ++i) sum += matrix.rows[T - 1][i] - matrix.rows[i][i];
    return sum / double(T - 1);
}

// ---------------------------------------------------------------------------
// Weight-update tracking
// ---------------------------------------------------------------------------

KbSnapshot snapshot_kb(const KnowledgeBase& kb) {
    KbSnapshot snap;
    snap.blocks.reserve(kb.blocks.size() + 1);
    for (const KbBlock& block : kb.blocks) {
        std::vector<float> values;
        values.reserve(block.w.numel() + block.b.numel());
        values.insert(values.end(), block.w.data().begin(), block.w.data().end());
        values.insert(values.end(), block.b.data().begin(), block.b.data().end());
        snap.blocks.push_back(std::move(values));
    }
    std::vector<float> trunk;
    trunk.reserve(kb.trunk_w.numel() + kb.trunk_b.numel());
    trunk.insert(trunk.end(), kb.trunk_w.data().begin(), kb.trunk_w.data().end());
    trunk.insert(trunk.end(), kb.trunk_b.data().begin(), kb.trunk_b.data().end());
    snap.blocks.push_back(std::move(trunk));
    return snap;
}

std::vector<double> weight_update_fraction(const KbSnapshot& before, const KbSnapshot& after,
                                           double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw value_error("weight_update_fraction: tau must be positive and finite");
    if (before.blocks.size() != after.blocks.size())
        throw shape_error("weight_update_fraction: snapshots have different block counts");
    std::vector<double> fractions;
    fractions.reserve(before.blocks.size());
    for (size_t b = 0; b < before.blocks.size(); ++b) {
        if (before.blocks[b].size() != after.blocks[b].size())
            throw shape_error("weight_update_fraction: block " + std::to_string(b) +
                              " sizes differ");
        size_t moved = 0;
        for (size_t i = 0; i < before.blocks[b].size(); ++i) {
            const double diff = double(after.blocks[b][i]) - double(before.blocks[b][i]);
            if (std::abs(diff) > tau) ++moved;
        }
        fractions.push_back(before.blocks[b].empty()
                                ? 0.0
                                : double(moved) / double(before.blocks[b].size()));
    }
    return fractions;
}

// ---------------------------------------------------------------------------
// Learning curves
// ---------------------------------------------------------------------------

std::vector<double> learning_curve(const std::vector<EvalEvent>& events,
                                   const std::string& phase, const std::string& split) {
    // Per task, epoch-indexed accuracies for the requested phase/split.
    std::vector<std::vector<double>> per_task;
    std::vector<std::vector<bool>> seen;
    bool any = false;
    for (const EvalEvent& e : events) {
        if (e.phase != phase || e.split != split) continue;
        if (e.epoch == 0) throw metric_error("learning_curve: epoch numbers are 1-based");
        any = true;
        if (e.task >= per_task.size()) {
            per_task.resize(e.task + 1);
            seen.resize(e.task + 1);
        }
        if (e.epoch > per_task[e.task].size()) {
            per_task[e.task].resize(e.epoch, 0.0);
            seen[e.task].resize(e.epoch, false);
        }
        per_task[e.task][e.epoch - 1] = e.accuracy;
        seen[e.task][e.epoch - 1] = true;
    }
    if (!any)
        throw metric_error("learning_curve: no '" + split + "' events for phase '" + phase +
                           "'");
    size_t longest = 0;
    for (const auto& series : per_task) longest = std::max(longest, series.size());
    std::vector<double> curve(longest, 0.0);
    for (size_t e = 0; e < longest; ++e) {
        double sum = 0.0;
        size_t n = 0;
        for (size_t t = 0; t < per_task.size(); ++t) {
            if (e < per_task[t].size() && seen[t][e]) {
                sum += per_task[t][e];
                ++n;
            }
        }
        if (n == 0) throw metric_error("learning_curve: epoch " + std::to_string(e + 1) +
                                       " has no events");
        curve[e] = sum / double(n);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Critical dimensions
// ---------------------------------------------------------------------------

size_t CriticalReport::count(Impact c, int block) const {
    size_t n = 0;
    for (size_t d = 0; d < impact_class.size(); ++d)
        if (impact_class[d] == int(c) && (block < 0 || block_of_dim[d] == block)) ++n;
    return n;
}

namespace {

std::vector<std::vector<size_t>> chunk_rows(const std::vector<size_t>& rows, size_t batch_size) {
    std::vector<std::vector<size_t>> chunks;
    for (size_t i = 0; i < rows.size(); i += batch_size) {
        const size_t end = std::min(i + batch_size, rows.size());
        chunks.emplace_back(rows.begin() + ptrdiff_t(i), rows.begin() + ptrdiff_t(end));
    }
    return chunks;
}

} // namespace

CriticalReport critical_dimensions(ModelState& model, const TaskDataset& task,
                                   double threshold_points, size_t batch_size) {
    if (!(threshold_points > 0.0) || !std::isfinite(threshold_points))
        throw value_error("critical_dimensions: threshold must be positive and finite");
    if (batch_size == 0) throw value_error("critical_dimensions: batch_size must be positive");
    if (task.test_idx.empty())
        throw value_error("critical_dimensions: task has no test rows");

    NoGradGuard guard;
    TaskModules& mods = model.tasks.at(task.task_id);
    const std::vector<size_t>& widths = mods.mask.splits;

    // Evaluate once per chunk, keeping the generated masks so that each probe
    // only has to re-run the KB with one channel silenced.
    struct Chunk {
        Tensor batch;
        std::vector<int> labels;
        std::vector<Tensor> masks;
    };
    std::vector<Chunk> chunks;
    double base_correct = 0.0;
    size_t total = 0;
    for (const auto& rows : chunk_rows(task.test_idx, batch_size)) {
        Chunk c;
        c.batch = gather_rows(task.inputs, rows);
        c.labels = gather_values(task.labels, rows);
        const std::vector<size_t> gidx = gather_values(task.global_indices, rows);
        const Tensor features = extract_features(mods.fe, c.batch, &gidx, false);
        c.masks = generate_masks(mods.mask, features);
        const Tensor logits =
            classify(mods.head, kb_forward(model.kb, c.batch, c.masks));
        base_correct += accuracy(logits, c.labels) * double(rows.size());
        total += rows.size();
        chunks.push_back(std::move(c));
    }

    CriticalReport rep;
    rep.threshold_points = threshold_points;
    rep.base_accuracy = base_correct / double(total);
    const double threshold = threshold_points / 100.0;

    for (size_t b = 0; b < widths.size(); ++b) {
        for (size_t ch = 0; ch < widths[b]; ++ch) {
            double correct = 0.0;
            for (const Chunk& c : chunks) {
                // Same masks with one channel forced to zero for every sample.
                std::vector<float> gated = c.masks[b].data();
                const size_t width = widths[b];
                for (size_t r = 0; r < c.masks[b].dim(0); ++r) gated[r * width + ch] = 0.0f;
                std::vector<Tensor> masks = c.masks;
                masks[b] = Tensor::from_data(c.masks[b].shape(), std::move(gated));
                const Tensor logits =
                    classify(mods.head, kb_forward(model.kb, c.batch, masks));
                correct += accuracy(logits, c.labels) * double(c.labels.size());
            }
            const double drop = rep.base_accuracy - correct / double(total);
            rep.block_of_dim.push_back(int(b));
            rep.drop.push_back(drop);
            if (drop >= threshold)
                rep.impact_class.push_back(CriticalReport::critical);
            else if (drop > 0.0)
                rep.impact_class.push_back(CriticalReport::impact);
            else
                rep.impact_class.push_back(CriticalReport::none);
        }
    }
    return rep;
}

std::vector<size_t> shared_critical_modules(const std::vector<CriticalReport>& reports) {
    if (reports.empty()) throw value_error("shared_critical_modules: no reports");
    const size_t dims = reports.front().impact_class.size();
    std::vector<size_t> counts(dims, 0);
    for (const CriticalReport& rep : reports) {
        if (rep.impact_class.size() != dims)
            throw shape_error("shared_critical_modules: reports cover different mask sizes");
        for (size_t d = 0; d < dims; ++d)
            if (rep.impact_class[d] == CriticalReport::critical) ++counts[d];
    }
    return counts;
}

} // namespace mark
