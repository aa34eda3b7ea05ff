// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mark/analysis.hpp"
#include "mark/model.hpp"
#include "mark/rng.hpp"
#include "mark/scenario.hpp"
#include "mark/sgd.hpp"

namespace mark {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which training recipe a run uses.  full_mark is the complete method:
/// knowledge base initialized on the first task, then per task feature
/// extraction, query, episodic update, re-query.  The others are ablations:
/// baseline trains the bare KB + per-task head sequentially; baseline_ml adds
/// the episodic KB update to that; baseline_mask adds mask functions but no
/// episodic update; no_retraining is full_mark without the post-update
/// re-query; feature_only trains just the per-task extractor with a head.
enum class Variant {
    full_mark,
    baseline,
    baseline_ml,
    baseline_mask,
    no_retraining,
    feature_only,
};

std::string to_string(Variant variant);
Variant variant_from_string(const std::string& name);
const std::vector<Variant>& all_variants();

/// Direction of the outer meta update.  `reptile` moves the KB toward the
/// adapted copies (KB += alpha * delta), which is what makes the episodic
/// phase add knowledge.  `paper` applies KB -= alpha * delta; it is kept
/// for comparison experiments even though it moves the KB away from the
/// adapted copies.
enum class MetaSign { reptile, paper };

std::string to_string(MetaSign sign);
MetaSign meta_sign_from_string(const std::string& name);

/// Knobs of the episodic KB update (the outer/inner meta loops).
struct MetaConfig {
    size_t K = 10;        // mini-tasks per outer iteration
    size_t H = 0;         // classes per mini-task; 0 = max(2, ceil(C/2))
    size_t h = 0;         // instances per class; 0 = min(64, smallest class)
    size_t E_inner = 40;  // inner-loop epochs per copy
    size_t E_outer = 15;  // outer iterations
    double inner_lr = 0.001;
    double alpha = 1.0;   // outer step size
    MetaSign meta_sign = MetaSign::reptile;
    bool inner_masks = true; // apply the task's (frozen) masks in the inner loop

    void validate() const;
    size_t resolve_H(size_t n_classes) const;
    size_t resolve_h(size_t smallest_class_count) const;
};

/// Knobs of the full training sequence.
struct TrainConfig {
    size_t init_epochs = 50;   // KB initialization on the first task
    size_t fe_epochs = 50;     // per-task feature extractor
    size_t query_epochs = 50;  // mask + head phases (query and re-query)
    size_t batch_size = 128;
    // Single-phase variants (baseline, baseline_mask, feature_only) get this
    // multiple of query_epochs so every variant trains each task for the
    // same total epoch budget as query + re-query.
    size_t epoch_multiplier = 2;
    size_t threads = 1;        // parallelism across inner-loop copies
    SgdConfig sgd;             // init / query / joint phases
    MetaConfig meta;
    bool record_events = true;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

/// Collects per-epoch evaluation events; can be constructed disabled to make
/// recording free.
class Recorder {
public:
    explicit Recorder(bool enabled = true) : enabled_(enabled) {}

    void record(size_t task, size_t epoch, const std::string& phase, const std::string& split,
                double accuracy, double loss);
    bool enabled() const { return enabled_; }
    const std::vector<EvalEvent>& events() const { return events_; }
    std::vector<EvalEvent> take() { return std::move(events_); }

private:
    bool enabled_;
    std::vector<EvalEvent> events_;
};

/// KB digest taken before and after one named training phase.  The digest may
/// change only across KB-writing phases (initialization and the episodic
/// update); everything else must leave it untouched.
struct KbHashEvent {
    size_t task = 0;
    std::string phase;
    std::string before;
    std::string after;
};

struct RunResult {
    Variant variant = Variant::full_mark;
    uint64_t seed = 0;
    AccuracyMatrix acc_matrix;
    double acc = 0.0;         // mean of the final matrix row
    double bwt_value = 0.0;   // 0 when bwt_defined is false
    bool bwt_defined = false; // false for single-task runs
    ParamCounts params;
    std::vector<EvalEvent> events;
    std::vector<KbSnapshot> kb_snapshots; // after model init, then after each task
    std::vector<std::string> kb_digests;  // same boundaries as kb_snapshots
    std::vector<KbHashEvent> kb_hash_log; // one entry per training phase
};

struct RunOutcome {
    RunResult result;
    ModelState model;
};

// ---------------------------------------------------------------------------
// Digests & evaluation
// ---------------------------------------------------------------------------

std::string kb_digest(const KnowledgeBase& kb);
std::string task_modules_digest(const TaskModules& mods);

struct EvalStats {
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Accuracy and mean loss of the variant's pipeline on the given rows of a
/// task, evaluated without building graphs.
EvalStats evaluate(ModelState& model, Variant variant, const TaskDataset& task,
                   const std::vector<size_t>& rows, size_t batch_size);

// ---------------------------------------------------------------------------
// Training phases
// ---------------------------------------------------------------------------

/// Trains the knowledge base end-to-end on the first task through a
/// throwaway linear head — no masks, no feature extractor, no episodic
/// machinery.  The head is discarded; only KB weights change.
void init_kb(ModelState& model, const TaskDataset& first_task, const TrainConfig& cfg,
             uint64_t seed, Recorder& rec);

/// Trains the task's feature extractor with a throwaway classifier on top;
/// no-op for frozen extractor variants (random weights, external table).
void train_feature_extractor(ModelState& model, size_t task_id, const TaskDataset& task,
                             const TrainConfig& cfg, uint64_t seed, Recorder& rec);

/// The query phase: trains the task's mask generator and classifier head
/// end-to-end against the frozen KB (and frozen extractor).  With use_masks
/// false it degrades to a head-only fit through identity masks, which is what
/// the baseline_ml variant uses after its KB update.
void query_phase(ModelState& model, size_t task_id, const TaskDataset& task,
                 const TrainConfig& cfg, size_t epochs, uint64_t seed, Recorder& rec,
                 const std::string& phase_name, bool use_masks = true);

// ---------------------------------------------------------------------------
// Episodic KB update
// ---------------------------------------------------------------------------

struct MiniTask {
    std::vector<size_t> rows; // indices into the task's inputs (train split)
};

struct MiniTaskSet {
    std::vector<MiniTask> minis;
    std::vector<size_t> val_rows; // shared validation batch for this iteration
};

/// Draws K mini-tasks of H classes x h instances (without replacement within
/// a mini-task) from the task's train split, plus one validation batch from
/// the task's validation split.  A class with fewer than h training rows is a
/// sampling error naming the class.
MiniTaskSet sample_minitasks(const TaskDataset& task, const MetaConfig& meta,
                             size_t batch_size, Rng& rng);

/// Adapts a deep copy of the KB and head on one mini-task for E_inner epochs
/// of momentum-free SGD.  The extractor and mask generator are read-only
/// here; pass mask_gen = nullptr to train through identity masks.
void inner_train(KnowledgeBase& kb_copy, ClassifierHead& head_copy, FeatureExtractor& fe,
                 const MaskGenerator* mask_gen, const TaskDataset& task,
                 const std::vector<size_t>& rows, const MetaConfig& meta, size_t batch_size,
                 Rng& rng);

/// Normalized accuracy weights: gamma_k = acc_k / sum_j acc_j, computed in
/// double precision.  All-zero accuracies fall back to uniform weights so the
/// vector always sums to 1.
std::vector<double> compute_gamma(const std::vector<double>& accs);

/// Per-parameter aggregated update, one double vector per KB parameter
/// tensor, index-aligned with KnowledgeBase::params().
using KbDelta = std::vector<std::vector<double>>;

/// delta = (1 / E_inner) * sum_k gamma_k * (copy_k − original), elementwise
/// in double precision.
KbDelta aggregate_delta(const KnowledgeBase& original, const std::vector<KnowledgeBase>& copies,
                        const std::vector<double>& gamma, size_t e_inner);

/// Applies the outer update: KB += alpha * delta under MetaSign::reptile,
/// KB -= alpha * delta under MetaSign::paper.
void meta_step(KnowledgeBase& kb, const KbDelta& delta, double alpha, MetaSign sign);

/// The full episodic update: E_outer iterations of {sample mini-tasks, adapt
/// K copies, weigh them by validation accuracy, aggregate, meta-step}.  Copy
/// adaptation may run on several threads; results are identical at any
/// thread count because every copy has its own derived RNG stream and the
/// reduction runs in index order.
void kb_update(ModelState& model, size_t task_id, const TaskDataset& task,
               const TrainConfig& cfg, uint64_t seed, Recorder& rec, bool use_masks = true);

// ---------------------------------------------------------------------------
// Sequence driver & retraining probe
// ---------------------------------------------------------------------------

/// Runs the whole task sequence under one variant and seed.  Evaluates every
/// seen task after each task, snapshots the KB at task boundaries, and
/// enforces the frozen-KB contract across all non-KB phases.
RunOutcome train_sequence(const Scenario& scenario, const ArchConfig& arch,
                          const TrainConfig& cfg, Variant variant, uint64_t seed,
                          const Tensor& embedding_table = {});

struct RetrainReport {
    std::vector<double> before;       // accuracy under the final KB, pre-retrain
    std::vector<double> after;        // accuracy after re-running the query phase
    std::vector<double> gain_initial; // after − accuracy recorded when first trained
    std::vector<double> gain_current; // after − before
};

/// Re-runs the query phase for every task against the final KB on cloned
/// masks/heads and reports the accuracy change, both against the accuracy
/// the task had when first trained (the diagonal of the accuracy matrix) and
/// against its current pre-retrain accuracy.  The model is left untouched.
RetrainReport retrain_gain(ModelState& model, const Scenario& scenario, const TrainConfig& cfg,
                           const AccuracyMatrix& matrix, uint64_t seed, Recorder* rec = nullptr);

} // namespace mark
