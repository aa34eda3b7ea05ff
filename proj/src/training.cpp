// SPDX-License-Identifier: Apache-2.0
#include "mark/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <memory>
#include <thread>
#include <utility>

#include "mark/errors.hpp"
#include "mark/hash.hpp"
#include "mark/ops.hpp"

namespace mark {

// ---------------------------------------------------------------------------
// Enum conversions
// ---------------------------------------------------------------------------

std::string to_string(Variant variant) {
    switch (variant) {
        case Variant::full_mark: return "full_mark";
        case Variant::baseline: return "baseline";
        case Variant::baseline_ml: return "baseline_ml";
        case Variant::baseline_mask: return "baseline_mask";
        case Variant::no_retraining: return "no_retraining";
        case Variant::feature_only: return "feature_only";
    }
    throw value_error("unknown variant value");
}

Variant variant_from_string(const std::string& name) {
    for (Variant v : all_variants())
        if (to_string(v) == name) return v;
    throw config_error("unknown variant '" + name +
                       "' (expected full_mark, baseline, baseline_ml, baseline_mask, "
                       "no_retraining or feature_only)");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> order = {
        Variant::full_mark,     Variant::baseline,      Variant::baseline_ml,
        Variant::baseline_mask, Variant::no_retraining, Variant::feature_only,
    };
    return order;
}

std::string to_string(MetaSign sign) {
    return sign == MetaSign::reptile ? "reptile" : "paper";
}

MetaSign meta_sign_from_string(const std::string& name) {
    if (name == "reptile") return MetaSign::reptile;
    if (name == "paper") return MetaSign::paper;
    throw config_error("unknown meta_sign '" + name + "' (expected reptile or paper)");
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void MetaConfig::validate() const {
    if (K < 1) throw config_error("meta: K must be at least 1, got " + std::to_string(K));
    if (E_inner < 1)
        throw config_error("meta: E_inner must be at least 1, got " + std::to_string(E_inner));
    // Zero is legal for inner_lr and alpha: both degenerate into an exact
    // no-op update, which the property tests rely on.
    if (!(inner_lr >= 0.0) || !std::isfinite(inner_lr))
        throw config_error("meta: inner_lr must be finite and >= 0, got " +
                           std::to_string(inner_lr));
    if (!std::isfinite(alpha))
        throw config_error("meta: alpha must be finite, got " + std::to_string(alpha));
}

size_t MetaConfig::resolve_H(size_t n_classes) const {
    if (n_classes < 1) throw value_error("meta: task has no classes");
    if (H != 0) {
        if (H > n_classes)
            throw config_error("meta: H=" + std::to_string(H) + " classes per mini-task, task has only " +
                               std::to_string(n_classes));
        return H;
    }
    return std::min(n_classes, std::max<size_t>(2, (n_classes + 1) / 2));
}

size_t MetaConfig::resolve_h(size_t smallest_class_count) const {
    if (h != 0) return h;
    return std::max<size_t>(1, std::min<size_t>(64, smallest_class_count));
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw config_error("train: batch_size must be at least 1");
    if (epoch_multiplier < 1) throw config_error("train: epoch_multiplier must be at least 1");
    if (threads < 1) throw config_error("train: threads must be at least 1");
    sgd.validate();
    meta.validate();
}

// ---------------------------------------------------------------------------
// Recorder & digests
// ---------------------------------------------------------------------------

void Recorder::record(size_t task, size_t epoch, const std::string& phase,
                      const std::string& split, double accuracy, double loss) {
    if (!enabled_) return;
    events_.push_back({task, epoch, phase, split, accuracy, loss});
}

namespace {

void hash_tensor(Fnv1a& h, const Tensor& t) {
    if (!t.defined()) {
        h.update_value(uint64_t(0));
        return;
    }
    h.update_value(uint64_t(t.rank() + 1));
    for (size_t d : t.shape()) h.update_value(uint64_t(d));
    h.update(t.data().data(), t.data().size() * sizeof(float));
}

void hash_floats(Fnv1a& h, const std::vector<float>& v) {
    h.update_value(uint64_t(v.size()));
    h.update(v.data(), v.size() * sizeof(float));
}

} // namespace

std::string kb_digest(const KnowledgeBase& kb) {
    Fnv1a h;
    h.update_value(uint64_t(kb.kind));
    for (size_t c : kb.channels) h.update_value(uint64_t(c));
    for (const Tensor& p : kb.params()) hash_tensor(h, p);
    return h.hex();
}

std::string task_modules_digest(const TaskModules& mods) {
    Fnv1a h;
    h.update_value(uint64_t(mods.n_classes));
    const FeatureExtractor& fe = mods.fe;
    hash_tensor(h, fe.conv1_k);
    hash_tensor(h, fe.conv1_b);
    hash_tensor(h, fe.conv2_k);
    hash_tensor(h, fe.conv2_b);
    hash_tensor(h, fe.bn1_gamma);
    hash_tensor(h, fe.bn1_beta);
    hash_tensor(h, fe.bn2_gamma);
    hash_tensor(h, fe.bn2_beta);
    hash_floats(h, fe.bn1_state.running_mean);
    hash_floats(h, fe.bn1_state.running_var);
    hash_floats(h, fe.bn2_state.running_mean);
    hash_floats(h, fe.bn2_state.running_var);
    hash_tensor(h, fe.fc1_w);
    hash_tensor(h, fe.fc1_b);
    hash_tensor(h, fe.fc_w);
    hash_tensor(h, fe.fc_b);
    hash_tensor(h, mods.mask.weights);
    hash_tensor(h, mods.mask.bias);
    hash_tensor(h, mods.head.weights);
    hash_tensor(h, mods.head.bias);
    return h.hex();
}

// ---------------------------------------------------------------------------
// Internal machinery
// ---------------------------------------------------------------------------

namespace {

// Seed-stream tags; every phase, task, outer iteration and inner copy gets
// its own derived stream so results never depend on execution interleaving.
constexpr uint64_t kTagModel = 0x4D31;
constexpr uint64_t kTagTask = 0x4D32;
constexpr uint64_t kTagInit = 0x4D33;
constexpr uint64_t kTagFe = 0x4D34;
constexpr uint64_t kTagQuery = 0x4D35;
constexpr uint64_t kTagUpdate = 0x4D36;
constexpr uint64_t kTagRequery = 0x4D37;
constexpr uint64_t kTagJoint = 0x4D38;
constexpr uint64_t kTagFinetune = 0x4D39;
constexpr uint64_t kTagRetrain = 0x4D3A;
constexpr uint64_t kTagTempHead = 0x4D3B;
constexpr uint64_t kTagBatches = 0x4D3C;
constexpr uint64_t kTagSample = 0x4D3D;
constexpr uint64_t kTagInnerCopy = 0x4D3E;

/// Temporarily clears requires_grad on a parameter set.  While cleared the
/// parameters are invisible to graph recording, so concurrent backward
/// passes through modules that share them never touch their gradients.
class ScopedFreeze {
public:
    explicit ScopedFreeze(const std::vector<Tensor>& params) {
        saved_.reserve(params.size());
        for (const Tensor& p : params) {
            if (!p.defined()) continue;
            saved_.emplace_back(p.node(), p.node()->requires_grad);
            p.node()->requires_grad = false;
        }
    }
    ~ScopedFreeze() {
        for (auto& [node, was] : saved_) node->requires_grad = was;
    }
    ScopedFreeze(const ScopedFreeze&) = delete;
    ScopedFreeze& operator=(const ScopedFreeze&) = delete;

private:
    std::vector<std::pair<std::shared_ptr<TensorNode>, bool>> saved_;
};

std::vector<Tensor> trainable(std::vector<Tensor> params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (Tensor& p : params)
        if (p.defined() && p.requires_grad()) out.push_back(std::move(p));
    return out;
}

std::vector<Tensor> concat_params(std::vector<Tensor> a, const std::vector<Tensor>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

/// Fixed-size batches over the given rows.  A trailing single-row batch is
/// merged into its predecessor: training-mode batch statistics are undefined
/// over one sample.
std::vector<std::vector<size_t>> make_batches(const std::vector<size_t>& rows,
                                              size_t batch_size) {
    std::vector<std::vector<size_t>> batches;
    for (size_t i = 0; i < rows.size(); i += batch_size) {
        const size_t end = std::min(i + batch_size, rows.size());
        batches.emplace_back(rows.begin() + ptrdiff_t(i), rows.begin() + ptrdiff_t(end));
    }
    if (batches.size() >= 2 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

/// Forward pass of some pipeline on a batch: `rows` are the task-row indices
/// behind `batch`, needed by embedding-table extractors.
using LogitsFn =
    std::function<Tensor(const Tensor& batch, const std::vector<size_t>& rows, bool training)>;

EvalStats eval_rows(const LogitsFn& fn, const TaskDataset& task,
                    const std::vector<size_t>& rows, size_t batch_size) {
    if (rows.empty()) throw value_error("evaluate: no rows to evaluate");
    NoGradGuard no_grad;
    size_t correct = 0;
    double loss_sum = 0.0;
    for (size_t i = 0; i < rows.size(); i += batch_size) {
        const size_t end = std::min(i + batch_size, rows.size());
        const std::vector<size_t> chunk(rows.begin() + ptrdiff_t(i),
                                        rows.begin() + ptrdiff_t(end));
        const Tensor batch = gather_rows(task.inputs, chunk);
        const std::vector<int> labels = gather_values(task.labels, chunk);
        const Tensor logits = fn(batch, chunk, false);
        const std::vector<int> preds = argmax_rows(logits);
        for (size_t r = 0; r < preds.size(); ++r)
            if (preds[r] == labels[r]) ++correct;
        loss_sum += cross_entropy(logits, labels).item64() * double(chunk.size());
    }
    EvalStats stats;
    stats.accuracy = double(correct) / double(rows.size());
    stats.loss = loss_sum / double(rows.size());
    return stats;
}

/// Epoch loop shared by every training phase: shuffle, batch, forward,
/// backward, SGD step, then (when recording) evaluate all three splits.
/// Optimizer state starts fresh — velocity does not leak across phases.
void run_training_phase(size_t task_label, const std::string& phase, const TaskDataset& task,
                        size_t epochs, size_t batch_size, const SgdConfig& sgd,
                        std::vector<Tensor> params, const LogitsFn& fn, uint64_t seed,
                        Recorder& rec) {
    params = trainable(std::move(params));
    for (Tensor& p : params) p.node()->velocity.clear();
    if (task.train_idx.empty())
        throw data_error("phase '" + phase + "': task " + std::to_string(task.task_id) +
                         " has no training rows");
    Rng rng(derive_seed(seed, {kTagBatches}));
    for (size_t epoch = 1; epoch <= epochs; ++epoch) {
        std::vector<size_t> order(task.train_idx);
        rng.shuffle(order);
        for (const std::vector<size_t>& batch_rows : make_batches(order, batch_size)) {
            const Tensor batch = gather_rows(task.inputs, batch_rows);
            const std::vector<int> labels = gather_values(task.labels, batch_rows);
            const Tensor logits = fn(batch, batch_rows, true);
            const Tensor loss = cross_entropy(logits, labels);
            assert_finite(loss, "phase '" + phase + "' loss");
            for (Tensor& p : params) p.zero_grad();
            backward(loss);
            sgd_step(params, sgd);
        }
        if (rec.enabled()) {
            const EvalStats train = eval_rows(fn, task, task.train_idx, batch_size);
            const EvalStats val = eval_rows(fn, task, task.val_idx, batch_size);
            const EvalStats test = eval_rows(fn, task, task.test_idx, batch_size);
            rec.record(task_label, epoch, phase, "train", train.accuracy, train.loss);
            rec.record(task_label, epoch, phase, "val", val.accuracy, val.loss);
            rec.record(task_label, epoch, phase, "test", test.accuracy, test.loss);
        }
    }
}

TaskModules& task_modules(ModelState& model, size_t task_id) {
    if (task_id >= model.tasks.size())
        throw value_error("task " + std::to_string(task_id) + " has no modules (model has " +
                          std::to_string(model.tasks.size()) + " tasks)");
    return model.tasks[task_id];
}

/// Pipeline closure for the variant's evaluation/training path that keeps
/// the knowledge base trainable (joint phases) or relies on the caller
/// having frozen it (query phases).
LogitsFn masked_pipeline(ModelState& model, size_t task_id, const TaskDataset& task) {
    return [&model, task_id, &task](const Tensor& batch, const std::vector<size_t>& rows,
                                    bool training) {
        const std::vector<size_t> gidx = gather_values(task.global_indices, rows);
        return task_logits(model, task_id, batch, &gidx, training);
    };
}

LogitsFn plain_kb_pipeline(ModelState& model, size_t task_id) {
    return [&model, task_id](const Tensor& batch, const std::vector<size_t>&, bool) {
        TaskModules& mods = task_modules(model, task_id);
        return classify(mods.head,
                        kb_forward(model.kb, batch, identity_masks(model.kb, batch.dim(0))));
    };
}

LogitsFn feature_pipeline(ModelState& model, size_t task_id, const TaskDataset& task) {
    return [&model, task_id, &task](const Tensor& batch, const std::vector<size_t>& rows,
                                    bool training) {
        TaskModules& mods = task_modules(model, task_id);
        const std::vector<size_t> gidx = gather_values(task.global_indices, rows);
        return classify(mods.head, extract_features(mods.fe, batch, &gidx, training));
    };
}

LogitsFn variant_pipeline(ModelState& model, Variant variant, size_t task_id,
                          const TaskDataset& task) {
    switch (variant) {
        case Variant::full_mark:
        case Variant::baseline_mask:
        case Variant::no_retraining:
            return masked_pipeline(model, task_id, task);
        case Variant::baseline:
        case Variant::baseline_ml:
            return plain_kb_pipeline(model, task_id);
        case Variant::feature_only:
            return feature_pipeline(model, task_id, task);
    }
    throw value_error("unknown variant value");
}

/// Runs fn(0..K-1) across up to `threads` workers (strided assignment) and
/// rethrows the lowest-index failure.  Each index must be independent.
void parallel_for_k(size_t K, size_t threads, const std::function<void(size_t)>& fn) {
    const size_t workers = std::min(std::max<size_t>(threads, 1), K);
    if (workers <= 1) {
        for (size_t k = 0; k < K; ++k) fn(k);
        return;
    }
    std::vector<std::exception_ptr> errors(K);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (size_t k = w; k < K; k += workers) {
                try {
                    fn(k);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    for (std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalStats evaluate(ModelState& model, Variant variant, const TaskDataset& task,
                   const std::vector<size_t>& rows, size_t batch_size) {
    if (batch_size == 0) throw value_error("evaluate: batch_size must be positive");
    task_modules(model, task.task_id);
    return eval_rows(variant_pipeline(model, variant, task.task_id, task), task, rows,
                     batch_size);
}

// ---------------------------------------------------------------------------
// Training phases
// ---------------------------------------------------------------------------

void init_kb(ModelState& model, const TaskDataset& first_task, const TrainConfig& cfg,
             uint64_t seed, Recorder& rec) {
    if (first_task.size() == 0 || first_task.train_idx.empty())
        throw data_error("init_kb: first task has no training data");
    Rng head_rng(derive_seed(seed, {kTagTempHead}));
    ClassifierHead tmp_head = make_classifier_head(model.arch, first_task.n_classes(), head_rng);
    LogitsFn fn = [&model, &tmp_head](const Tensor& batch, const std::vector<size_t>&, bool) {
        return classify(tmp_head,
                        kb_forward(model.kb, batch, identity_masks(model.kb, batch.dim(0))));
    };
    run_training_phase(first_task.task_id, "init_kb", first_task, cfg.init_epochs,
                       cfg.batch_size, cfg.sgd,
                       concat_params(model.kb.params(), tmp_head.params()), fn, seed, rec);
    // tmp_head goes out of scope here — only the KB keeps what it learned.
}

void train_feature_extractor(ModelState& model, size_t task_id, const TaskDataset& task,
                             const TrainConfig& cfg, uint64_t seed, Recorder& rec) {
    TaskModules& mods = task_modules(model, task_id);
    if (mods.fe.variant != FeVariant::task_trained || mods.fe.frozen) {
        mods.fe.freeze(); // frozen variants: ensure eval-mode semantics, nothing to train
        return;
    }
    Rng head_rng(derive_seed(seed, {kTagTempHead}));
    ClassifierHead tmp_head = make_linear_head(model.arch.embed_dim, task.n_classes(), head_rng);
    LogitsFn fn = [&model, &mods, &tmp_head, &task](const Tensor& batch,
                                                    const std::vector<size_t>& rows,
                                                    bool training) {
        const std::vector<size_t> gidx = gather_values(task.global_indices, rows);
        return classify(tmp_head, extract_features(mods.fe, batch, &gidx, training));
    };
    run_training_phase(task_id, "feature_extractor", task, cfg.fe_epochs, cfg.batch_size,
                       cfg.sgd, concat_params(mods.fe.params(), tmp_head.params()), fn, seed,
                       rec);
    mods.fe.freeze();
}

void query_phase(ModelState& model, size_t task_id, const TaskDataset& task,
                 const TrainConfig& cfg, size_t epochs, uint64_t seed, Recorder& rec,
                 const std::string& phase_name, bool use_masks) {
    TaskModules& mods = task_modules(model, task_id);
    // Structural freeze: invisible to graph recording, the KB cannot receive
    // gradients here no matter what the pipeline does.
    ScopedFreeze freeze_kb(model.kb.params());
    std::vector<Tensor> params =
        use_masks ? concat_params(mods.mask.params(), mods.head.params()) : mods.head.params();
    LogitsFn fn = use_masks ? masked_pipeline(model, task_id, task)
                            : plain_kb_pipeline(model, task_id);
    run_training_phase(task_id, phase_name, task, epochs, cfg.batch_size, cfg.sgd,
                       std::move(params), fn, seed, rec);
}

// ---------------------------------------------------------------------------
// Episodic KB update
// ---------------------------------------------------------------------------

MiniTaskSet sample_minitasks(const TaskDataset& task, const MetaConfig& meta,
                             size_t batch_size, Rng& rng) {
    meta.validate();
    if (batch_size == 0) throw value_error("sample_minitasks: batch_size must be positive");
    if (task.val_idx.empty())
        throw data_error("sample_minitasks: task " + std::to_string(task.task_id) +
                         " has no validation split");
    const size_t n_classes = task.n_classes();
    const size_t H = meta.resolve_H(n_classes);

    std::vector<std::vector<size_t>> by_class(n_classes);
    for (size_t r : task.train_idx) by_class[size_t(task.labels[r])].push_back(r);
    size_t smallest = SIZE_MAX;
    for (const auto& pool : by_class) smallest = std::min(smallest, pool.size());
    const size_t h = meta.resolve_h(smallest);

    MiniTaskSet set;
    set.minis.reserve(meta.K);
    for (size_t k = 0; k < meta.K; ++k) {
        MiniTask mini;
        mini.rows.reserve(H * h);
        const std::vector<int64_t> classes =
            rng.sample_without_replacement(int64_t(n_classes), int64_t(H));
        for (int64_t c : classes) {
            const std::vector<size_t>& pool = by_class[size_t(c)];
            if (pool.size() < h)
                throw data_error("mini-task sampling needs " + std::to_string(h) +
                                 " training instances of class " + std::to_string(c) +
                                 " (global " + std::to_string(task.global_classes[size_t(c)]) +
                                 "), found " + std::to_string(pool.size()));
            for (int64_t i : rng.sample_without_replacement(int64_t(pool.size()), int64_t(h)))
                mini.rows.push_back(pool[size_t(i)]);
        }
        set.minis.push_back(std::move(mini));
    }

    const size_t n_val = std::min(batch_size, task.val_idx.size());
    for (int64_t i : rng.sample_without_replacement(int64_t(task.val_idx.size()), int64_t(n_val)))
        set.val_rows.push_back(task.val_idx[size_t(i)]);
    return set;
}

void inner_train(KnowledgeBase& kb_copy, ClassifierHead& head_copy, FeatureExtractor& fe,
                 const MaskGenerator* mask_gen, const TaskDataset& task,
                 const std::vector<size_t>& rows, const MetaConfig& meta, size_t batch_size,
                 Rng& rng) {
    if (rows.empty()) throw data_error("inner_train: mini-task has no rows");
    // Momentum-free plain SGD: the aggregated delta must be the bare sum of
    // gradient steps, with no optimizer state mixed in.
    SgdConfig inner_sgd;
    inner_sgd.learning_rate = meta.inner_lr;
    inner_sgd.momentum = 0.0;
    inner_sgd.weight_decay = 0.0;
    std::vector<Tensor> params = concat_params(kb_copy.params(), head_copy.params());
    for (size_t epoch = 0; epoch < meta.E_inner; ++epoch) {
        std::vector<size_t> order(rows);
        rng.shuffle(order);
        for (const std::vector<size_t>& batch_rows : make_batches(order, batch_size)) {
            const Tensor batch = gather_rows(task.inputs, batch_rows);
            const std::vector<int> labels = gather_values(task.labels, batch_rows);
            std::vector<Tensor> masks;
            if (mask_gen != nullptr) {
                const std::vector<size_t> gidx = gather_values(task.global_indices, batch_rows);
                masks = generate_masks(*mask_gen, extract_features(fe, batch, &gidx, false));
            } else {
                masks = identity_masks(kb_copy, batch_rows.size());
            }
            const Tensor logits = classify(head_copy, kb_forward(kb_copy, batch, masks));
            const Tensor loss = cross_entropy(logits, labels);
            assert_finite(loss, "inner_train loss");
            for (Tensor& p : params) p.zero_grad();
            backward(loss);
            sgd_step(params, inner_sgd);
        }
    }
}

std::vector<double> compute_gamma(const std::vector<double>& accs) {
    if (accs.empty()) throw value_error("compute_gamma: no accuracies");
    double sum = 0.0;
    for (double a : accs) {
        if (!(a >= 0.0 && a <= 1.0))
            throw value_error("compute_gamma: accuracy " + std::to_string(a) +
                              " outside [0, 1]");
        sum += a;
    }
    std::vector<double> gamma(accs.size());
    if (sum == 0.0) {
        std::fill(gamma.begin(), gamma.end(), 1.0 / double(accs.size()));
    } else {
        for (size_t k = 0; k < accs.size(); ++k) gamma[k] = accs[k] / sum;
    }
    return gamma;
}

KbDelta aggregate_delta(const KnowledgeBase& original, const std::vector<KnowledgeBase>& copies,
                        const std::vector<double>& gamma, size_t e_inner) {
    if (copies.empty()) throw value_error("aggregate_delta: no adapted copies");
    if (copies.size() != gamma.size())
        throw shape_error("aggregate_delta: " + std::to_string(copies.size()) + " copies but " +
                          std::to_string(gamma.size()) + " weights");
    if (e_inner == 0) throw value_error("aggregate_delta: E_inner must be positive");

    const std::vector<Tensor> base = original.params();
    KbDelta delta(base.size());
    for (size_t p = 0; p < base.size(); ++p) delta[p].assign(base[p].numel(), 0.0);

    for (size_t k = 0; k < copies.size(); ++k) {
        const std::vector<Tensor> adapted = copies[k].params();
        if (adapted.size() != base.size())
            throw shape_error("aggregate_delta: copy " + std::to_string(k) +
                              " has a different parameter count");
        for (size_t p = 0; p < base.size(); ++p) {
            if (adapted[p].shape() != base[p].shape())
                throw shape_error("aggregate_delta: copy " + std::to_string(k) +
                                  " parameter " + std::to_string(p) + " has shape " +
                                  shape_str(adapted[p].shape()) + ", expected " +
                                  shape_str(base[p].shape()));
            const std::vector<float>& a = adapted[p].data();
            const std::vector<float>& b = base[p].data();
            for (size_t i = 0; i < a.size(); ++i)
                delta[p][i] += gamma[k] * (double(a[i]) - double(b[i]));
        }
    }
    const double inv = 1.0 / double(e_inner);
    for (auto& block : delta)
        for (double& v : block) v *= inv;
    return delta;
}

void meta_step(KnowledgeBase& kb, const KbDelta& delta, double alpha, MetaSign sign) {
    std::vector<Tensor> params = kb.params();
    if (delta.size() != params.size())
        throw shape_error("meta_step: delta has " + std::to_string(delta.size()) +
                          " blocks for " + std::to_string(params.size()) + " parameters");
    const double direction = sign == MetaSign::reptile ? alpha : -alpha;
    for (size_t p = 0; p < params.size(); ++p) {
        if (delta[p].size() != params[p].numel())
            throw shape_error("meta_step: delta block " + std::to_string(p) + " has " +
                              std::to_string(delta[p].size()) + " values for " +
                              std::to_string(params[p].numel()) + " weights");
        std::vector<float>& w = params[p].data();
        for (size_t i = 0; i < w.size(); ++i) {
            const double step = direction * delta[p][i];
            // Skip exact-zero steps so a no-op update is bitwise identity
            // (adding 0.0 would flip the sign of a -0.0 weight).
            if (step != 0.0) w[i] = float(double(w[i]) + step);
        }
    }
}

void kb_update(ModelState& model, size_t task_id, const TaskDataset& task,
               const TrainConfig& cfg, uint64_t seed, Recorder& rec, bool use_masks) {
    cfg.validate();
    TaskModules& mods = task_modules(model, task_id);
    // The extractor and mask generator are shared read-only by the parallel
    // copies; freezing removes them from every recorded graph, making the
    // shared reads race-free.
    ScopedFreeze freeze_fe(mods.fe.params());
    ScopedFreeze freeze_mask(use_masks ? mods.mask.params() : std::vector<Tensor>{});

    for (size_t outer = 0; outer < cfg.meta.E_outer; ++outer) {
        Rng sample_rng(derive_seed(seed, {kTagSample, outer}));
        const MiniTaskSet set = sample_minitasks(task, cfg.meta, cfg.batch_size, sample_rng);

        const Tensor val_batch = gather_rows(task.inputs, set.val_rows);
        const std::vector<int> val_labels = gather_values(task.labels, set.val_rows);
        std::vector<Tensor> val_masks;
        {
            NoGradGuard no_grad;
            if (use_masks) {
                const std::vector<size_t> gidx = gather_values(task.global_indices, set.val_rows);
                val_masks = generate_masks(
                    mods.mask, extract_features(mods.fe, val_batch, &gidx, false));
            } else {
                val_masks = identity_masks(model.kb, set.val_rows.size());
            }
        }

        const std::string digest_before = kb_digest(model.kb);
        std::vector<KnowledgeBase> kb_copies;
        std::vector<ClassifierHead> head_copies;
        kb_copies.reserve(cfg.meta.K);
        head_copies.reserve(cfg.meta.K);
        for (size_t k = 0; k < cfg.meta.K; ++k) {
            kb_copies.push_back(clone(model.kb));
            head_copies.push_back(clone(mods.head));
        }

        parallel_for_k(cfg.meta.K, cfg.threads, [&](size_t k) {
            Rng rng(derive_seed(seed, {kTagInnerCopy, outer, k}));
            inner_train(kb_copies[k], head_copies[k], mods.fe,
                        use_masks ? &mods.mask : nullptr, task, set.minis[k].rows, cfg.meta,
                        cfg.batch_size, rng);
        });

        std::vector<double> accs(cfg.meta.K);
        double loss_sum = 0.0;
        {
            NoGradGuard no_grad;
            for (size_t k = 0; k < cfg.meta.K; ++k) {
                const Tensor logits =
                    classify(head_copies[k], kb_forward(kb_copies[k], val_batch, val_masks));
                accs[k] = accuracy(logits, val_labels);
                loss_sum += cross_entropy(logits, val_labels).item64();
            }
        }
        if (kb_digest(model.kb) != digest_before)
            throw contract_error("knowledge base changed outside meta_step during kb_update");

        const std::vector<double> gamma = compute_gamma(accs);
        const KbDelta delta = aggregate_delta(model.kb, kb_copies, gamma, cfg.meta.E_inner);
        meta_step(model.kb, delta, cfg.meta.alpha, cfg.meta.meta_sign);

        if (rec.enabled()) {
            double acc_sum = 0.0;
            for (double a : accs) acc_sum += a;
            rec.record(task_id, outer + 1, "kb_update", "val", acc_sum / double(cfg.meta.K),
                       loss_sum / double(cfg.meta.K));
        }
    }
}

// ---------------------------------------------------------------------------
// Sequence driver
// ---------------------------------------------------------------------------

namespace {

struct HashAudit {
    ModelState& model;
    RunResult& result;

    /// Runs one phase between KB digests; phases that must not touch the KB
    /// are enforced, not just logged.
    void phase(size_t task, const std::string& name, bool kb_may_change,
               const std::function<void()>& body) const {
        const std::string before = kb_digest(model.kb);
        body();
        const std::string after = kb_digest(model.kb);
        result.kb_hash_log.push_back({task, name, before, after});
        if (!kb_may_change && before != after)
            throw contract_error("knowledge base changed during phase '" + name +
                                 "' of task " + std::to_string(task));
    }
};

} // namespace

RunOutcome train_sequence(const Scenario& scenario, const ArchConfig& arch,
                          const TrainConfig& cfg, Variant variant, uint64_t seed,
                          const Tensor& embedding_table) {
    validate_scenario(scenario);
    arch.validate();
    cfg.validate();

    Rng model_rng(derive_seed(seed, {kTagModel}));
    ModelState model = make_model(arch, model_rng);
    if (arch.fe_variant == FeVariant::external_embedding) {
        if (!embedding_table.defined())
            throw config_error("external_embedding architecture needs an embedding table");
        model.embedding_table = embedding_table;
    }

    RunOutcome outcome;
    RunResult& res = outcome.result;
    res.variant = variant;
    res.seed = seed;
    Recorder rec(cfg.record_events);
    HashAudit audit{model, res};

    res.kb_snapshots.push_back(snapshot_kb(model.kb));
    res.kb_digests.push_back(kb_digest(model.kb));

    const size_t joint_epochs = cfg.query_epochs * cfg.epoch_multiplier;
    const bool uses_init = variant == Variant::full_mark || variant == Variant::no_retraining;
    if (uses_init) {
        const TaskDataset& first = scenario.tasks.front();
        audit.phase(first.task_id, "init_kb", true, [&] {
            init_kb(model, first, cfg, derive_seed(seed, {kTagInit}), rec);
        });
    }

    std::vector<std::string> finished_digests; // task-isolation baseline
    for (size_t t = 0; t < scenario.n_tasks(); ++t) {
        const TaskDataset& task = scenario.tasks[t];
        Rng task_rng(derive_seed(seed, {kTagTask, t}));
        const size_t tid = add_task(model, task.n_classes(), task_rng);
        if (variant == Variant::feature_only)
            model.tasks[tid].head = make_linear_head(arch.embed_dim, task.n_classes(), task_rng);

        switch (variant) {
            case Variant::full_mark:
            case Variant::no_retraining:
                audit.phase(t, "feature_extractor", false, [&] {
                    train_feature_extractor(model, tid, task, cfg,
                                            derive_seed(seed, {kTagFe, t}), rec);
                });
                audit.phase(t, "query", false, [&] {
                    query_phase(model, tid, task, cfg, cfg.query_epochs,
                                derive_seed(seed, {kTagQuery, t}), rec, "query");
                });
                audit.phase(t, "kb_update", true, [&] {
                    kb_update(model, tid, task, cfg, derive_seed(seed, {kTagUpdate, t}), rec);
                });
                if (variant == Variant::full_mark) {
                    audit.phase(t, "requery", false, [&] {
                        query_phase(model, tid, task, cfg, cfg.query_epochs,
                                    derive_seed(seed, {kTagRequery, t}), rec, "requery");
                    });
                }
                break;

            case Variant::baseline:
                audit.phase(t, "joint", true, [&] {
                    run_training_phase(t, "joint", task, joint_epochs, cfg.batch_size, cfg.sgd,
                                       concat_params(model.kb.params(),
                                                     model.tasks[tid].head.params()),
                                       plain_kb_pipeline(model, tid),
                                       derive_seed(seed, {kTagJoint, t}), rec);
                });
                break;

            case Variant::baseline_ml:
                audit.phase(t, "joint", true, [&] {
                    run_training_phase(t, "joint", task, cfg.query_epochs, cfg.batch_size,
                                       cfg.sgd,
                                       concat_params(model.kb.params(),
                                                     model.tasks[tid].head.params()),
                                       plain_kb_pipeline(model, tid),
                                       derive_seed(seed, {kTagJoint, t}), rec);
                });
                audit.phase(t, "kb_update", true, [&] {
                    kb_update(model, tid, task, cfg, derive_seed(seed, {kTagUpdate, t}), rec,
                              /*use_masks=*/false);
                });
                audit.phase(t, "finetune", false, [&] {
                    query_phase(model, tid, task, cfg, cfg.query_epochs,
                                derive_seed(seed, {kTagFinetune, t}), rec, "finetune",
                                /*use_masks=*/false);
                });
                break;

            case Variant::baseline_mask:
                audit.phase(t, "feature_extractor", false, [&] {
                    train_feature_extractor(model, tid, task, cfg,
                                            derive_seed(seed, {kTagFe, t}), rec);
                });
                audit.phase(t, "joint", true, [&] {
                    run_training_phase(
                        t, "joint", task, joint_epochs, cfg.batch_size, cfg.sgd,
                        concat_params(concat_params(model.kb.params(),
                                                    model.tasks[tid].mask.params()),
                                      model.tasks[tid].head.params()),
                        masked_pipeline(model, tid, task), derive_seed(seed, {kTagJoint, t}),
                        rec);
                });
                break;

            case Variant::feature_only:
                audit.phase(t, "joint", false, [&] {
                    run_training_phase(t, "joint", task, joint_epochs, cfg.batch_size, cfg.sgd,
                                       concat_params(model.tasks[tid].fe.params(),
                                                     model.tasks[tid].head.params()),
                                       feature_pipeline(model, tid, task),
                                       derive_seed(seed, {kTagJoint, t}), rec);
                });
                model.tasks[tid].fe.freeze();
                break;
        }

        audit.phase(t, "evaluate", false, [&] {
            std::vector<double> row;
            row.reserve(t + 1);
            for (size_t i = 0; i <= t; ++i)
                row.push_back(evaluate(model, variant, scenario.tasks[i],
                                       scenario.tasks[i].test_idx, cfg.batch_size)
                                  .accuracy);
            res.acc_matrix.add_row(std::move(row));
        });

        res.kb_snapshots.push_back(snapshot_kb(model.kb));
        res.kb_digests.push_back(kb_digest(model.kb));

        for (size_t j = 0; j < finished_digests.size(); ++j)
            if (task_modules_digest(model.tasks[j]) != finished_digests[j])
                throw contract_error("training task " + std::to_string(t) +
                                     " mutated the modules of task " + std::to_string(j));
        finished_digests.push_back(task_modules_digest(model.tasks[tid]));
    }

    res.acc = avg_accuracy(res.acc_matrix);
    if (scenario.n_tasks() >= 2) {
        res.bwt_value = bwt(res.acc_matrix);
        res.bwt_defined = true;
    }
    res.params = count_params(model);
    res.events = rec.take();
    outcome.model = std::move(model);
    return outcome;
}

// ---------------------------------------------------------------------------
// Retraining probe
// ---------------------------------------------------------------------------

RetrainReport retrain_gain(ModelState& model, const Scenario& scenario, const TrainConfig& cfg,
                           const AccuracyMatrix& matrix, uint64_t seed, Recorder* rec) {
    if (matrix.n_tasks() != scenario.n_tasks())
        throw metric_error("retrain_gain: accuracy matrix covers " +
                           std::to_string(matrix.n_tasks()) + " tasks, scenario has " +
                           std::to_string(scenario.n_tasks()));
    Recorder disabled(false);
    Recorder& recorder = rec != nullptr ? *rec : disabled;

    RetrainReport report;
    const std::string kb_before = kb_digest(model.kb);
    for (size_t t = 0; t < scenario.n_tasks(); ++t) {
        const TaskDataset& task = scenario.tasks[t];
        TaskModules& mods = task_modules(model, t);

        const double before =
            evaluate(model, Variant::full_mark, task, task.test_idx, cfg.batch_size).accuracy;

        // Retrain clones of the live modules so the model comes back intact.
        MaskGenerator orig_mask = std::move(mods.mask);
        ClassifierHead orig_head = std::move(mods.head);
        mods.mask = clone(orig_mask);
        mods.head = clone(orig_head);
        query_phase(model, t, task, cfg, cfg.query_epochs, derive_seed(seed, {kTagRetrain, t}),
                    recorder, "retrain");
        const double after =
            evaluate(model, Variant::full_mark, task, task.test_idx, cfg.batch_size).accuracy;
        mods.mask = std::move(orig_mask);
        mods.head = std::move(orig_head);

        report.before.push_back(before);
        report.after.push_back(after);
        report.gain_initial.push_back(after - matrix.at(t, t));
        report.gain_current.push_back(after - before);
    }
    if (kb_digest(model.kb) != kb_before)
        throw contract_error("retrain_gain mutated the knowledge base");
    return report;
}

} // namespace mark
