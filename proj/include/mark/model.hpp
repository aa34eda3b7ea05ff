// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mark/ops.hpp"
#include "mark/rng.hpp"
#include "mark/tensor.hpp"

namespace mark {

/// Knowledge-base blocks come in two flavours: convolutional blocks for
/// image benchmarks and a dense desk-scale variant where masks gate hidden
/// units instead of channel maps.  Both honour the same mask-width contract
/// (one gate per channel / unit).
enum class BlockKind { conv, dense };

BlockKind block_kind_from_string(const std::string& s);
std::string to_string(BlockKind kind);

/// How the per-task feature extractor F^t obtains its embeddings:
///   task_trained       — trained on the task, then frozen
///   random             — randomly initialized, frozen forever
///   external_embedding — embeddings looked up from a precomputed file
enum class FeVariant { task_trained, random, external_embedding };

FeVariant fe_variant_from_string(const std::string& s);
std::string to_string(FeVariant variant);

/// Static architecture description shared by every component.
struct ArchConfig {
    BlockKind block_kind = BlockKind::conv;
    FeVariant fe_variant = FeVariant::task_trained;

    // conv-mode input geometry
    size_t in_channels = 3;
    size_t in_h = 32;
    size_t in_w = 32;
    // dense-mode input width
    size_t in_dim = 0;

    // knowledge base: one block per entry, gated by that many mask values
    std::vector<size_t> kb_channels = {64, 128, 256};
    size_t kb_kernel = 3;
    size_t pool_window = 2;
    size_t trunk_dim = 256;

    // feature extractor
    size_t fe_filters = 32; // conv mode: filters in both conv layers
    size_t fe_kernel = 3;
    size_t fe_hidden = 64; // dense mode: hidden width
    size_t embed_dim = 128;

    // mask generator: bias (initialized to 1) gives identity modulation at
    // start; turn the flag off for the strict bias-free gating form
    bool mask_bias = true;

    void validate() const;

    size_t mask_width() const; // sum of kb_channels
    size_t input_numel() const;
    size_t kb_flat_dim() const; // trunk input width
    size_t fe_flat_dim() const; // conv-mode fc input width

    /// CIFAR-100 preset: 20 tasks of 5 classes, 32-filter extractor,
    /// [64,128,256] knowledge base.  trunk_dim 128 keeps the parameter
    /// total at 4,827,876 — within the documented 5% of the reference 4.7M.
    static ArchConfig cifar();
};

struct FeatureExtractor {
    FeVariant variant = FeVariant::task_trained;
    BlockKind block_kind = BlockKind::conv;
    size_t embed_dim = 0;
    bool frozen = false;

    // conv mode
    Tensor conv1_k, conv1_b, conv2_k, conv2_b;
    Tensor bn1_gamma, bn1_beta, bn2_gamma, bn2_beta;
    BatchNormState bn1_state, bn2_state;
    size_t pool_window = 2;
    // dense mode
    Tensor fc1_w, fc1_b;
    // final projection (conv: flattened maps -> embed; dense: hidden -> embed)
    Tensor fc_w, fc_b;
    // external_embedding mode: count × dim lookup table (not a parameter)
    Tensor table;

    std::vector<Tensor> params() const;
    /// Marks every parameter as non-trainable; later forwards use eval-mode
    /// batchnorm and record no graph through the extractor.
    void freeze();
};

struct KbBlock {
    Tensor w; // conv: F×C×k×k kernels; dense: in×out weights
    Tensor b;
};

struct KnowledgeBase {
    BlockKind kind = BlockKind::conv;
    std::vector<size_t> channels;
    size_t pool_window = 2;
    std::vector<KbBlock> blocks;
    Tensor trunk_w, trunk_b;

    std::vector<Tensor> params() const;
};

struct MaskGenerator {
    Tensor weights; // embed_dim × Σ c_b
    Tensor bias;    // Σ c_b; all-zero and non-trainable when use_bias is off
    bool use_bias = true;
    std::vector<size_t> splits; // kb channel widths, in block order

    std::vector<Tensor> params() const;
};

struct ClassifierHead {
    Tensor weights;
    Tensor bias;

    std::vector<Tensor> params() const;
};

struct TaskModules {
    FeatureExtractor fe;
    MaskGenerator mask;
    ClassifierHead head;
    size_t n_classes = 0;
};

struct ModelState {
    ArchConfig arch;
    KnowledgeBase kb;
    std::vector<TaskModules> tasks;
    Tensor embedding_table; // shared source for external_embedding extractors
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

FeatureExtractor make_feature_extractor(const ArchConfig& arch, Rng& rng,
                                        const Tensor& embedding_table = {});
KnowledgeBase make_knowledge_base(const ArchConfig& arch, Rng& rng);
MaskGenerator make_mask_generator(const ArchConfig& arch, Rng& rng);
ClassifierHead make_classifier_head(const ArchConfig& arch, size_t n_classes, Rng& rng);
/// Plain dense head over an arbitrary input width (used for the extractor's
/// throwaway pretraining head).
ClassifierHead make_linear_head(size_t in_dim, size_t n_classes, Rng& rng);

ModelState make_model(const ArchConfig& arch, Rng& rng);
/// Appends modules for the next task and returns its id (= previous count).
size_t add_task(ModelState& model, size_t n_classes, Rng& rng);

// ---------------------------------------------------------------------------
// Forward pipeline
// ---------------------------------------------------------------------------

/// F^t(X): the per-task embedding.  `indices` (dataset positions) are
/// required by the external_embedding variant and ignored otherwise.
/// `training` only affects trainable extractors (batchnorm mode).
Tensor extract_features(FeatureExtractor& fe, const Tensor& batch,
                        const std::vector<size_t>* indices = nullptr,
                        bool training = false);

/// M^t(F^t): ReLU(features · W + bias) split into per-block gate vectors.
std::vector<Tensor> generate_masks(const MaskGenerator& mg, const Tensor& features);

/// All-ones gates (identity modulation) for mask-free ablations.
std::vector<Tensor> identity_masks(const KnowledgeBase& kb, size_t batch_size);

/// Masked knowledge-base pass: per block conv/dense → ReLU → gate → pool
/// (conv mode), then flatten → trunk dense → ReLU.
Tensor kb_forward(const KnowledgeBase& kb, const Tensor& batch,
                  const std::vector<Tensor>& masks);

Tensor classify(const ClassifierHead& head, const Tensor& trunk_out);

/// Full pipeline to task logits; the shared implementation behind training,
/// evaluation, and predict().
Tensor task_logits(ModelState& model, size_t task_id, const Tensor& batch,
                   const std::vector<size_t>* indices = nullptr,
                   bool training = false);

/// Within-task class prediction (task identity is given, per the
/// task-incremental setting).  Runs without graph recording.
std::vector<int> predict(ModelState& model, const Tensor& batch, size_t task_id,
                         const std::vector<size_t>* indices = nullptr);

// ---------------------------------------------------------------------------
// Accounting & state iteration
// ---------------------------------------------------------------------------

struct ParamCounts {
    size_t kb = 0;
    std::vector<size_t> fe;    // per task
    std::vector<size_t> masks; // per task
    std::vector<size_t> heads; // per task

    size_t fe_total() const;
    size_t mask_total() const;
    size_t head_total() const;
    size_t total() const;
};

/// Trainable-parameter counts per component (knowledge base counted once,
/// batchnorm running statistics and embedding tables excluded).
ParamCounts count_params(const ModelState& model);

/// One named entry per persistent array (parameters and batchnorm buffers),
/// in a stable order, for serialization and digests.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float>* values;
};

std::vector<NamedArray> collect_state(ModelState& model);

// ---------------------------------------------------------------------------
// Deep copies
// ---------------------------------------------------------------------------

/// Fresh parameter tensors with the same values and trainability, sharing
/// nothing with the source.  Used for the episodic inner loop, which adapts
/// throwaway copies of the live modules.
KnowledgeBase clone(const KnowledgeBase& kb);
ClassifierHead clone(const ClassifierHead& head);
MaskGenerator clone(const MaskGenerator& mg);

} // namespace mark
