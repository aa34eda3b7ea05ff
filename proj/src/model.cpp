// SPDX-License-Identifier: Apache-2.0
#include "mark/model.hpp"

#include <cmath>

namespace mark {

BlockKind block_kind_from_string(const std::string& s) {
    if (s == "conv") return BlockKind::conv;
    if (s == "dense") return BlockKind::dense;
    throw config_error("unknown block kind '" + s + "' (expected conv|dense)");
}

std::string to_string(BlockKind kind) {
    return kind == BlockKind::conv ? "conv" : "dense";
}

FeVariant fe_variant_from_string(const std::string& s) {
    if (s == "task_trained") return FeVariant::task_trained;
    if (s == "random") return FeVariant::random;
    if (s == "external_embedding") return FeVariant::external_embedding;
    throw config_error("unknown feature-extractor variant '" + s +
                       "' (expected task_trained|random|external_embedding)");
}

std::string to_string(FeVariant variant) {
    switch (variant) {
        case FeVariant::task_trained: return "task_trained";
        case FeVariant::random: return "random";
        case FeVariant::external_embedding: return "external_embedding";
    }
    throw contract_error("unreachable feature-extractor variant");
}

namespace {

/// Valid conv (stride 1) followed by pooling; throws when the map collapses.
void sim_conv_block(size_t& h, size_t& w, size_t kernel, size_t pool, const char* what) {
    if (h < kernel || w < kernel)
        throw config_error(std::string(what) + ": " + std::to_string(kernel) +
                           "-wide kernel does not fit a " + std::to_string(h) + "x" +
                           std::to_string(w) + " map");
    h = (h - kernel + 1) / pool;
    w = (w - kernel + 1) / pool;
    if (h == 0 || w == 0)
        throw config_error(std::string(what) + ": pooling collapsed the spatial map");
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad = true) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor he_tensor(Shape shape, size_t fan_in, Rng& rng) {
    return normal_tensor(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

} // namespace

void ArchConfig::validate() const {
    if (kb_channels.empty())
        throw config_error("arch: kb_channels must name at least one block");
    for (size_t c : kb_channels)
        if (c == 0) throw config_error("arch: kb block channel counts must be positive");
    if (embed_dim == 0) throw config_error("arch: embed_dim must be positive");
    if (trunk_dim == 0) throw config_error("arch: trunk_dim must be positive");
    if (pool_window == 0) throw config_error("arch: pool_window must be positive");
    if (block_kind == BlockKind::conv) {
        if (in_channels == 0 || in_h == 0 || in_w == 0)
            throw config_error("arch: conv mode requires positive input C/H/W");
        if (kb_kernel == 0 || fe_kernel == 0)
            throw config_error("arch: kernel sizes must be positive");
        if (fe_filters == 0) throw config_error("arch: fe_filters must be positive");
        kb_flat_dim(); // throws when the geometry collapses
        if (fe_variant != FeVariant::external_embedding) fe_flat_dim();
    } else {
        if (in_dim == 0) throw config_error("arch: dense mode requires positive in_dim");
        if (fe_hidden == 0) throw config_error("arch: fe_hidden must be positive");
    }
}

size_t ArchConfig::mask_width() const {
    size_t w = 0;
    for (size_t c : kb_channels) w += c;
    return w;
}

size_t ArchConfig::input_numel() const {
    return block_kind == BlockKind::conv ? in_channels * in_h * in_w : in_dim;
}

size_t ArchConfig::kb_flat_dim() const {
    if (block_kind == BlockKind::dense) return kb_channels.back();
    size_t h = in_h, w = in_w;
    for (size_t b = 0; b < kb_channels.size(); ++b)
        sim_conv_block(h, w, kb_kernel, pool_window, "arch: knowledge base");
    return kb_channels.back() * h * w;
}

size_t ArchConfig::fe_flat_dim() const {
    size_t h = in_h, w = in_w;
    for (int layer = 0; layer < 2; ++layer)
        sim_conv_block(h, w, fe_kernel, pool_window, "arch: feature extractor");
    return fe_filters * h * w;
}

ArchConfig ArchConfig::cifar() {
    ArchConfig a;
    a.block_kind = BlockKind::conv;
    a.fe_variant = FeVariant::task_trained;
    a.in_channels = 3;
    a.in_h = 32;
    a.in_w = 32;
    a.kb_channels = {64, 128, 256};
    a.kb_kernel = 3;
    a.pool_window = 2;
    a.trunk_dim = 128;
    a.fe_filters = 32;
    a.fe_kernel = 3;
    a.embed_dim = 128;
    a.mask_bias = true;
    return a;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

FeatureExtractor make_feature_extractor(const ArchConfig& arch, Rng& rng,
                                        const Tensor& embedding_table) {
    FeatureExtractor fe;
    fe.variant = arch.fe_variant;
    fe.block_kind = arch.block_kind;
    fe.embed_dim = arch.embed_dim;
    fe.pool_window = arch.pool_window;

    if (fe.variant == FeVariant::external_embedding) {
        if (!embedding_table.defined())
            throw config_error("external_embedding extractor requires a loaded embedding table");
        if (embedding_table.rank() != 2)
            throw shape_error("embedding table must be count×dim, got " +
                              shape_str(embedding_table.shape()));
        if (embedding_table.dim(1) != arch.embed_dim)
            throw config_error("embedding table width " + std::to_string(embedding_table.dim(1)) +
                               " does not match embed_dim " + std::to_string(arch.embed_dim));
        fe.table = embedding_table;
        fe.frozen = true;
        return fe;
    }

    if (arch.block_kind == BlockKind::conv) {
        const size_t F = arch.fe_filters, C = arch.in_channels, K = arch.fe_kernel;
        fe.conv1_k = he_tensor({F, C, K, K}, C * K * K, rng);
        fe.conv1_b = Tensor::zeros({F}, true);
        fe.bn1_gamma = Tensor::full({F}, 1.0f, true);
        fe.bn1_beta = Tensor::zeros({F}, true);
        fe.bn1_state = BatchNormState(F);
        fe.conv2_k = he_tensor({F, F, K, K}, F * K * K, rng);
        fe.conv2_b = Tensor::zeros({F}, true);
        fe.bn2_gamma = Tensor::full({F}, 1.0f, true);
        fe.bn2_beta = Tensor::zeros({F}, true);
        fe.bn2_state = BatchNormState(F);
        const size_t flat = arch.fe_flat_dim();
        fe.fc_w = normal_tensor({flat, arch.embed_dim},
                                std::sqrt(1.0 / static_cast<double>(flat)), rng);
        fe.fc_b = Tensor::zeros({arch.embed_dim}, true);
    } else {
        fe.fc1_w = he_tensor({arch.in_dim, arch.fe_hidden}, arch.in_dim, rng);
        fe.fc1_b = Tensor::zeros({arch.fe_hidden}, true);
        fe.fc_w = normal_tensor({arch.fe_hidden, arch.embed_dim},
                                std::sqrt(1.0 / static_cast<double>(arch.fe_hidden)), rng);
        fe.fc_b = Tensor::zeros({arch.embed_dim}, true);
    }
    if (fe.variant == FeVariant::random) fe.freeze();
    return fe;
}

std::vector<Tensor> FeatureExtractor::params() const {
    switch (variant) {
        case FeVariant::external_embedding:
            return {};
        case FeVariant::task_trained:
        case FeVariant::random:
            break;
    }
    if (block_kind == BlockKind::conv)
        return {conv1_k, conv1_b, bn1_gamma, bn1_beta,
                conv2_k, conv2_b, bn2_gamma, bn2_beta, fc_w, fc_b};
    return {fc1_w, fc1_b, fc_w, fc_b};
}

void FeatureExtractor::freeze() {
    for (Tensor& p : params()) p.set_requires_grad(false);
    frozen = true;
}

KnowledgeBase make_knowledge_base(const ArchConfig& arch, Rng& rng) {
    KnowledgeBase kb;
    kb.kind = arch.block_kind;
    kb.channels = arch.kb_channels;
    kb.pool_window = arch.pool_window;
    size_t prev =
        arch.block_kind == BlockKind::conv ? arch.in_channels : arch.in_dim;
    for (size_t c : arch.kb_channels) {
        KbBlock block;
        if (arch.block_kind == BlockKind::conv) {
            const size_t K = arch.kb_kernel;
            block.w = he_tensor({c, prev, K, K}, prev * K * K, rng);
        } else {
            block.w = he_tensor({prev, c}, prev, rng);
        }
        block.b = Tensor::zeros({c}, true);
        kb.blocks.push_back(std::move(block));
        prev = c;
    }
    const size_t flat = arch.kb_flat_dim();
    kb.trunk_w = he_tensor({flat, arch.trunk_dim}, flat, rng);
    kb.trunk_b = Tensor::zeros({arch.trunk_dim}, true);
    return kb;
}

std::vector<Tensor> KnowledgeBase::params() const {
    std::vector<Tensor> out;
    for (const KbBlock& block : blocks) {
        out.push_back(block.w);
        out.push_back(block.b);
    }
    out.push_back(trunk_w);
    out.push_back(trunk_b);
    return out;
}

MaskGenerator make_mask_generator(const ArchConfig& arch, Rng& rng) {
    MaskGenerator mg;
    mg.use_bias = arch.mask_bias;
    mg.splits = arch.kb_channels;
    const size_t width = arch.mask_width();
    if (arch.mask_bias) {
        // zero weights + unit bias: untrained masks start at identity
        // modulation and learn to carve the knowledge base from there
        mg.weights = Tensor::zeros({arch.embed_dim, width}, true);
        mg.bias = Tensor::full({width}, 1.0f, true);
    } else {
        // without the bias a zero start would be a dead ReLU everywhere, so
        // the strict form draws small random weights instead
        mg.weights = normal_tensor({arch.embed_dim, width},
                                   std::sqrt(1.0 / static_cast<double>(arch.embed_dim)), rng);
        mg.bias = Tensor::zeros({width}, false);
    }
    return mg;
}

std::vector<Tensor> MaskGenerator::params() const {
    if (use_bias) return {weights, bias};
    return {weights};
}

ClassifierHead make_linear_head(size_t in_dim, size_t n_classes, Rng& rng) {
    if (n_classes < 2)
        throw config_error("classifier head needs at least 2 classes, got " +
                           std::to_string(n_classes));
    ClassifierHead head;
    head.weights = normal_tensor({in_dim, n_classes},
                                 std::sqrt(1.0 / static_cast<double>(in_dim)), rng);
    head.bias = Tensor::zeros({n_classes}, true);
    return head;
}

ClassifierHead make_classifier_head(const ArchConfig& arch, size_t n_classes, Rng& rng) {
    return make_linear_head(arch.trunk_dim, n_classes, rng);
}

std::vector<Tensor> ClassifierHead::params() const { return {weights, bias}; }

ModelState make_model(const ArchConfig& arch, Rng& rng) {
    arch.validate();
    ModelState model;
    model.arch = arch;
    model.kb = make_knowledge_base(arch, rng);
    return model;
}

size_t add_task(ModelState& model, size_t n_classes, Rng& rng) {
    TaskModules tm;
    // Random extractors are shared: one fixed random embedding for all tasks.
    if (model.arch.fe_variant == FeVariant::random && !model.tasks.empty())
        tm.fe = model.tasks.front().fe;
    else
        tm.fe = make_feature_extractor(model.arch, rng, model.embedding_table);
    tm.mask = make_mask_generator(model.arch, rng);
    tm.head = make_classifier_head(model.arch, n_classes, rng);
    tm.n_classes = n_classes;
    model.tasks.push_back(std::move(tm));
    return model.tasks.size() - 1;
}

// ---------------------------------------------------------------------------
// Forward pipeline
// ---------------------------------------------------------------------------

Tensor extract_features(FeatureExtractor& fe, const Tensor& batch,
                        const std::vector<size_t>* indices, bool training) {
    if (fe.variant == FeVariant::external_embedding) {
        if (indices == nullptr)
            throw contract_error("external_embedding extractor requires sample indices");
        const size_t count = fe.table.dim(0), dim = fe.table.dim(1);
        std::vector<float> rows;
        rows.reserve(indices->size() * dim);
        const std::vector<float>& table = fe.table.data();
        for (size_t idx : *indices) {
            if (idx >= count)
                throw value_error("embedding index " + std::to_string(idx) +
                                  " out of range [0, " + std::to_string(count) + ")");
            rows.insert(rows.end(), table.begin() + static_cast<ptrdiff_t>(idx * dim),
                        table.begin() + static_cast<ptrdiff_t>((idx + 1) * dim));
        }
        return Tensor::from_data({indices->size(), dim}, std::move(rows));
    }

    const bool train_mode = training && !fe.frozen;
    Tensor h;
    if (fe.block_kind == BlockKind::conv) {
        h = conv2d_forward(batch, fe.conv1_k, fe.conv1_b);
        h = batchnorm_forward(h, fe.bn1_gamma, fe.bn1_beta, fe.bn1_state, train_mode);
        h = maxpool2d(relu(h), static_cast<int>(fe.pool_window));
        h = conv2d_forward(h, fe.conv2_k, fe.conv2_b);
        h = batchnorm_forward(h, fe.bn2_gamma, fe.bn2_beta, fe.bn2_state, train_mode);
        h = maxpool2d(relu(h), static_cast<int>(fe.pool_window));
        h = flatten2d(h);
    } else {
        h = relu(dense_forward(batch, fe.fc1_w, fe.fc1_b));
    }
    return dense_forward(h, fe.fc_w, fe.fc_b);
}

std::vector<Tensor> generate_masks(const MaskGenerator& mg, const Tensor& features) {
    if (features.rank() != 2 || features.dim(1) != mg.weights.dim(0))
        throw shape_error("generate_masks: features " + shape_str(features.shape()) +
                          " do not match mask weights " + shape_str(mg.weights.shape()));
    Tensor full = relu(dense_forward(features, mg.weights, mg.bias));
    std::vector<Tensor> masks;
    masks.reserve(mg.splits.size());
    size_t offset = 0;
    for (size_t c : mg.splits) {
        masks.push_back(slice_cols(full, offset, offset + c));
        offset += c;
    }
    return masks;
}

std::vector<Tensor> identity_masks(const KnowledgeBase& kb, size_t batch_size) {
    std::vector<Tensor> masks;
    masks.reserve(kb.channels.size());
    for (size_t c : kb.channels) masks.push_back(Tensor::full({batch_size, c}, 1.0f));
    return masks;
}

Tensor kb_forward(const KnowledgeBase& kb, const Tensor& batch,
                  const std::vector<Tensor>& masks) {
    if (masks.size() != kb.blocks.size())
        throw shape_error("kb_forward: " + std::to_string(masks.size()) + " masks for " +
                          std::to_string(kb.blocks.size()) + " blocks");
    for (size_t b = 0; b < masks.size(); ++b)
        if (masks[b].rank() != 2 || masks[b].dim(1) != kb.channels[b])
            throw shape_error("kb_forward: mask " + std::to_string(b) + " has shape " +
                              shape_str(masks[b].shape()) + ", expected width " +
                              std::to_string(kb.channels[b]));

    Tensor h = batch;
    for (size_t b = 0; b < kb.blocks.size(); ++b) {
        const KbBlock& block = kb.blocks[b];
        if (kb.kind == BlockKind::conv) {
            h = relu(conv2d_forward(h, block.w, block.b));
            h = scale_channels(h, masks[b]);
            h = maxpool2d(h, static_cast<int>(kb.pool_window));
        } else {
            h = relu(dense_forward(h, block.w, block.b));
            h = scale_channels(h, masks[b]);
        }
    }
    h = flatten2d(h);
    return relu(dense_forward(h, kb.trunk_w, kb.trunk_b));
}

Tensor classify(const ClassifierHead& head, const Tensor& trunk_out) {
    return dense_forward(trunk_out, head.weights, head.bias);
}

Tensor task_logits(ModelState& model, size_t task_id, const Tensor& batch,
                   const std::vector<size_t>* indices, bool training) {
    if (task_id >= model.tasks.size())
        throw value_error("unknown task " + std::to_string(task_id) + " (model has " +
                          std::to_string(model.tasks.size()) + " tasks)");
    TaskModules& tm = model.tasks[task_id];
    Tensor features = extract_features(tm.fe, batch, indices, training);
    std::vector<Tensor> masks = generate_masks(tm.mask, features);
    Tensor trunk = kb_forward(model.kb, batch, masks);
    return classify(tm.head, trunk);
}

std::vector<int> predict(ModelState& model, const Tensor& batch, size_t task_id,
                         const std::vector<size_t>* indices) {
    NoGradGuard no_grad;
    return argmax_rows(task_logits(model, task_id, batch, indices, /*training=*/false));
}

// ---------------------------------------------------------------------------
// Accounting & state iteration
// ---------------------------------------------------------------------------

namespace {

size_t numel_sum(std::vector<Tensor> tensors) {
    size_t n = 0;
    for (const Tensor& t : tensors) n += t.numel();
    return n;
}

} // namespace

size_t ParamCounts::fe_total() const {
    size_t n = 0;
    for (size_t v : fe) n += v;
    return n;
}

size_t ParamCounts::mask_total() const {
    size_t n = 0;
    for (size_t v : masks) n += v;
    return n;
}

size_t ParamCounts::head_total() const {
    size_t n = 0;
    for (size_t v : heads) n += v;
    return n;
}

size_t ParamCounts::total() const {
    return kb + fe_total() + mask_total() + head_total();
}

ParamCounts count_params(const ModelState& model) {
    ParamCounts counts;
    counts.kb = numel_sum(model.kb.params());
    for (const TaskModules& tm : model.tasks) {
        counts.fe.push_back(numel_sum(tm.fe.params()));
        counts.masks.push_back(numel_sum(tm.mask.params()));
        counts.heads.push_back(numel_sum(tm.head.params()));
    }
    return counts;
}

namespace {

void push_tensor(std::vector<NamedArray>& out, const std::string& name, Tensor& t) {
    out.push_back({name, t.shape(), &t.data()});
}

void push_buffer(std::vector<NamedArray>& out, const std::string& name,
                 std::vector<float>& values) {
    out.push_back({name, {values.size()}, &values});
}

} // namespace

std::vector<NamedArray> collect_state(ModelState& model) {
    std::vector<NamedArray> out;
    for (size_t b = 0; b < model.kb.blocks.size(); ++b) {
        const std::string prefix = "kb.block" + std::to_string(b) + ".";
        push_tensor(out, prefix + "w", model.kb.blocks[b].w);
        push_tensor(out, prefix + "b", model.kb.blocks[b].b);
    }
    push_tensor(out, "kb.trunk.w", model.kb.trunk_w);
    push_tensor(out, "kb.trunk.b", model.kb.trunk_b);

    for (size_t t = 0; t < model.tasks.size(); ++t) {
        const std::string prefix = "task" + std::to_string(t) + ".";
        TaskModules& tm = model.tasks[t];
        if (tm.fe.variant != FeVariant::external_embedding) {
            if (tm.fe.block_kind == BlockKind::conv) {
                push_tensor(out, prefix + "fe.conv1.k", tm.fe.conv1_k);
                push_tensor(out, prefix + "fe.conv1.b", tm.fe.conv1_b);
                push_tensor(out, prefix + "fe.bn1.gamma", tm.fe.bn1_gamma);
                push_tensor(out, prefix + "fe.bn1.beta", tm.fe.bn1_beta);
                push_buffer(out, prefix + "fe.bn1.running_mean", tm.fe.bn1_state.running_mean);
                push_buffer(out, prefix + "fe.bn1.running_var", tm.fe.bn1_state.running_var);
                push_tensor(out, prefix + "fe.conv2.k", tm.fe.conv2_k);
                push_tensor(out, prefix + "fe.conv2.b", tm.fe.conv2_b);
                push_tensor(out, prefix + "fe.bn2.gamma", tm.fe.bn2_gamma);
                push_tensor(out, prefix + "fe.bn2.beta", tm.fe.bn2_beta);
                push_buffer(out, prefix + "fe.bn2.running_mean", tm.fe.bn2_state.running_mean);
                push_buffer(out, prefix + "fe.bn2.running_var", tm.fe.bn2_state.running_var);
            } else {
                push_tensor(out, prefix + "fe.fc1.w", tm.fe.fc1_w);
                push_tensor(out, prefix + "fe.fc1.b", tm.fe.fc1_b);
            }
            push_tensor(out, prefix + "fe.fc.w", tm.fe.fc_w);
            push_tensor(out, prefix + "fe.fc.b", tm.fe.fc_b);
        }
        push_tensor(out, prefix + "mask.w", tm.mask.weights);
        push_tensor(out, prefix + "mask.b", tm.mask.bias);
        push_tensor(out, prefix + "head.w", tm.head.weights);
        push_tensor(out, prefix + "head.b", tm.head.bias);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Deep copies
// ---------------------------------------------------------------------------

namespace {
Tensor clone_param(const Tensor& p) { return p.clone(p.requires_grad()); }
} // namespace

KnowledgeBase clone(const KnowledgeBase& kb) {
    KnowledgeBase out;
    out.kind = kb.kind;
    out.channels = kb.channels;
    out.pool_window = kb.pool_window;
    out.blocks.reserve(kb.blocks.size());
    for (const KbBlock& block : kb.blocks)
        out.blocks.push_back({clone_param(block.w), clone_param(block.b)});
    out.trunk_w = clone_param(kb.trunk_w);
    out.trunk_b = clone_param(kb.trunk_b);
    return out;
}

ClassifierHead clone(const ClassifierHead& head) {
    ClassifierHead out;
    out.weights = clone_param(head.weights);
    out.bias = clone_param(head.bias);
    return out;
}

MaskGenerator clone(const MaskGenerator& mg) {
    MaskGenerator out;
    out.weights = clone_param(mg.weights);
    out.bias = clone_param(mg.bias);
    out.use_bias = mg.use_bias;
    out.splits = mg.splits;
    return out;
}

} // namespace mark
