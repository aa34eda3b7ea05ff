// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "mark/grad_check.hpp"
#include "mark/model.hpp"
#include "mark/ops.hpp"
#include "mark/rng.hpp"
#include "mark/sgd.hpp"

using namespace mark;

namespace {

ArchConfig desk_dense_arch() {
    ArchConfig a;
    a.block_kind = BlockKind::dense;
    a.fe_variant = FeVariant::task_trained;
    a.in_dim = 6;
    a.kb_channels = {5, 4};
    a.trunk_dim = 8;
    a.fe_hidden = 7;
    a.embed_dim = 5;
    return a;
}

ArchConfig desk_conv_arch() {
    ArchConfig a;
    a.block_kind = BlockKind::conv;
    a.fe_variant = FeVariant::task_trained;
    a.in_channels = 1;
    a.in_h = 10;
    a.in_w = 10;
    a.kb_channels = {3, 4};
    a.kb_kernel = 3;
    a.pool_window = 2;
    a.trunk_dim = 6;
    a.fe_filters = 3;
    a.fe_kernel = 3;
    a.embed_dim = 5;
    return a;
}

Tensor random_input(const ArchConfig& a, size_t n, Rng& rng) {
    Shape shape = a.block_kind == BlockKind::conv
                      ? Shape{n, a.in_channels, a.in_h, a.in_w}
                      : Shape{n, a.in_dim};
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor::from_data(std::move(shape), std::move(v));
}

} // namespace

// ---------------------------------------------------------------------------
// ArchConfig
// ---------------------------------------------------------------------------

TEST_CASE("arch: cifar preset geometry") {
    ArchConfig a = ArchConfig::cifar();
    a.validate();
    CHECK(a.mask_width() == 448);
    CHECK(a.fe_flat_dim() == 32 * 6 * 6);
    CHECK(a.kb_flat_dim() == 256 * 2 * 2);
}

TEST_CASE("arch: collapsing geometry is rejected") {
    ArchConfig a = desk_conv_arch();
    a.in_h = a.in_w = 6; // 6 -> conv 4 -> pool 2 -> conv 0: collapse
    CHECK_THROWS_AS(a.validate(), config_error);
    ArchConfig b = desk_dense_arch();
    b.in_dim = 0;
    CHECK_THROWS_AS(b.validate(), config_error);
    ArchConfig c = desk_dense_arch();
    c.kb_channels.clear();
    CHECK_THROWS_AS(c.validate(), config_error);
}

// ---------------------------------------------------------------------------
// extract_features
// ---------------------------------------------------------------------------

TEST_CASE("extract_features: random variant is frozen and repeatable") {
    ArchConfig a = desk_conv_arch();
    a.fe_variant = FeVariant::random;
    Rng rng(31);
    FeatureExtractor fe = make_feature_extractor(a, rng);
    CHECK(fe.frozen);
    Rng data_rng(32);
    Tensor x = random_input(a, 3, data_rng);
    Tensor e1 = extract_features(fe, x, nullptr, true);
    Tensor e2 = extract_features(fe, x, nullptr, true);
    CHECK(e1.data() == e2.data());
    CHECK_FALSE(e1.requires_grad());
    // frozen batchnorm keeps its initial running stats
    CHECK(fe.bn1_state.running_mean[0] == 0.0f);
}

TEST_CASE("extract_features: zero input with zero fc bias gives zero embedding") {
    ArchConfig a = desk_conv_arch();
    Rng rng(33);
    FeatureExtractor fe = make_feature_extractor(a, rng);
    Tensor x = Tensor::zeros({2, a.in_channels, a.in_h, a.in_w});
    Tensor e = extract_features(fe, x, nullptr, false);
    CHECK(e.shape() == Shape{2, a.embed_dim});
    for (float v : e.data()) CHECK(v == 0.0f);
}

TEST_CASE("extract_features: external embedding is a bit-exact lookup") {
    ArchConfig a = desk_dense_arch();
    a.fe_variant = FeVariant::external_embedding;
    a.embed_dim = 3;
    std::vector<float> table(10 * 3);
    for (size_t i = 0; i < table.size(); ++i) table[i] = static_cast<float>(i) * 0.25f;
    Tensor table_t = Tensor::from_data({10, 3}, table);
    Rng rng(34);
    FeatureExtractor fe = make_feature_extractor(a, rng, table_t);
    std::vector<size_t> indices{7, 0};
    Tensor e = extract_features(fe, Tensor::zeros({2, a.in_dim}), &indices);
    CHECK(e.at({0, 0}) == table[7 * 3 + 0]);
    CHECK(e.at({0, 2}) == table[7 * 3 + 2]);
    CHECK(e.at({1, 1}) == table[1]);

    std::vector<size_t> bad{10};
    CHECK_THROWS_AS(extract_features(fe, Tensor::zeros({1, a.in_dim}), &bad), value_error);
    CHECK_THROWS_AS(extract_features(fe, Tensor::zeros({1, a.in_dim}), nullptr), contract_error);
    CHECK_THROWS_AS(make_feature_extractor(a, rng), config_error);
}

TEST_CASE("extract_features: freezing stops gradient recording") {
    ArchConfig a = desk_dense_arch();
    Rng rng(35);
    FeatureExtractor fe = make_feature_extractor(a, rng);
    Rng data_rng(36);
    Tensor x = random_input(a, 2, data_rng);
    CHECK(extract_features(fe, x).requires_grad());
    fe.freeze();
    CHECK_FALSE(extract_features(fe, x).requires_grad());
}

// ---------------------------------------------------------------------------
// generate_masks
// ---------------------------------------------------------------------------

TEST_CASE("generate_masks: zero weights and zero bias give zero masks") {
    ArchConfig a = desk_dense_arch();
    Rng rng(37);
    MaskGenerator mg = make_mask_generator(a, rng);
    mg.bias.data().assign(mg.bias.numel(), 0.0f);
    Rng data_rng(38);
    Tensor f = Tensor::from_data({2, a.embed_dim}, std::vector<float>(2 * a.embed_dim, 0.3f));
    auto masks = generate_masks(mg, f);
    REQUIRE(masks.size() == 2);
    for (const Tensor& m : masks)
        for (float v : m.data()) CHECK(v == 0.0f);
}

TEST_CASE("generate_masks: default init is identity modulation") {
    ArchConfig a; // default [64,128,256], embed 128
    Rng rng(39);
    MaskGenerator mg = make_mask_generator(a, rng);
    CHECK(mg.weights.shape() == Shape{128, 448});
    std::vector<float> fv(3 * 128);
    Rng data_rng(40);
    for (auto& v : fv) v = static_cast<float>(data_rng.normal());
    auto masks = generate_masks(mg, Tensor::from_data({3, 128}, fv));
    REQUIRE(masks.size() == 3);
    CHECK(masks[0].shape() == Shape{3, 64});
    CHECK(masks[1].shape() == Shape{3, 128});
    CHECK(masks[2].shape() == Shape{3, 256});
    for (const Tensor& m : masks)
        for (float v : m.data()) CHECK(v == 1.0f);
}

TEST_CASE("generate_masks: random weights match a matmul+relu oracle and stay nonnegative") {
    ArchConfig a = desk_dense_arch();
    Rng rng(41);
    MaskGenerator mg = make_mask_generator(a, rng);
    // overwrite the zero default with random weights
    for (auto& w : mg.weights.data()) w = static_cast<float>(rng.normal(0.0, 0.7));
    for (auto& b : mg.bias.data()) b = static_cast<float>(rng.normal(0.0, 0.2));
    std::vector<float> fv(4 * a.embed_dim);
    for (auto& v : fv) v = static_cast<float>(rng.normal());
    Tensor f = Tensor::from_data({4, a.embed_dim}, fv);
    auto masks = generate_masks(mg, f);

    const size_t width = a.mask_width();
    for (size_t n = 0; n < 4; ++n) {
        size_t offset = 0;
        for (size_t b = 0; b < masks.size(); ++b) {
            for (size_t j = 0; j < a.kb_channels[b]; ++j) {
                double s = mg.bias.data()[offset + j];
                for (size_t i = 0; i < a.embed_dim; ++i)
                    s += static_cast<double>(fv[n * a.embed_dim + i]) *
                         static_cast<double>(mg.weights.data()[i * width + offset + j]);
                const double want = s > 0.0 ? s : 0.0;
                const float got = masks[b].at({n, j});
                CHECK(got == doctest::Approx(want).epsilon(1e-6));
                CHECK(got >= 0.0f);
            }
            offset += a.kb_channels[b];
        }
    }

    CHECK_THROWS_AS(generate_masks(mg, Tensor::zeros({2, a.embed_dim + 1})), shape_error);
}

TEST_CASE("generate_masks: strict no-bias mode keeps bias out of the trainables") {
    ArchConfig a = desk_dense_arch();
    a.mask_bias = false;
    Rng rng(42);
    MaskGenerator mg = make_mask_generator(a, rng);
    CHECK(mg.params().size() == 1);
    CHECK_FALSE(mg.bias.requires_grad());
    for (float b : mg.bias.data()) CHECK(b == 0.0f);
    // weights are randomized so the generator is not born dead
    bool any_nonzero = false;
    for (float w : mg.weights.data()) any_nonzero = any_nonzero || w != 0.0f;
    CHECK(any_nonzero);
}

// ---------------------------------------------------------------------------
// kb_forward
// ---------------------------------------------------------------------------

TEST_CASE("kb_forward: identity masks equal the unmasked forward bitwise") {
    ArchConfig a = desk_conv_arch();
    Rng rng(43);
    KnowledgeBase kb = make_knowledge_base(a, rng);
    Rng data_rng(44);
    Tensor x = random_input(a, 2, data_rng);

    Tensor masked = kb_forward(kb, x, identity_masks(kb, 2));

    // hand-composed forward without the gating ops
    Tensor h = x;
    for (const KbBlock& block : kb.blocks)
        h = maxpool2d(relu(conv2d_forward(h, block.w, block.b)),
                      static_cast<int>(kb.pool_window));
    Tensor plain = relu(dense_forward(flatten2d(h), kb.trunk_w, kb.trunk_b));

    CHECK(masked.data() == plain.data());
}

TEST_CASE("kb_forward: zero masks everywhere yield ReLU of the trunk bias") {
    ArchConfig a = desk_conv_arch();
    Rng rng(45);
    KnowledgeBase kb = make_knowledge_base(a, rng);
    // conv biases are zero-initialized; give the trunk bias a signed pattern
    for (size_t i = 0; i < kb.trunk_b.numel(); ++i)
        kb.trunk_b.data()[i] = (i % 2 == 0) ? -1.0f : static_cast<float>(i);
    Rng data_rng(46);
    Tensor x = random_input(a, 2, data_rng);
    std::vector<Tensor> masks;
    for (size_t c : kb.channels) masks.push_back(Tensor::zeros({2, c}));
    Tensor out = kb_forward(kb, x, masks);
    for (size_t n = 0; n < 2; ++n)
        for (size_t j = 0; j < kb.trunk_b.numel(); ++j)
            CHECK(out.at({n, j}) == std::max(0.0f, kb.trunk_b.data()[j]));
}

TEST_CASE("kb_forward: scaling one gate scales that channel's map exactly (pre-pool)") {
    ArchConfig a = desk_conv_arch();
    Rng rng(47);
    KnowledgeBase kb = make_knowledge_base(a, rng);
    Rng data_rng(48);
    Tensor x = random_input(a, 1, data_rng);
    const float s = 0.375f; // exactly representable
    Tensor ones = Tensor::full({1, kb.channels[0]}, 1.0f);
    Tensor scaled = ones.clone(false);
    scaled.data()[1] = s;

    Tensor h = relu(conv2d_forward(x, kb.blocks[0].w, kb.blocks[0].b));
    Tensor plain = scale_channels(h, ones);
    Tensor gated = scale_channels(h, scaled);
    const size_t hw = h.dim(2) * h.dim(3);
    for (size_t c = 0; c < kb.channels[0]; ++c)
        for (size_t e = 0; e < hw; ++e) {
            const double base = plain.node()->wide(c * hw + e);
            const double got = gated.node()->wide(c * hw + e);
            if (c == 1)
                CHECK(got == static_cast<double>(s) * base);
            else
                CHECK(got == base);
        }
}

TEST_CASE("kb_forward: mask validation") {
    ArchConfig a = desk_dense_arch();
    Rng rng(49);
    KnowledgeBase kb = make_knowledge_base(a, rng);
    Tensor x = Tensor::zeros({2, a.in_dim});
    std::vector<Tensor> too_few{Tensor::full({2, a.kb_channels[0]}, 1.0f)};
    CHECK_THROWS_AS(kb_forward(kb, x, too_few), shape_error);
    std::vector<Tensor> bad_width{Tensor::full({2, a.kb_channels[0] + 1}, 1.0f),
                                  Tensor::full({2, a.kb_channels[1]}, 1.0f)};
    CHECK_THROWS_AS(kb_forward(kb, x, bad_width), shape_error);
}

TEST_CASE("gating property: zeroed gate kills that filter's gradient exactly") {
    ArchConfig a = desk_conv_arch();
    Rng rng(50);
    KnowledgeBase kb = make_knowledge_base(a, rng);
    // keep every path alive (no dead ReLUs) so sibling gradients are nonzero:
    // positive weights + positive input make all activations strictly positive
    for (Tensor& p : kb.params())
        for (auto& w : p.data()) w = std::abs(w) + 0.01f;
    Rng data_rng(51);
    Tensor x = random_input(a, 1, data_rng);
    for (auto& v : x.data()) v = std::abs(v) + 0.01f;

    for (size_t b : {size_t{0}, size_t{1}}) {
        const size_t dead = 1; // channel to silence
        std::vector<Tensor> masks = identity_masks(kb, 1);
        Tensor m = masks[b].clone(false);
        m.data()[dead] = 0.0f;
        masks[b] = m;

        kb.blocks[b].w.zero_grad();
        kb.blocks[b].b.zero_grad();
        backward(sum(kb_forward(kb, x, masks)));

        // every weight of conv filter `dead` in block b has exactly zero grad
        const size_t per_filter = kb.blocks[b].w.numel() / kb.channels[b];
        bool filter_zero = true;
        for (size_t i = 0; i < per_filter; ++i)
            filter_zero = filter_zero &&
                          kb.blocks[b].w.grad()[dead * per_filter + i] == 0.0f;
        CHECK(filter_zero);
        CHECK(kb.blocks[b].b.grad()[dead] == 0.0f);
        // sibling filters still learn
        bool sibling_nonzero = false;
        for (size_t i = 0; i < per_filter; ++i)
            sibling_nonzero = sibling_nonzero ||
                              kb.blocks[b].w.grad()[0 * per_filter + i] != 0.0f;
        CHECK(sibling_nonzero);
    }
}

// ---------------------------------------------------------------------------
// classify / predict
// ---------------------------------------------------------------------------

TEST_CASE("classify: zero weights give constant bias logits") {
    Rng rng(52);
    ClassifierHead head = make_linear_head(4, 3, rng);
    head.weights.data().assign(head.weights.numel(), 0.0f);
    head.bias.data() = {0.5f, 2.0f, -1.0f};
    Tensor out = classify(head, Tensor::from_data({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
    CHECK(argmax_rows(out) == std::vector<int>{1, 1});
}

TEST_CASE("predict: head favoring class 0 predicts 0 everywhere") {
    ArchConfig a = desk_dense_arch();
    Rng rng(53);
    ModelState model = make_model(a, rng);
    size_t t = add_task(model, 3, rng);
    TaskModules& tm = model.tasks[t];
    tm.head.weights.data().assign(tm.head.weights.numel(), 0.0f);
    tm.head.bias.data() = {1.0f, 0.0f, 0.0f};
    Rng data_rng(54);
    Tensor x = random_input(a, 5, data_rng);
    CHECK(predict(model, x, t) == std::vector<int>(5, 0));
    CHECK_THROWS_AS(predict(model, x, 7), value_error);
}

TEST_CASE("predict: deterministic for identical inputs") {
    ArchConfig a = desk_conv_arch();
    Rng rng(55);
    ModelState model = make_model(a, rng);
    size_t t = add_task(model, 4, rng);
    Rng data_rng(56);
    Tensor one = random_input(a, 1, data_rng);
    std::vector<float> doubled = one.data();
    doubled.insert(doubled.end(), one.data().begin(), one.data().end());
    Tensor two = Tensor::from_data({2, a.in_channels, a.in_h, a.in_w}, doubled);
    auto p = predict(model, two, t);
    CHECK(p[0] == p[1]);
    CHECK(predict(model, two, t) == p);
}

TEST_CASE("predict: joint training separates a linearly separable toy task") {
    ArchConfig a;
    a.block_kind = BlockKind::dense;
    a.in_dim = 2;
    a.kb_channels = {8};
    a.trunk_dim = 8;
    a.fe_hidden = 8;
    a.embed_dim = 4;
    Rng rng(57);
    ModelState model = make_model(a, rng);
    const size_t t = add_task(model, 2, rng);

    Rng data_rng(58);
    const size_t n = 40;
    std::vector<float> xv;
    std::vector<int> labels;
    for (size_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % 2);
        const double cx = cls == 0 ? -1.0 : 1.0;
        xv.push_back(static_cast<float>(cx + 0.1 * data_rng.normal()));
        xv.push_back(static_cast<float>(cx + 0.1 * data_rng.normal()));
        labels.push_back(cls);
    }
    Tensor x = Tensor::from_data({n, 2}, xv);

    std::vector<Tensor> params = model.kb.params();
    TaskModules& tm = model.tasks[t];
    for (const Tensor& p : tm.fe.params()) params.push_back(p);
    for (const Tensor& p : tm.mask.params()) params.push_back(p);
    for (const Tensor& p : tm.head.params()) params.push_back(p);
    SgdConfig cfg{.learning_rate = 0.05, .momentum = 0.9, .weight_decay = 0.0};
    for (int step = 0; step < 80; ++step) {
        for (Tensor& p : params) p.zero_grad();
        backward(cross_entropy(task_logits(model, t, x, nullptr, true), labels));
        sgd_step(params, cfg);
    }
    auto preds = predict(model, x, t);
    size_t hits = 0;
    for (size_t i = 0; i < n; ++i)
        if (preds[i] == labels[i]) ++hits;
    CHECK(static_cast<double>(hits) / n >= 0.99);
}

// ---------------------------------------------------------------------------
// count_params / collect_state
// ---------------------------------------------------------------------------

TEST_CASE("count_params: dense and conv layer formulas") {
    Rng rng(59);
    ArchConfig a = desk_dense_arch();
    ModelState model = make_model(a, rng);
    add_task(model, 3, rng);
    ParamCounts counts = count_params(model);
    // head: trunk_dim x classes + classes
    CHECK(counts.heads[0] == a.trunk_dim * 3 + 3);
    // kb: (6*5+5) + (5*4+4) + trunk (4*8+8)
    CHECK(counts.kb == (6 * 5 + 5) + (5 * 4 + 4) + (4 * 8 + 8));
    // mask: embed x width + width
    CHECK(counts.masks[0] == a.embed_dim * 9 + 9);
    // fe: (6*7+7) + (7*5+5)
    CHECK(counts.fe[0] == (6 * 7 + 7) + (7 * 5 + 5));
    CHECK(counts.total() == counts.kb + counts.fe[0] + counts.masks[0] + counts.heads[0]);

    ArchConfig c = desk_conv_arch();
    ModelState conv_model = make_model(c, rng);
    add_task(conv_model, 3, rng);
    ParamCounts cc = count_params(conv_model);
    // kb block 0: F*C*k*k + F with F=3, C=1, k=3
    const size_t b0 = 3 * 1 * 3 * 3 + 3, b1 = 4 * 3 * 3 * 3 + 4;
    CHECK(cc.kb == b0 + b1 + (c.kb_flat_dim() * c.trunk_dim + c.trunk_dim));
}

TEST_CASE("count_params: values do not change the counts") {
    Rng rng(60);
    ArchConfig a = desk_dense_arch();
    ModelState m1 = make_model(a, rng);
    add_task(m1, 3, rng);
    Rng rng2(61);
    ModelState m2 = make_model(a, rng2);
    add_task(m2, 3, rng2);
    for (Tensor& p : m2.kb.params()) p.data().assign(p.numel(), 42.0f);
    CHECK(count_params(m1).total() == count_params(m2).total());
}

TEST_CASE("count_params: reference CIFAR configuration lands within 5% of 4.7M") {
    ArchConfig a = ArchConfig::cifar();
    Rng rng(62);
    ModelState model = make_model(a, rng);
    for (int t = 0; t < 20; ++t) add_task(model, 5, rng);
    ParamCounts counts = count_params(model);
    CHECK(counts.kb == 502016);
    CHECK(counts.fe[0] == 157856);
    CHECK(counts.masks[0] == 57792);
    CHECK(counts.heads[0] == 645);
    CHECK(counts.total() == 4827876); // frozen regression value
    const double rel = std::abs(static_cast<double>(counts.total()) - 4.7e6) / 4.7e6;
    CHECK(rel <= 0.05);
}

TEST_CASE("collect_state: stable unique names covering params and buffers") {
    ArchConfig a = desk_conv_arch();
    Rng rng(63);
    ModelState model = make_model(a, rng);
    add_task(model, 3, rng);
    add_task(model, 4, rng);
    auto state = collect_state(model);
    std::set<std::string> names;
    for (const auto& entry : state) {
        CHECK(names.insert(entry.name).second); // unique
        CHECK(shape_numel(entry.shape) == entry.values->size());
    }
    // 2 kb blocks * 2 + trunk 2 + per task (conv fe 10 params + 4 buffers + mask 2 + head 2)
    CHECK(state.size() == 6 + 2 * 18);
    CHECK(names.count("kb.block0.w") == 1);
    CHECK(names.count("task1.fe.bn2.running_var") == 1);
    CHECK(names.count("task0.mask.w") == 1);
}

TEST_CASE("model: full pipeline gradients agree with finite differences") {
    ArchConfig a = desk_conv_arch();
    Rng rng(64);
    ModelState model = make_model(a, rng);
    const size_t t = add_task(model, 3, rng);
    Rng data_rng(65);
    Tensor x = random_input(a, 2, data_rng);
    std::vector<int> labels{0, 2};

    // give the mask generator nontrivial weights so its path carries signal
    TaskModules& tm = model.tasks[t];
    for (auto& w : tm.mask.weights.data()) w = static_cast<float>(data_rng.normal(0.0, 0.3));

    std::vector<Tensor> params = model.kb.params();
    for (const Tensor& p : tm.fe.params()) params.push_back(p);
    for (const Tensor& p : tm.mask.params()) params.push_back(p);
    for (const Tensor& p : tm.head.params()) params.push_back(p);
    auto loss = [&] { return cross_entropy(task_logits(model, t, x, nullptr, true), labels); };
    CHECK(grad_check_sampled(loss, params, 1e-4, 250, 66) <= 1e-3);
}
