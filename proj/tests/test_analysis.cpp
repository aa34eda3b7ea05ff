// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mark/analysis.hpp"
#include "mark/errors.hpp"
#include "mark/ops.hpp"
#include "mark/rng.hpp"
#include "mark/training.hpp"
#include "support/desk.hpp"

using namespace mark;
using doctest::Approx;

namespace {

AccuracyMatrix matrix_3x3() {
    AccuracyMatrix m;
    m.add_row({0.9});
    m.add_row({0.8, 0.85});
    m.add_row({0.75, 0.8, 0.95});
    return m;
}

} // namespace

TEST_CASE("accuracy matrix enforces row shape and range") {
    AccuracyMatrix m;
    m.add_row({0.5});
    CHECK_THROWS_AS(m.add_row({0.5}), metric_error);       // needs 2 entries now
    CHECK_THROWS_AS(m.add_row({0.5, 0.4, 0.3}), metric_error);
    CHECK_THROWS_AS(m.add_row({0.5, 1.5}), metric_error);  // out of [0,1]
    CHECK_THROWS_AS(m.add_row({0.5, -0.1}), metric_error);
    m.add_row({0.4, 0.6});
    CHECK(m.at(1, 0) == 0.4);
    CHECK(m.at(0, 0) == 0.5);
    CHECK_THROWS_AS(m.at(0, 1), metric_error); // upper triangle unset
    CHECK_THROWS_AS(m.at(2, 0), metric_error);
}

TEST_CASE("avg_accuracy is the mean of the final row") {
    AccuracyMatrix m;
    m.add_row({0.5});
    m.add_row({0.7, 0.9});
    CHECK(avg_accuracy(m) == Approx(0.8).epsilon(1e-12));

    AccuracyMatrix uniform;
    uniform.add_row({0.62});
    uniform.add_row({0.62, 0.62});
    uniform.add_row({0.62, 0.62, 0.62});
    CHECK(avg_accuracy(uniform) == Approx(0.62).epsilon(1e-12));

    CHECK_THROWS_AS(avg_accuracy(AccuracyMatrix{}), metric_error);
}

TEST_CASE("bwt matches the two-task hand case and is zero without forgetting") {
    AccuracyMatrix m;
    m.add_row({0.8});
    m.add_row({0.7, 0.9});
    CHECK(bwt(m) == Approx(-0.1).epsilon(1e-12));

    AccuracyMatrix keep;
    keep.add_row({0.8});
    keep.add_row({0.8, 0.7});
    keep.add_row({0.8, 0.7, 0.9});
    CHECK(bwt(keep) == 0.0);

    AccuracyMatrix single;
    single.add_row({0.5});
    CHECK_THROWS_AS(bwt(single), metric_error);
}

TEST_CASE("fixed 3x3 matrix metrics match hand arithmetic to 1e-9") {
    const AccuracyMatrix m = matrix_3x3();
    CHECK(avg_accuracy(m) == Approx((0.75 + 0.8 + 0.95) / 3.0).epsilon(1e-9));
    CHECK(bwt(m) == Approx(((0.75 - 0.9) + (0.8 - 0.85)) / 2.0).epsilon(1e-9));
    CHECK(bwt(m) == Approx(-0.1).epsilon(1e-9));
}

TEST_CASE("metrics are invariant under task relabeling") {
    // Relabeling the earlier tasks permutes their (diagonal, final) accuracy
    // pairs; Acc and BWT only see those pairs, so both must be unchanged.
    AccuracyMatrix a;
    a.add_row({0.9});
    a.add_row({0.6, 0.7});
    a.add_row({0.5, 0.65, 0.8});
    AccuracyMatrix b; // tasks 0 and 1 swapped: pairs (0.7,0.65), (0.9,0.5)
    b.add_row({0.7});
    b.add_row({0.6, 0.9});
    b.add_row({0.65, 0.5, 0.8});
    CHECK(avg_accuracy(a) == Approx(avg_accuracy(b)).epsilon(1e-12));
    CHECK(bwt(a) == Approx(bwt(b)).epsilon(1e-12));
}

TEST_CASE("snapshot_kb captures one value block per KB block plus the trunk") {
    Rng rng(3);
    ModelState model = make_model(testsupport::desk_arch(), rng);
    const KbSnapshot snap = snapshot_kb(model.kb);
    REQUIRE(snap.blocks.size() == model.kb.blocks.size() + 1);
    for (size_t b = 0; b < model.kb.blocks.size(); ++b)
        CHECK(snap.blocks[b].size() ==
              model.kb.blocks[b].w.numel() + model.kb.blocks[b].b.numel());
    CHECK(snap.blocks.back().size() == model.kb.trunk_w.numel() + model.kb.trunk_b.numel());
}

TEST_CASE("weight_update_fraction counts strict threshold crossings") {
    KbSnapshot before, after;
    before.blocks = {std::vector<float>(10, 0.0f)};
    after.blocks = {std::vector<float>(10, 0.0f)};

    SUBCASE("identical snapshots give zero everywhere") {
        CHECK(weight_update_fraction(before, after)[0] == 0.0);
    }
    SUBCASE("one of ten weights moved by 2*tau gives 0.1") {
        after.blocks[0][3] = 2e-3f;
        CHECK(weight_update_fraction(before, after, 1e-3)[0] == 0.1);
    }
    SUBCASE("movement exactly at tau does not count") {
        after.blocks[0][3] = 1e-3f;
        CHECK(weight_update_fraction(before, after, double(1e-3f))[0] == 0.0);
    }
    SUBCASE("invalid tau and incongruent snapshots are rejected") {
        CHECK_THROWS_AS(weight_update_fraction(before, after, 0.0), value_error);
        CHECK_THROWS_AS(weight_update_fraction(before, after, -1.0), value_error);
        after.blocks.push_back({1.0f});
        CHECK_THROWS_AS(weight_update_fraction(before, after), shape_error);
        after.blocks.pop_back();
        after.blocks[0].resize(9);
        CHECK_THROWS_AS(weight_update_fraction(before, after), shape_error);
    }
}

TEST_CASE("weight_update_fraction is monotone nonincreasing in tau") {
    Rng rng(11);
    KbSnapshot before, after;
    before.blocks.emplace_back();
    after.blocks.emplace_back();
    for (size_t i = 0; i < 200; ++i) {
        const float base = float(rng.normal());
        before.blocks[0].push_back(base);
        after.blocks[0].push_back(base + float(rng.normal() * 0.01));
    }
    double prev = 1.0;
    for (double tau : {1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 1e-1}) {
        const double frac = weight_update_fraction(before, after, tau)[0];
        CHECK(frac <= prev);
        prev = frac;
    }
}

TEST_CASE("learning_curve averages per-epoch accuracies across tasks") {
    std::vector<EvalEvent> events;
    auto push = [&](size_t task, size_t epoch, double acc) {
        events.push_back({task, epoch, "query", "test", acc, 0.1});
    };
    push(0, 1, 0.5);
    push(0, 2, 0.6);
    push(0, 3, 0.7);
    push(1, 1, 0.7);
    push(1, 2, 0.8);
    push(1, 3, 0.9);
    push(1, 4, 0.9); // task 1 trained one epoch longer
    // other phases and splits must be ignored
    events.push_back({0, 1, "query", "train", 0.99, 0.0});
    events.push_back({0, 1, "requery", "test", 0.01, 0.0});

    const std::vector<double> curve = learning_curve(events, "query");
    REQUIRE(curve.size() == 4);
    CHECK(curve[0] == Approx(0.6).epsilon(1e-12));
    CHECK(curve[1] == Approx(0.7).epsilon(1e-12));
    CHECK(curve[2] == Approx(0.8).epsilon(1e-12));
    CHECK(curve[3] == Approx(0.9).epsilon(1e-12)); // only task 1 reaches epoch 4
}

TEST_CASE("learning_curve is flat for a constant-accuracy model") {
    std::vector<EvalEvent> events;
    for (size_t t = 0; t < 2; ++t)
        for (size_t e = 1; e <= 5; ++e) events.push_back({t, e, "joint", "test", 0.25, 1.0});
    for (double v : learning_curve(events, "joint")) CHECK(v == 0.25);
}

TEST_CASE("learning_curve rejects missing phases and 0-based epochs") {
    std::vector<EvalEvent> events = {{0, 1, "query", "test", 0.5, 0.1}};
    CHECK_THROWS_AS(learning_curve(events, "joint"), metric_error);
    CHECK_THROWS_AS(learning_curve(events, "query", "val"), metric_error);
    events.push_back({0, 0, "query", "test", 0.5, 0.1});
    CHECK_THROWS_AS(learning_curve(events, "query"), metric_error);
}

namespace {

/// Fresh 1-task model over the desk scenario; untrained, so the zero-weight
/// mask generator plus bias 1 yields identity masks.
struct CriticalFixture {
    Scenario scenario = testsupport::desk_scenario(1, 3);
    ModelState model;
    CriticalFixture() {
        Rng rng(5);
        model = make_model(testsupport::desk_arch(), rng);
        add_task(model, scenario.tasks[0].n_classes(), rng);
        model.tasks[0].fe.freeze();
    }
};

} // namespace

TEST_CASE("critical_dimensions: an always-zero mask dimension has drop exactly 0") {
    CriticalFixture fx;
    // Mask output = ReLU(0 * f + bias); forcing one bias entry to zero makes
    // that dimension 0 for every sample, so gating it changes nothing.
    fx.model.tasks[0].mask.bias.data()[2] = 0.0f;
    const CriticalReport rep = critical_dimensions(fx.model, fx.scenario.tasks[0]);
    REQUIRE(rep.drop.size() == fx.model.arch.mask_width());
    CHECK(rep.drop[2] == 0.0);
    CHECK(rep.impact_class[2] == CriticalReport::none);
}

TEST_CASE("critical_dimensions: zeroed-out block makes every probe a no-op") {
    CriticalFixture fx;
    // With block 1's weights and bias all zero the network output is a
    // constant, so no single-dimension gating can move the accuracy.
    std::fill(fx.model.kb.blocks[1].w.data().begin(), fx.model.kb.blocks[1].w.data().end(),
              0.0f);
    std::fill(fx.model.kb.blocks[1].b.data().begin(), fx.model.kb.blocks[1].b.data().end(),
              0.0f);
    const CriticalReport rep = critical_dimensions(fx.model, fx.scenario.tasks[0]);
    for (double d : rep.drop) CHECK(d == 0.0);
    CHECK(rep.count(CriticalReport::none) == rep.drop.size());
    CHECK(rep.count(CriticalReport::critical) == 0);
}

TEST_CASE("critical_dimensions maps dimensions to blocks and counts by class") {
    CriticalFixture fx;
    const CriticalReport rep = critical_dimensions(fx.model, fx.scenario.tasks[0]);
    const std::vector<size_t>& widths = fx.model.tasks[0].mask.splits;
    REQUIRE(rep.block_of_dim.size() == widths[0] + widths[1]);
    for (size_t d = 0; d < rep.block_of_dim.size(); ++d)
        CHECK(rep.block_of_dim[d] == (d < widths[0] ? 0 : 1));
    CHECK(rep.count(CriticalReport::none) + rep.count(CriticalReport::impact) +
              rep.count(CriticalReport::critical) ==
          rep.drop.size());
    CHECK(rep.count(CriticalReport::none, 0) + rep.count(CriticalReport::none, 1) ==
          rep.count(CriticalReport::none));
    CHECK(rep.threshold_points == 1.0);
    CHECK(rep.base_accuracy >= 0.0);
    CHECK(rep.base_accuracy <= 1.0);
}

TEST_CASE("critical_dimensions leaves the model bitwise untouched") {
    CriticalFixture fx;
    const std::string kb_before = kb_digest(fx.model.kb);
    const std::string mods_before = task_modules_digest(fx.model.tasks[0]);
    (void)critical_dimensions(fx.model, fx.scenario.tasks[0]);
    CHECK(kb_digest(fx.model.kb) == kb_before);
    CHECK(task_modules_digest(fx.model.tasks[0]) == mods_before);
}

TEST_CASE("critical_dimensions validates its inputs") {
    CriticalFixture fx;
    CHECK_THROWS_AS(critical_dimensions(fx.model, fx.scenario.tasks[0], 0.0), value_error);
    CHECK_THROWS_AS(critical_dimensions(fx.model, fx.scenario.tasks[0], 1.0, 0), value_error);
    TaskDataset no_test = fx.scenario.tasks[0];
    no_test.test_idx.clear();
    CHECK_THROWS_AS(critical_dimensions(fx.model, no_test), value_error);
}

TEST_CASE("fully gated network predicts a constant class") {
    CriticalFixture fx;
    const TaskDataset& task = fx.scenario.tasks[0];
    NoGradGuard no_grad;
    const Tensor batch = gather_rows(task.inputs, task.test_idx);
    const std::vector<int> labels = gather_values(task.labels, task.test_idx);

    std::vector<Tensor> zero_masks;
    for (size_t c : fx.model.kb.channels)
        zero_masks.push_back(Tensor::zeros({task.test_idx.size(), c}));
    const Tensor logits =
        classify(fx.model.tasks[0].head, kb_forward(fx.model.kb, batch, zero_masks));
    const std::vector<int> preds = argmax_rows(logits);
    for (int p : preds) CHECK(p == preds[0]); // constant output

    // Accuracy of a constant predictor cannot beat the largest class share.
    size_t hits = 0, best = 0;
    std::vector<size_t> freq(task.n_classes(), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (preds[i] == labels[i]) ++hits;
        best = std::max(best, ++freq[size_t(labels[i])]);
    }
    CHECK(hits <= best);
}

TEST_CASE("shared_critical_modules histograms criticality across tasks") {
    CriticalReport a, b;
    a.impact_class = {CriticalReport::critical, CriticalReport::none, CriticalReport::impact,
                      CriticalReport::none};
    a.block_of_dim = {0, 0, 1, 1};
    a.drop = {0.2, 0.0, 0.001, 0.0};
    b = a;
    b.impact_class = {CriticalReport::critical, CriticalReport::critical, CriticalReport::none,
                      CriticalReport::none};

    const std::vector<size_t> counts = shared_critical_modules({a, b});
    REQUIRE(counts.size() == 4);
    CHECK(counts[0] == 2);
    CHECK(counts[1] == 1);
    CHECK(counts[2] == 0);
    CHECK(counts[3] == 0);

    // Accounting identity: histogram total = sum of per-task critical counts.
    size_t total = 0;
    for (size_t c : counts) total += c;
    CHECK(total == a.count(CriticalReport::critical) + b.count(CriticalReport::critical));

    // Single-report histograms only hold 0s and 1s.
    for (size_t c : shared_critical_modules({a})) CHECK(c <= 1);

    CriticalReport small;
    small.impact_class = {CriticalReport::none};
    CHECK_THROWS_AS(shared_critical_modules({a, small}), shape_error);
    CHECK_THROWS_AS(shared_critical_modules({}), value_error);
}
