// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <string>

#include "mark/config.hpp"
#include "mark/errors.hpp"
#include "support/tmpdir.hpp"

using namespace mark;

namespace {

bool mentions(const std::exception& e, const std::string& needle) {
    return std::string(e.what()).find(needle) != std::string::npos;
}

} // namespace

TEST_CASE("empty config text yields the defaults") {
    const ExperimentConfig cfg = parse_config_text("");
    const ExperimentConfig def;
    CHECK(cfg.variant == def.variant);
    CHECK(cfg.seeds == def.seeds);
    CHECK(cfg.out_dir == def.out_dir);
    CHECK(cfg.scenario.n_tasks == def.scenario.n_tasks);
    CHECK(cfg.train.batch_size == def.train.batch_size);
    CHECK(cfg.train.meta.K == def.train.meta.K);
    CHECK(echo_config(cfg) == echo_config(def));
}

TEST_CASE("sections, comments, and blank lines parse") {
    const ExperimentConfig cfg = parse_config_text(
        "# experiment\n"
        "\n"
        "[run]\n"
        "variant = baseline_mask   # trailing comment\n"
        "seeds = 7, 8,9\n"
        "\n"
        "[meta]\n"
        "K = 4\n"
        "inner_lr = 0.01\n");
    CHECK(cfg.variant == Variant::baseline_mask);
    CHECK(cfg.seeds == std::vector<uint64_t>{7, 8, 9});
    CHECK(cfg.train.meta.K == 4);
    CHECK(cfg.train.meta.inner_lr == doctest::Approx(0.01));
}

TEST_CASE("dotted keys work without any section header") {
    const ExperimentConfig cfg = parse_config_text(
        "meta.K = 10\n"
        "arch.embed_dim = 48\n"
        "sgd.learning_rate = 0.25\n");
    CHECK(cfg.train.meta.K == 10);
    CHECK(cfg.arch.embed_dim == 48);
    CHECK(cfg.train.sgd.learning_rate == doctest::Approx(0.25));
}

TEST_CASE("dotted keys are absolute even inside a section") {
    const ExperimentConfig cfg = parse_config_text(
        "[scenario]\n"
        "n_tasks = 3\n"
        "meta.E_outer = 2\n");
    CHECK(cfg.scenario.n_tasks == 3);
    CHECK(cfg.train.meta.E_outer == 2);
}

TEST_CASE("parse errors name the origin and line") {
    CHECK_THROWS_WITH_AS(parse_config_text("meta.K = banana\n", "exp.cfg"),
                         doctest::Contains("exp.cfg:1"), config_error);
    CHECK_THROWS_WITH_AS(parse_config_text("\n\nnonsense line\n", "exp.cfg"),
                         doctest::Contains("exp.cfg:3"), config_error);
    try {
        parse_config_text("[run]\nvariant = full_mark\nbogus_key = 1\n", "exp.cfg");
        FAIL("unknown key accepted");
    } catch (const config_error& e) {
        CHECK(mentions(e, "exp.cfg:3"));
        CHECK(mentions(e, "bogus_key"));
    }
}

TEST_CASE("unknown sections and sectionless bare keys are rejected") {
    CHECK_THROWS_AS(parse_config_text("[nope]\n"), config_error);
    // A bare key with no section and no dot has no home.
    CHECK_THROWS_AS(parse_config_text("K = 10\n"), config_error);
    // Keys must resolve against the declared section.
    CHECK_THROWS_AS(parse_config_text("[run]\nK = 10\n"), config_error);
}

TEST_CASE("value parsing is strict") {
    CHECK_THROWS_AS(parse_config_text("meta.K = -1\n"), config_error);
    CHECK_THROWS_AS(parse_config_text("meta.K = 1.5\n"), config_error);
    CHECK_THROWS_AS(parse_config_text("meta.alpha = 1.0x\n"), config_error);
    CHECK_THROWS_AS(parse_config_text("meta.alpha = inf\n"), config_error);
    CHECK_THROWS_AS(parse_config_text("meta.inner_masks = yes\n"), config_error);
    CHECK_THROWS_AS(parse_config_text("run.seeds = 1,,2\n"), config_error);
    CHECK_THROWS_AS(parse_config_text("run.variant = mark\n"), config_error);
    CHECK_THROWS_AS(parse_config_text("arch.block_kind = conv3d\n"), config_error);
}

TEST_CASE("parse_config reads a file and names it in errors") {
    const auto dir = testsupport::fresh_dir("config");
    const auto path = dir / "exp.cfg";
    {
        std::ofstream out(path);
        out << "[scenario]\nn_tasks = 2\nclasses_per_task = 3\n";
    }
    const ExperimentConfig cfg = parse_config(path.string());
    CHECK(cfg.scenario.n_tasks == 2);
    CHECK(cfg.scenario.classes_per_task == 3);

    {
        std::ofstream out(path);
        out << "meta.K = what\n";
    }
    CHECK_THROWS_WITH_AS(parse_config(path.string()),
                         doctest::Contains((path.string() + ":1").c_str()), config_error);

    CHECK_THROWS_WITH_AS(parse_config((dir / "missing.cfg").string()),
                         doctest::Contains("not found"), config_error);
}

TEST_CASE("echo round-trips every field") {
    ExperimentConfig cfg;
    cfg.variant = Variant::no_retraining;
    cfg.seeds = {42};
    cfg.out_dir = "runs/echo";
    cfg.scenario.source = ScenarioSource::idx;
    cfg.scenario.n_tasks = 7;
    cfg.scenario.order = TaskOrder::shuffled;
    cfg.scenario.train_images = "a-images.idx";
    cfg.scenario.train_labels = "a-labels.idx";
    cfg.scenario.embeddings = "emb.bin";
    cfg.arch.block_kind = BlockKind::dense;
    cfg.arch.in_dim = 17;
    cfg.arch.kb_channels = {8, 16, 8};
    cfg.arch.mask_bias = false;
    cfg.train.query_epochs = 9;
    cfg.train.sgd.weight_decay = 0.125;
    cfg.train.meta.meta_sign = MetaSign::paper;
    cfg.train.meta.H = 2;
    cfg.train.threads = 4;
    cfg.analysis.retrain = true;
    cfg.analysis.tau = 0.5;

    const std::string echo = echo_config(cfg);
    const ExperimentConfig back = parse_config_text(echo);
    CHECK(echo_config(back) == echo);
    CHECK(back.variant == cfg.variant);
    CHECK(back.seeds == cfg.seeds);
    CHECK(back.scenario.source == cfg.scenario.source);
    CHECK(back.scenario.order == cfg.scenario.order);
    CHECK(back.scenario.train_images == cfg.scenario.train_images);
    CHECK(back.arch.kb_channels == cfg.arch.kb_channels);
    CHECK(back.arch.mask_bias == cfg.arch.mask_bias);
    CHECK(back.train.sgd.weight_decay == cfg.train.sgd.weight_decay);
    CHECK(back.train.meta.meta_sign == cfg.train.meta.meta_sign);
    CHECK(back.train.threads == cfg.train.threads);
    CHECK(back.analysis.retrain == cfg.analysis.retrain);
    CHECK(back.analysis.tau == cfg.analysis.tau);
}

TEST_CASE("echo preserves floats bit-exactly") {
    ExperimentConfig cfg;
    cfg.scenario.separation = 3.141592653589793;
    cfg.train.meta.inner_lr = 1e-3;
    cfg.train.sgd.learning_rate = 0.1; // not exactly representable
    const ExperimentConfig back = parse_config_text(echo_config(cfg));
    CHECK(back.scenario.separation == cfg.scenario.separation);
    CHECK(back.train.meta.inner_lr == cfg.train.meta.inner_lr);
    CHECK(back.train.sgd.learning_rate == cfg.train.sgd.learning_rate);
}

TEST_CASE("config hash ignores execution-only keys") {
    ExperimentConfig a;
    ExperimentConfig b = a;
    b.out_dir = "somewhere/else";
    b.train.threads = 16;
    CHECK(config_hash(a) == config_hash(b));

    ExperimentConfig c = a;
    c.train.meta.alpha = 0.5;
    CHECK(config_hash(c) != config_hash(a));

    ExperimentConfig d = a;
    d.seeds = {1, 2, 3, 4};
    CHECK(config_hash(d) != config_hash(a));
}

TEST_CASE("config reference parses back to the defaults") {
    const std::string page = config_reference();
    const ExperimentConfig parsed = parse_config_text(page, "<reference>");
    CHECK(echo_config(parsed) == echo_config(ExperimentConfig{}));
    // Every key shows up in its own documentation.
    CHECK(page.find("meta.K") != std::string::npos);
    CHECK(page.find("run.out_dir") != std::string::npos);
}

TEST_CASE("validate rejects inconsistent scenarios") {
    ExperimentConfig cfg;
    cfg.scenario.source = ScenarioSource::idx;
    CHECK_THROWS_AS(cfg.validate(), config_error); // no files named

    cfg.scenario.train_images = "imgs";
    CHECK_THROWS_AS(cfg.validate(), config_error); // labels missing
    cfg.scenario.train_labels = "labels";
    CHECK_NOTHROW(cfg.validate());

    cfg.scenario.test_images = "timgs"; // test pair must be complete
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg.scenario.test_labels = "tlabels";
    CHECK_NOTHROW(cfg.validate());

    ExperimentConfig cif;
    cif.scenario.source = ScenarioSource::cifar100;
    CHECK_THROWS_AS(cif.validate(), config_error);
    cif.scenario.cifar_train = "train.bin";
    CHECK_NOTHROW(cif.validate());

    ExperimentConfig syn;
    syn.scenario.separation = 0.0;
    CHECK_THROWS_AS(syn.validate(), config_error);

    ExperimentConfig runless;
    runless.seeds.clear();
    CHECK_THROWS_AS(runless.validate(), config_error);
    ExperimentConfig nowhere;
    nowhere.out_dir.clear();
    CHECK_THROWS_AS(nowhere.validate(), config_error);

    ExperimentConfig thr;
    thr.analysis.critical_threshold = 0.0;
    CHECK_THROWS_AS(thr.validate(), config_error);
    ExperimentConfig tau;
    tau.analysis.tau = -1.0;
    CHECK_THROWS_AS(tau.validate(), config_error);
}

TEST_CASE("validate covers the nested architecture and training configs") {
    ExperimentConfig arch;
    arch.arch.kb_channels.clear();
    CHECK_THROWS(arch.validate());

    ExperimentConfig train;
    train.train.batch_size = 0;
    CHECK_THROWS(train.validate());

    ExperimentConfig meta;
    meta.train.meta.K = 0;
    CHECK_THROWS(meta.validate());
}

TEST_CASE("enum names round-trip") {
    for (ScenarioSource s :
         {ScenarioSource::synthetic, ScenarioSource::idx, ScenarioSource::cifar100})
        CHECK(scenario_source_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(scenario_source_from_string("mnist"), config_error);
}
