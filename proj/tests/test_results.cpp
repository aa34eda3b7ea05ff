// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "mark/errors.hpp"
#include "mark/results.hpp"
#include "support/tmpdir.hpp"

using namespace mark;
using json = nlohmann::json;

namespace {

RunResult sample_result() {
    RunResult r;
    r.variant = Variant::full_mark;
    r.seed = 7;
    r.acc_matrix.add_row({0.9});
    r.acc_matrix.add_row({0.85, 0.95});
    r.acc = avg_accuracy(r.acc_matrix);
    r.bwt_value = bwt(r.acc_matrix);
    r.bwt_defined = true;
    r.params.kb = 100;
    r.params.fe = {25, 15};
    r.params.masks = {5, 5};
    r.params.heads = {3, 3};
    r.kb_digests = {"aaaa", "bbbb", "cccc"};
    r.events.push_back({0, 0, "query", "test", 0.5, 1.2});
    r.events.push_back({0, 1, "query", "test", 0.75, 0.8});
    return r;
}

} // namespace

TEST_CASE("summary carries the metrics back out intact") {
    const RunResult r = sample_result();
    const std::string text = summary_json(r, "deadbeef");
    const json j = json::parse(text);
    CHECK(j.at("variant") == "full_mark");
    CHECK(j.at("seed") == 7);
    CHECK(j.at("acc").get<double>() == doctest::Approx(r.acc).epsilon(1e-12));
    CHECK(j.at("bwt").get<double>() == doctest::Approx(r.bwt_value).epsilon(1e-12));
    CHECK(j.at("bwt_defined") == true);
    CHECK(j.at("config_hash") == "deadbeef");
    CHECK(j.at("n_tasks") == 2);
    CHECK(j.at("params").at("total") == 156);
    CHECK(j.at("acc_matrix").size() == 2);
    CHECK(j.at("acc_matrix")[1][0].get<double>() == doctest::Approx(0.85));
    CHECK(j.at("final_row").size() == 2);
    CHECK(j.at("kb_digests").size() == 3);
    CHECK(text.back() == '\n');
}

TEST_CASE("summary floats survive a JSON round trip bit-exactly") {
    RunResult r = sample_result();
    r.acc = 0.123456789012345678; // not representable; nearest double
    const json j = json::parse(summary_json(r, "x"));
    CHECK(j.at("acc").get<double>() == r.acc);
}

TEST_CASE("matrix csv blanks the cells past the diagonal") {
    AccuracyMatrix m;
    m.add_row({0.5});
    m.add_row({0.25, 0.75});
    const std::string csv = acc_matrix_csv(m);
    CHECK(csv == ",task_0,task_1\n"
                 "after_0,0.5,\n"
                 "after_1,0.25,0.75\n");
}

TEST_CASE("events serialize one object per line") {
    const RunResult r = sample_result();
    const std::string text = events_jsonl(r.events);
    size_t lines = 0;
    size_t pos = 0;
    while ((pos = text.find('\n', pos)) != std::string::npos) {
        ++lines;
        ++pos;
    }
    CHECK(lines == r.events.size());
    const json first = json::parse(text.substr(0, text.find('\n')));
    CHECK(first.at("task") == 0);
    CHECK(first.at("epoch") == 0);
    CHECK(first.at("phase") == "query");
    CHECK(first.at("split") == "test");
    CHECK(first.at("accuracy").get<double>() == doctest::Approx(0.5));
    CHECK(events_jsonl({}).empty());
}

TEST_CASE("mean_std matches the population formulas") {
    const MeanStd ms = mean_std({1.0, 2.0, 3.0, 4.0});
    CHECK(ms.mean == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(ms.std == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));
    const MeanStd one = mean_std({0.7});
    CHECK(one.mean == doctest::Approx(0.7));
    CHECK(one.std == 0.0);
    CHECK_THROWS_AS(mean_std({}), metric_error);
}

TEST_CASE("updates report lists one transition per trained task") {
    std::vector<KbSnapshot> snaps(3);
    for (auto& s : snaps) s.blocks = {{0.f, 0.f}, {1.f, 1.f}};
    snaps[1].blocks[0][0] = 5.f; // one weight of block 0 moved on task 1
    const json j = json::parse(updates_json(snaps, 1e-3));
    CHECK(j.at("tau").get<double>() == doctest::Approx(1e-3));
    REQUIRE(j.at("per_task").size() == 2);
    CHECK(j.at("per_task")[0].at("task") == 1);
    CHECK(j.at("per_task")[0].at("fractions")[0].get<double>() == doctest::Approx(0.5));
    CHECK(j.at("per_task")[0].at("fractions")[1].get<double>() == doctest::Approx(0.0));
    CHECK(j.at("per_task")[1].at("fractions")[0].get<double>() == doctest::Approx(0.5));
}

TEST_CASE("retrain report aggregates both gain series") {
    RetrainReport rep;
    rep.before = {0.6, 0.7};
    rep.after = {0.7, 0.7};
    rep.gain_initial = {-0.05, 0.0};
    rep.gain_current = {0.1, 0.0};
    const json j = json::parse(retrain_json(rep));
    CHECK(j.at("before").size() == 2);
    CHECK(j.at("mean_gain_current").get<double>() == doctest::Approx(0.05));
    CHECK(j.at("mean_gain_initial").get<double>() == doctest::Approx(-0.025));
}

TEST_CASE("aggregate defines bwt only when every seed has one") {
    std::vector<SeedSummary> seeds = {
        {1, 0.8, -0.1, true, 50},
        {2, 0.9, -0.2, true, 50},
    };
    json j = json::parse(aggregate_json(Variant::baseline, seeds, "h"));
    CHECK(j.at("variant") == "baseline");
    CHECK(j.at("n_seeds") == 2);
    CHECK(j.at("acc").at("mean").get<double>() == doctest::Approx(0.85));
    CHECK(j.at("bwt").at("defined") == true);
    CHECK(j.at("bwt").at("values").size() == 2);
    CHECK(j.at("params_total") == 50);

    seeds[1].bwt_defined = false; // single-task run in the mix
    j = json::parse(aggregate_json(Variant::baseline, seeds, "h"));
    CHECK(j.at("acc").at("defined") == true);
    CHECK(j.at("bwt").at("defined") == false);
}

TEST_CASE("comparison table covers every variant row") {
    std::vector<VariantSummary> rows(2);
    rows[0].variant = Variant::full_mark;
    rows[0].acc = {0.9, 0.01};
    rows[0].bwt = {-0.02, 0.005};
    rows[0].bwt_defined = true;
    rows[0].params_total = 123;
    rows[1].variant = Variant::feature_only;
    rows[1].acc = {0.5, 0.0};
    rows[1].bwt_defined = false;
    rows[1].params_total = 55;

    const std::string csv = comparison_csv(rows);
    CHECK(csv.find("variant,acc_mean,acc_std,bwt_mean,bwt_std,params_total\n") == 0);
    CHECK(csv.find("full_mark,0.9,0.01,-0.02,0.005,123\n") != std::string::npos);
    CHECK(csv.find("feature_only,0.5,0,,,55\n") != std::string::npos);

    const json j = json::parse(comparison_json(rows));
    REQUIRE(j.at("variants").size() == 2);
    CHECK(j.at("variants")[0].at("variant") == "full_mark");
    CHECK(j.at("variants")[0].at("bwt").at("defined") == true);
    CHECK(j.at("variants")[1].at("bwt").at("defined") == false);
}

TEST_CASE("serializers are deterministic") {
    const RunResult r = sample_result();
    CHECK(summary_json(r, "h") == summary_json(r, "h"));
    CHECK(events_jsonl(r.events) == events_jsonl(r.events));
    CHECK(acc_matrix_csv(r.acc_matrix) == acc_matrix_csv(r.acc_matrix));
}

TEST_CASE("atomic writes land complete or not at all") {
    const auto dir = testsupport::fresh_dir("results");
    const auto path = dir / "out.json";
    write_text_atomic(path.string(), "hello\n");
    const auto bytes = testsupport::read_bytes(path);
    CHECK(std::string(bytes.begin(), bytes.end()) == "hello\n");
    // No temporary file lingers next to the target.
    size_t files = 0;
    for ([[maybe_unused]] const auto& entry : std::filesystem::directory_iterator(dir))
        ++files;
    CHECK(files == 1);
    CHECK_THROWS_AS(write_text_atomic((dir / "no_dir" / "out.json").string(), "x"),
                    io_error);
}
