// SPDX-License-Identifier: Apache-2.0
#include "mark/results.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mark/errors.hpp"
#include "mark/format.hpp"

namespace mark {

using json = nlohmann::json;

void write_text_atomic(const std::string& path, const std::string& text) {
    const std::filesystem::path target(path);
    const std::filesystem::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw io_error("short write on " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw io_error("cannot move " + target.string() + " into place (" + ec.message() +
                       ")");
    }
}

std::string summary_json(const RunResult& result, const std::string& config_hash) {
    json j;
    j["acc"] = result.acc;
    j["acc_matrix"] = result.acc_matrix.rows;
    j["bwt"] = result.bwt_value;
    j["bwt_defined"] = result.bwt_defined;
    j["config_hash"] = config_hash;
    j["final_row"] = result.acc_matrix.n_tasks() ? result.acc_matrix.rows.back()
                                                 : std::vector<double>{};
    j["kb_digests"] = result.kb_digests;
    j["n_tasks"] = result.acc_matrix.n_tasks();
    j["params"] = {{"kb", result.params.kb},
                   {"fe", result.params.fe_total()},
                   {"masks", result.params.mask_total()},
                   {"heads", result.params.head_total()},
                   {"total", result.params.total()}};
    j["seed"] = result.seed;
    j["variant"] = to_string(result.variant);
    return j.dump(2) + "\n";
}

std::string acc_matrix_csv(const AccuracyMatrix& matrix) {
    const size_t T = matrix.n_tasks();
    std::string out;
    for (size_t t = 0; t < T; ++t) out += ",task_" + std::to_string(t);
    out += "\n";
    for (size_t i = 0; i < T; ++i) {
        out += "after_" + std::to_string(i);
        for (size_t jcol = 0; jcol < T; ++jcol) {
            out += ",";
            if (jcol <= i) out += format_double(matrix.at(i, jcol));
        }
        out += "\n";
    }
    return out;
}

std::string events_jsonl(const std::vector<EvalEvent>& events) {
    std::string out;
    for (const EvalEvent& e : events) {
        json j;
        j["task"] = e.task;
        j["epoch"] = e.epoch;
        j["phase"] = e.phase;
        j["split"] = e.split;
        j["accuracy"] = e.accuracy;
        j["loss"] = e.loss;
        out += j.dump() + "\n";
    }
    return out;
}

std::string updates_json(const std::vector<KbSnapshot>& snapshots, double tau) {
    json per_task = json::array();
    for (size_t t = 1; t < snapshots.size(); ++t) {
        json entry;
        entry["task"] = t;
        entry["fractions"] = weight_update_fraction(snapshots[t - 1], snapshots[t], tau);
        per_task.push_back(entry);
    }
    json j;
    j["tau"] = tau;
    j["per_task"] = per_task;
    return j.dump(2) + "\n";
}

std::string critical_json(const std::vector<CriticalReport>& reports) {
    if (reports.empty()) throw value_error("critical_json: no reports");
    json tasks = json::array();
    for (size_t t = 0; t < reports.size(); ++t) {
        const CriticalReport& r = reports[t];
        json entry;
        entry["task"] = t;
        entry["base_accuracy"] = r.base_accuracy;
        entry["drop"] = r.drop;
        entry["impact_class"] = r.impact_class;
        entry["counts"] = {{"none", r.count(CriticalReport::none)},
                           {"impact", r.count(CriticalReport::impact)},
                           {"critical", r.count(CriticalReport::critical)}};
        tasks.push_back(entry);
    }
    json j;
    j["threshold_points"] = reports.front().threshold_points;
    j["block_of_dim"] = reports.front().block_of_dim;
    j["shared_critical"] = shared_critical_modules(reports);
    j["tasks"] = tasks;
    return j.dump(2) + "\n";
}

std::string retrain_json(const RetrainReport& report) {
    const MeanStd initial = mean_std(report.gain_initial);
    const MeanStd current = mean_std(report.gain_current);
    json j;
    j["before"] = report.before;
    j["after"] = report.after;
    j["gain_initial"] = report.gain_initial;
    j["gain_current"] = report.gain_current;
    j["mean_gain_initial"] = initial.mean;
    j["mean_gain_current"] = current.mean;
    return j.dump(2) + "\n";
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) throw metric_error("mean_std: no values");
    MeanStd out;
    for (double v : values) out.mean += v;
    out.mean /= double(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(sq / double(values.size()));
    return out;
}

namespace {

json stat_block(const std::vector<double>& values, bool defined) {
    json j;
    j["defined"] = defined;
    if (defined) {
        const MeanStd ms = mean_std(values);
        j["mean"] = ms.mean;
        j["std"] = ms.std;
        j["values"] = values;
    } else {
        j["mean"] = 0.0;
        j["std"] = 0.0;
        j["values"] = json::array();
    }
    return j;
}

} // namespace

std::string aggregate_json(Variant variant, const std::vector<SeedSummary>& seeds,
                           const std::string& config_hash) {
    if (seeds.empty()) throw value_error("aggregate_json: no seed results");
    std::vector<double> accs, bwts;
    std::vector<uint64_t> seed_list;
    bool bwt_defined = true;
    for (const SeedSummary& s : seeds) {
        accs.push_back(s.acc);
        bwts.push_back(s.bwt);
        seed_list.push_back(s.seed);
        bwt_defined = bwt_defined && s.bwt_defined;
    }
    json j;
    j["variant"] = to_string(variant);
    j["config_hash"] = config_hash;
    j["n_seeds"] = seeds.size();
    j["seeds"] = seed_list;
    j["acc"] = stat_block(accs, true);
    j["bwt"] = stat_block(bwts, bwt_defined);
    j["params_total"] = seeds.front().params_total;
    return j.dump(2) + "\n";
}

std::string comparison_csv(const std::vector<VariantSummary>& rows) {
    std::string out = "variant,acc_mean,acc_std,bwt_mean,bwt_std,params_total\n";
    for (const VariantSummary& r : rows) {
        out += to_string(r.variant);
        out += "," + format_double(r.acc.mean);
        out += "," + format_double(r.acc.std);
        if (r.bwt_defined) {
            out += "," + format_double(r.bwt.mean);
            out += "," + format_double(r.bwt.std);
        } else {
            out += ",,";
        }
        out += "," + std::to_string(r.params_total);
        out += "\n";
    }
    return out;
}

std::string comparison_json(const std::vector<VariantSummary>& rows) {
    json arr = json::array();
    for (const VariantSummary& r : rows) {
        json entry;
        entry["variant"] = to_string(r.variant);
        entry["acc"] = {{"mean", r.acc.mean}, {"std", r.acc.std}};
        entry["bwt"] = r.bwt_defined
                           ? json{{"defined", true}, {"mean", r.bwt.mean}, {"std", r.bwt.std}}
                           : json{{"defined", false}};
        entry["params_total"] = r.params_total;
        arr.push_back(entry);
    }
    json j;
    j["variants"] = arr;
    return j.dump(2) + "\n";
}

} // namespace mark
