// SPDX-License-Identifier: Apache-2.0
#include "mark/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mark/errors.hpp"
#include "mark/format.hpp"
#include "mark/hash.hpp"

namespace mark {

std::string to_string(ScenarioSource source) {
    switch (source) {
        case ScenarioSource::synthetic: return "synthetic";
        case ScenarioSource::idx: return "idx";
        case ScenarioSource::cifar100: return "cifar100";
    }
    throw value_error("to_string: bad ScenarioSource");
}

ScenarioSource scenario_source_from_string(const std::string& name) {
    if (name == "synthetic") return ScenarioSource::synthetic;
    if (name == "idx") return ScenarioSource::idx;
    if (name == "cifar100") return ScenarioSource::cifar100;
    throw config_error("unknown scenario source '" + name +
                       "' (expected synthetic, idx, or cifar100)");
}

void ScenarioConfig::validate() const {
    if (n_tasks < 1) throw config_error("scenario.n_tasks must be at least 1");
    if (classes_per_task < 1)
        throw config_error("scenario.classes_per_task must be at least 1");
    switch (source) {
        case ScenarioSource::synthetic:
            if (samples_per_class < 1)
                throw config_error("scenario.samples_per_class must be at least 1");
            if (!(separation > 0.0) || !std::isfinite(separation))
                throw config_error("scenario.separation must be positive and finite");
            if (noise < 0.0 || !std::isfinite(noise))
                throw config_error("scenario.noise must be nonnegative and finite");
            break;
        case ScenarioSource::idx:
            if (train_images.empty() || train_labels.empty())
                throw config_error(
                    "scenario.source = idx needs train_images and train_labels");
            if (test_images.empty() != test_labels.empty())
                throw config_error(
                    "scenario.test_images and test_labels must be given together");
            break;
        case ScenarioSource::cifar100:
            if (cifar_train.empty())
                throw config_error("scenario.source = cifar100 needs cifar_train");
            break;
    }
}

void AnalysisConfig::validate() const {
    if (!(critical_threshold > 0.0) || !std::isfinite(critical_threshold))
        throw config_error("analysis.critical_threshold must be positive and finite");
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw config_error("analysis.tau must be positive and finite");
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw config_error("run.seeds must list at least one seed");
    if (out_dir.empty()) throw config_error("run.out_dir must not be empty");
    scenario.validate();
    arch.validate();
    train.validate();
    analysis.validate();
}

// ---------------------------------------------------------------------------
// Value formatting & parsing
// ---------------------------------------------------------------------------

namespace {

uint64_t parse_u64(const std::string& text) {
    if (text.empty()) throw config_error("expected an integer, got nothing");
    for (char c : text)
        if (!std::isdigit(static_cast<unsigned char>(c)))
            throw config_error("expected an integer, got '" + text + "'");
    errno = 0;
    const uint64_t v = std::strtoull(text.c_str(), nullptr, 10);
    if (errno == ERANGE)
        throw config_error("integer out of range: '" + text + "'");
    return v;
}

size_t parse_size(const std::string& text) {
    const uint64_t v = parse_u64(text);
    if (v > SIZE_MAX) throw config_error("integer out of range: '" + text + "'");
    return static_cast<size_t>(v);
}

double parse_double(const std::string& text) {
    if (text.empty()) throw config_error("expected a number, got nothing");
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || !std::isfinite(v))
        throw config_error("expected a finite number, got '" + text + "'");
    return v;
}

bool parse_bool(const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw config_error("expected true or false, got '" + text + "'");
}

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty())
            throw config_error("empty item in list '" + text + "'");
        items.push_back(item);
    }
    return items;
}

template <typename T, typename Parse>
std::string format_list(const std::vector<T>& v, Parse format_one) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_one(v[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Key registry
// ---------------------------------------------------------------------------

/// One config key: its dotted name, documentation, accessors, and whether it
/// only affects execution (excluded from the experiment hash).
struct KeyInfo {
    std::string key;
    std::string doc;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    bool execution_only = false;
};

std::vector<KeyInfo> build_registry() {
    std::vector<KeyInfo> reg;
    auto add = [&](std::string key, std::string doc, auto get, auto set,
                   bool execution_only = false) {
        reg.push_back({std::move(key), std::move(doc), get, set, execution_only});
    };
    using C = ExperimentConfig;

    // [run]
    add("run.variant",
        "recipe trained by `train`: full_mark | baseline | baseline_ml | "
        "baseline_mask | no_retraining | feature_only",
        [](const C& c) { return to_string(c.variant); },
        [](C& c, const std::string& v) { c.variant = variant_from_string(v); });
    add("run.seeds", "comma-separated training seeds; one run per seed plus an aggregate",
        [](const C& c) {
            return format_list(c.seeds, [](uint64_t s) { return std::to_string(s); });
        },
        [](C& c, const std::string& v) {
            c.seeds.clear();
            for (const std::string& item : split_list(v)) c.seeds.push_back(parse_u64(item));
        });
    add("run.out_dir", "directory the result files are written into",
        [](const C& c) { return c.out_dir; },
        [](C& c, const std::string& v) { c.out_dir = v; },
        /*execution_only=*/true);
    add("run.threads", "worker threads for the episodic inner loop (results are "
        "identical at any count)",
        [](const C& c) { return std::to_string(c.train.threads); },
        [](C& c, const std::string& v) { c.train.threads = parse_size(v); },
        /*execution_only=*/true);

    // [scenario]
    add("scenario.source", "task data: synthetic | idx | cifar100",
        [](const C& c) { return to_string(c.scenario.source); },
        [](C& c, const std::string& v) {
            c.scenario.source = scenario_source_from_string(v);
        });
    add("scenario.n_tasks", "number of sequential tasks",
        [](const C& c) { return std::to_string(c.scenario.n_tasks); },
        [](C& c, const std::string& v) { c.scenario.n_tasks = parse_size(v); });
    add("scenario.classes_per_task", "classes in each task (file sources: classes "
        "must divide evenly)",
        [](const C& c) { return std::to_string(c.scenario.classes_per_task); },
        [](C& c, const std::string& v) { c.scenario.classes_per_task = parse_size(v); });
    add("scenario.samples_per_class", "synthetic: samples drawn per class",
        [](const C& c) { return std::to_string(c.scenario.samples_per_class); },
        [](C& c, const std::string& v) { c.scenario.samples_per_class = parse_size(v); });
    add("scenario.separation", "synthetic: minimum distance between class means",
        [](const C& c) { return format_double(c.scenario.separation); },
        [](C& c, const std::string& v) { c.scenario.separation = parse_double(v); });
    add("scenario.noise", "synthetic: per-coordinate standard deviation",
        [](const C& c) { return format_double(c.scenario.noise); },
        [](C& c, const std::string& v) { c.scenario.noise = parse_double(v); });
    add("scenario.order", "file sources: class-to-task assignment, sorted | shuffled",
        [](const C& c) { return to_string(c.scenario.order); },
        [](C& c, const std::string& v) { c.scenario.order = task_order_from_string(v); });
    add("scenario.train_images", "idx: training images file",
        [](const C& c) { return c.scenario.train_images; },
        [](C& c, const std::string& v) { c.scenario.train_images = v; });
    add("scenario.train_labels", "idx: training labels file",
        [](const C& c) { return c.scenario.train_labels; },
        [](C& c, const std::string& v) { c.scenario.train_labels = v; });
    add("scenario.test_images", "idx: optional test images file",
        [](const C& c) { return c.scenario.test_images; },
        [](C& c, const std::string& v) { c.scenario.test_images = v; });
    add("scenario.test_labels", "idx: optional test labels file",
        [](const C& c) { return c.scenario.test_labels; },
        [](C& c, const std::string& v) { c.scenario.test_labels = v; });
    add("scenario.cifar_train", "cifar100: training binary file",
        [](const C& c) { return c.scenario.cifar_train; },
        [](C& c, const std::string& v) { c.scenario.cifar_train = v; });
    add("scenario.cifar_test", "cifar100: optional test binary file",
        [](const C& c) { return c.scenario.cifar_test; },
        [](C& c, const std::string& v) { c.scenario.cifar_test = v; });
    add("scenario.embeddings", "optional precomputed embedding table "
        "(required by arch.fe_variant = external_embedding)",
        [](const C& c) { return c.scenario.embeddings; },
        [](C& c, const std::string& v) { c.scenario.embeddings = v; });

    // [arch]
    add("arch.block_kind", "knowledge-base blocks: conv | dense",
        [](const C& c) { return to_string(c.arch.block_kind); },
        [](C& c, const std::string& v) { c.arch.block_kind = block_kind_from_string(v); });
    add("arch.fe_variant",
        "per-task extractor: task_trained | random | external_embedding",
        [](const C& c) { return to_string(c.arch.fe_variant); },
        [](C& c, const std::string& v) { c.arch.fe_variant = fe_variant_from_string(v); });
    add("arch.in_channels", "conv mode: input image channels",
        [](const C& c) { return std::to_string(c.arch.in_channels); },
        [](C& c, const std::string& v) { c.arch.in_channels = parse_size(v); });
    add("arch.in_h", "conv mode: input image height",
        [](const C& c) { return std::to_string(c.arch.in_h); },
        [](C& c, const std::string& v) { c.arch.in_h = parse_size(v); });
    add("arch.in_w", "conv mode: input image width",
        [](const C& c) { return std::to_string(c.arch.in_w); },
        [](C& c, const std::string& v) { c.arch.in_w = parse_size(v); });
    add("arch.in_dim", "dense mode: input width",
        [](const C& c) { return std::to_string(c.arch.in_dim); },
        [](C& c, const std::string& v) { c.arch.in_dim = parse_size(v); });
    add("arch.kb_channels", "knowledge-base block widths, one per block",
        [](const C& c) {
            return format_list(c.arch.kb_channels,
                               [](size_t s) { return std::to_string(s); });
        },
        [](C& c, const std::string& v) {
            c.arch.kb_channels.clear();
            for (const std::string& item : split_list(v))
                c.arch.kb_channels.push_back(parse_size(item));
        });
    add("arch.kb_kernel", "conv mode: KB kernel size",
        [](const C& c) { return std::to_string(c.arch.kb_kernel); },
        [](C& c, const std::string& v) { c.arch.kb_kernel = parse_size(v); });
    add("arch.pool_window", "conv mode: pooling window after each KB block",
        [](const C& c) { return std::to_string(c.arch.pool_window); },
        [](C& c, const std::string& v) { c.arch.pool_window = parse_size(v); });
    add("arch.trunk_dim", "width of the dense trunk after the KB blocks",
        [](const C& c) { return std::to_string(c.arch.trunk_dim); },
        [](C& c, const std::string& v) { c.arch.trunk_dim = parse_size(v); });
    add("arch.fe_filters", "conv mode: filters in both extractor conv layers",
        [](const C& c) { return std::to_string(c.arch.fe_filters); },
        [](C& c, const std::string& v) { c.arch.fe_filters = parse_size(v); });
    add("arch.fe_kernel", "conv mode: extractor kernel size",
        [](const C& c) { return std::to_string(c.arch.fe_kernel); },
        [](C& c, const std::string& v) { c.arch.fe_kernel = parse_size(v); });
    add("arch.fe_hidden", "dense mode: extractor hidden width",
        [](const C& c) { return std::to_string(c.arch.fe_hidden); },
        [](C& c, const std::string& v) { c.arch.fe_hidden = parse_size(v); });
    add("arch.embed_dim", "width of the per-task feature embedding",
        [](const C& c) { return std::to_string(c.arch.embed_dim); },
        [](C& c, const std::string& v) { c.arch.embed_dim = parse_size(v); });
    add("arch.mask_bias", "mask generator bias (true gives identity masks at "
        "initialization; false is the strict bias-free form)",
        [](const C& c) { return c.arch.mask_bias ? "true" : "false"; },
        [](C& c, const std::string& v) { c.arch.mask_bias = parse_bool(v); });

    // [train]
    add("train.init_epochs", "epochs of KB initialization on the first task",
        [](const C& c) { return std::to_string(c.train.init_epochs); },
        [](C& c, const std::string& v) { c.train.init_epochs = parse_size(v); });
    add("train.fe_epochs", "epochs of per-task feature-extractor training",
        [](const C& c) { return std::to_string(c.train.fe_epochs); },
        [](C& c, const std::string& v) { c.train.fe_epochs = parse_size(v); });
    add("train.query_epochs", "epochs per query phase (mask + head against the "
        "frozen KB)",
        [](const C& c) { return std::to_string(c.train.query_epochs); },
        [](C& c, const std::string& v) { c.train.query_epochs = parse_size(v); });
    add("train.batch_size", "mini-batch size for every phase",
        [](const C& c) { return std::to_string(c.train.batch_size); },
        [](C& c, const std::string& v) { c.train.batch_size = parse_size(v); });
    add("train.epoch_multiplier", "epoch factor for single-phase variants so every "
        "variant gets the same per-task budget",
        [](const C& c) { return std::to_string(c.train.epoch_multiplier); },
        [](C& c, const std::string& v) { c.train.epoch_multiplier = parse_size(v); });
    add("train.record_events", "record per-epoch train/val/test accuracy events",
        [](const C& c) { return c.train.record_events ? "true" : "false"; },
        [](C& c, const std::string& v) { c.train.record_events = parse_bool(v); });

    // [sgd]
    add("sgd.learning_rate", "SGD learning rate for the init/query/joint phases",
        [](const C& c) { return format_double(c.train.sgd.learning_rate); },
        [](C& c, const std::string& v) { c.train.sgd.learning_rate = parse_double(v); });
    add("sgd.momentum", "SGD momentum (the episodic inner loop always uses 0)",
        [](const C& c) { return format_double(c.train.sgd.momentum); },
        [](C& c, const std::string& v) { c.train.sgd.momentum = parse_double(v); });
    add("sgd.weight_decay", "L2 weight decay added to gradients",
        [](const C& c) { return format_double(c.train.sgd.weight_decay); },
        [](C& c, const std::string& v) { c.train.sgd.weight_decay = parse_double(v); });

    // [meta]
    add("meta.K", "mini-tasks per outer iteration",
        [](const C& c) { return std::to_string(c.train.meta.K); },
        [](C& c, const std::string& v) { c.train.meta.K = parse_size(v); });
    add("meta.H", "classes per mini-task; 0 picks max(2, half the task's classes)",
        [](const C& c) { return std::to_string(c.train.meta.H); },
        [](C& c, const std::string& v) { c.train.meta.H = parse_size(v); });
    add("meta.h", "instances per mini-task class; 0 picks min(64, smallest class)",
        [](const C& c) { return std::to_string(c.train.meta.h); },
        [](C& c, const std::string& v) { c.train.meta.h = parse_size(v); });
    add("meta.E_inner", "inner-loop epochs per KB copy",
        [](const C& c) { return std::to_string(c.train.meta.E_inner); },
        [](C& c, const std::string& v) { c.train.meta.E_inner = parse_size(v); });
    add("meta.E_outer", "outer iterations of the episodic update",
        [](const C& c) { return std::to_string(c.train.meta.E_outer); },
        [](C& c, const std::string& v) { c.train.meta.E_outer = parse_size(v); });
    add("meta.inner_lr", "inner-loop learning rate (momentum-free SGD)",
        [](const C& c) { return format_double(c.train.meta.inner_lr); },
        [](C& c, const std::string& v) { c.train.meta.inner_lr = parse_double(v); });
    add("meta.alpha", "outer step size applied to the aggregated delta",
        [](const C& c) { return format_double(c.train.meta.alpha); },
        [](C& c, const std::string& v) { c.train.meta.alpha = parse_double(v); });
    add("meta.meta_sign", "outer update direction: reptile (toward the adapted "
        "copies) | paper (literal minus sign)",
        [](const C& c) { return to_string(c.train.meta.meta_sign); },
        [](C& c, const std::string& v) {
            c.train.meta.meta_sign = meta_sign_from_string(v);
        });
    add("meta.inner_masks", "apply the task's frozen masks inside the inner loop",
        [](const C& c) { return c.train.meta.inner_masks ? "true" : "false"; },
        [](C& c, const std::string& v) { c.train.meta.inner_masks = parse_bool(v); });

    // [analysis]
    add("analysis.critical", "after training, probe every mask dimension's impact",
        [](const C& c) { return c.analysis.critical ? "true" : "false"; },
        [](C& c, const std::string& v) { c.analysis.critical = parse_bool(v); });
    add("analysis.updates", "after training, report per-block KB weight-change "
        "fractions between task boundaries",
        [](const C& c) { return c.analysis.updates ? "true" : "false"; },
        [](C& c, const std::string& v) { c.analysis.updates = parse_bool(v); });
    add("analysis.retrain", "after training, re-query every task against the "
        "final KB and report the gain",
        [](const C& c) { return c.analysis.retrain ? "true" : "false"; },
        [](C& c, const std::string& v) { c.analysis.retrain = parse_bool(v); });
    add("analysis.critical_threshold", "accuracy drop (percentage points) that "
        "makes a mask dimension critical",
        [](const C& c) { return format_double(c.analysis.critical_threshold); },
        [](C& c, const std::string& v) {
            c.analysis.critical_threshold = parse_double(v);
        });
    add("analysis.tau", "per-weight |change| above which a weight counts as updated",
        [](const C& c) { return format_double(c.analysis.tau); },
        [](C& c, const std::string& v) { c.analysis.tau = parse_double(v); });

    return reg;
}

const std::vector<KeyInfo>& registry() {
    static const std::vector<KeyInfo> reg = build_registry();
    return reg;
}

const KeyInfo* find_key(const std::string& key) {
    for (const KeyInfo& k : registry())
        if (k.key == key) return &k;
    return nullptr;
}

std::string section_of(const std::string& key) {
    return key.substr(0, key.find('.'));
}

bool known_section(const std::string& name) {
    for (const KeyInfo& k : registry())
        if (section_of(k.key) == name) return true;
    return false;
}

} // namespace

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    size_t line_no = 0;

    auto fail = [&](const std::string& msg) -> void {
        throw config_error(origin + ":" + std::to_string(line_no) + ": " + msg);
    };

    while (std::getline(in, raw)) {
        ++line_no;
        const size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            if (!known_section(section)) fail("unknown section '" + section + "'");
            continue;
        }

        const size_t eq = line.find('=');
        if (eq == std::string::npos) fail("expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail("missing key before '='");

        std::string full = key;
        if (key.find('.') == std::string::npos) {
            if (section.empty())
                fail("key '" + key + "' outside any section (open a [section] "
                     "or write it as section.key)");
            full = section + "." + key;
        }
        const KeyInfo* info = find_key(full);
        if (!info) fail("unknown key '" + full + "'");
        try {
            info->set(cfg, value);
        } catch (const config_error& e) {
            fail(full + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config file not found: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

// ---------------------------------------------------------------------------
// Canonical echo, hash, reference
// ---------------------------------------------------------------------------

std::string echo_config(const ExperimentConfig& cfg) {
    std::string out;
    std::string section;
    for (const KeyInfo& k : registry()) {
        const std::string sec = section_of(k.key);
        if (sec != section) {
            if (!out.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += k.key.substr(sec.size() + 1) + " = " + k.get(cfg) + "\n";
    }
    return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
    Fnv1a h;
    for (const KeyInfo& k : registry()) {
        if (k.execution_only) continue;
        const std::string line = k.key + "=" + k.get(cfg) + "\n";
        h.update(line.data(), line.size());
    }
    return h.hex();
}

std::string config_reference() {
    const ExperimentConfig defaults;
    std::string out =
        "# Configuration reference\n"
        "#\n"
        "# Format: `key = value` lines grouped under `[section]` headers.\n"
        "# Dotted keys such as `meta.K = 10` work anywhere, with or without a\n"
        "# section header.  `#` starts a comment.  Unknown keys, unknown\n"
        "# sections, and malformed values are errors naming their line.\n"
        "# An empty file means all defaults, which are the values below.\n"
        "#\n"
        "# run.out_dir and run.threads affect only where and how a run\n"
        "# executes, never its numbers; they are excluded from the config\n"
        "# hash recorded in summary.json.\n";
    std::string section;
    for (const KeyInfo& k : registry()) {
        const std::string sec = section_of(k.key);
        if (sec != section) {
            out += "\n[" + sec + "]\n";
            section = sec;
        }
        out += "# " + k.doc + "\n";
        out += k.key.substr(sec.size() + 1) + " = " + k.get(defaults) + "\n";
    }
    return out;
}

} // namespace mark
