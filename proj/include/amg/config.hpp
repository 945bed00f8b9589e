#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "amg/sampler.hpp"

namespace amg {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

/// Validation failure tied to a config field path.
struct ConfigError : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};

struct EmbeddingConfig {
    int dim = 8;
    std::uint64_t seed = 7;
    bool normalize = true;
};

struct MetricSettings {
    MetricKind kind = MetricKind::NL2;
    int k = 50;
    double alpha = 0.5;
    bool include_nearest_in_set = true;
    std::optional<double> threshold;  // default depends on kind
    EmbeddingConfig embedding;
    std::optional<EmbeddingConfig> coarse;
    int coarse_k = 0;

    double resolved_threshold() const { return threshold ? *threshold : (kind == MetricKind::NL2 ? -1.4 : 0.5); }
};

enum class ConditionMode { None, Fixed, Cycle };

struct ExperimentConfig {
    std::string name = "experiment";
    CorpusSpec corpus;
    std::vector<int> watchlist;
    bool evaluate_watchlist_only = false;
    int schedule_T = 250;
    double beta_start = 1e-4, beta_end = 0.02;
    SamplerKind sampler = SamplerKind::DDIM;
    int steps = 50;
    ConditionMode condition_mode = ConditionMode::None;
    int condition = 0;
    std::uint64_t seed = 0;
    int trajectories = 1000;
    int threads = 0;
    int sigma_every = 1;
    GuidanceConfig guidance;
    bool terms_given = false;  // false: ancestral sampler defaults to the dissimilarity term only
    MetricSettings guidance_metric;
    std::optional<MetricSettings> evaluation_metric;
    std::vector<double> thresholds = {-1.4, -1.6};
    int reference_count = 1000;
    int kde_points = 512;
    std::optional<double> kde_bandwidth;
    std::optional<std::string> gate_variant;
    std::optional<double> gate_threshold;
    std::string output_dir = "runs/out";
    bool binary_traces = false;
    json variants = json::array();  // [{name, overrides}] merge patches over this config
};

namespace detail {

inline std::string field(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

template <class T>
T get_or(const json& j, const std::string& path, const char* key, T def) {
    if (!j.contains(key) || j[key].is_null()) return def;
    try {
        return j[key].get<T>();
    } catch (const json::exception&) {
        throw ConfigError(field(path, key) + ": wrong type");
    }
}

inline void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok |= it.key() == k;
        if (!ok) throw ConfigError(field(path, it.key()) + ": unknown field");
    }
}

inline MetricKind parse_metric_kind(const std::string& s, const std::string& path) {
    if (s == "nl2") return MetricKind::NL2;
    if (s == "embedding") return MetricKind::Embedding;
    throw ConfigError(path + ": expected nl2 | embedding");
}

inline EmbeddingConfig parse_embedding(const json& j, const std::string& path) {
    reject_unknown(j, path, {"dim", "seed", "normalize"});
    EmbeddingConfig e;
    e.dim = get_or(j, path, "dim", e.dim);
    e.seed = get_or(j, path, "seed", e.seed);
    e.normalize = get_or(j, path, "normalize", e.normalize);
    return e;
}

inline json embedding_json(const EmbeddingConfig& e) { return {{"dim", e.dim}, {"seed", e.seed}, {"normalize", e.normalize}}; }

inline MetricSettings parse_metric(const json& j, const std::string& path) {
    reject_unknown(j, path, {"kind", "k", "alpha", "include_nearest_in_set", "threshold", "embedding", "coarse", "coarse_k"});
    MetricSettings m;
    m.kind = parse_metric_kind(get_or<std::string>(j, path, "kind", "nl2"), field(path, "kind"));
    m.k = get_or(j, path, "k", m.k);
    m.alpha = get_or(j, path, "alpha", m.alpha);
    m.include_nearest_in_set = get_or(j, path, "include_nearest_in_set", m.include_nearest_in_set);
    if (j.contains("threshold") && !j["threshold"].is_null()) m.threshold = get_or(j, path, "threshold", 0.0);
    if (j.contains("embedding")) m.embedding = parse_embedding(j["embedding"], field(path, "embedding"));
    if (j.contains("coarse") && !j["coarse"].is_null()) m.coarse = parse_embedding(j["coarse"], field(path, "coarse"));
    m.coarse_k = get_or(j, path, "coarse_k", m.coarse_k);
    if (m.k < 2) throw ConfigError(field(path, "k") + ": must be >= 2");
    if (!(m.alpha > 0)) throw ConfigError(field(path, "alpha") + ": must be > 0");
    if (m.coarse_k < 0) throw ConfigError(field(path, "coarse_k") + ": must be >= 0");
    if (m.coarse_k > 0 && !m.coarse) throw ConfigError(field(path, "coarse_k") + ": requires a coarse embedding");
    return m;
}

inline json metric_json(const MetricSettings& m) {
    json j = {{"kind", to_string(m.kind)},
              {"k", m.k},
              {"alpha", m.alpha},
              {"include_nearest_in_set", m.include_nearest_in_set},
              {"threshold", m.resolved_threshold()},
              {"embedding", embedding_json(m.embedding)},
              {"coarse_k", m.coarse_k}};
    j["coarse"] = m.coarse ? embedding_json(*m.coarse) : json(nullptr);
    return j;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& root) {
    using namespace detail;
    reject_unknown(root, "", {"schema_version", "name", "corpus", "schedule", "sampler", "guidance", "guidance_metric",
                              "evaluation_metric", "thresholds", "reference", "kde", "gate", "output", "variants"});
    if (!root.contains("schema_version")) throw ConfigError("schema_version: required");
    if (get_or(root, "", "schema_version", 0) != kConfigSchemaVersion)
        throw ConfigError("schema_version: unsupported (expected " + std::to_string(kConfigSchemaVersion) + ")");
    ExperimentConfig c;
    c.name = get_or<std::string>(root, "", "name", c.name);

    if (root.contains("corpus")) {
        const json& j = root["corpus"];
        const std::string p = "corpus";
        reject_unknown(j, p, {"kind", "n", "dim", "tokens", "seed", "scale", "cluster_spread", "shell", "grid_spacing",
                              "duplicate_per_token", "duplicates", "file", "watchlist", "evaluate_watchlist_only"});
        auto kind = get_or<std::string>(j, p, "kind", "gaussian-mixture");
        if (kind == "grid") c.corpus.kind = CorpusSpec::Kind::Grid;
        else if (kind == "gaussian-mixture") c.corpus.kind = CorpusSpec::Kind::GaussianMixture;
        else if (kind == "file") c.corpus.kind = CorpusSpec::Kind::File;
        else throw ConfigError("corpus.kind: expected grid | gaussian-mixture | file");
        c.corpus.n = get_or(j, p, "n", c.corpus.n);
        c.corpus.dim = get_or(j, p, "dim", c.corpus.dim);
        c.corpus.tokens = get_or(j, p, "tokens", c.corpus.tokens);
        c.corpus.seed = get_or(j, p, "seed", c.corpus.seed);
        c.corpus.scale = get_or(j, p, "scale", c.corpus.scale);
        c.corpus.cluster_spread = get_or(j, p, "cluster_spread", c.corpus.cluster_spread);
        c.corpus.shell = get_or(j, p, "shell", c.corpus.shell);
        c.corpus.grid_spacing = get_or(j, p, "grid_spacing", c.corpus.grid_spacing);
        c.corpus.duplicate_per_token = get_or(j, p, "duplicate_per_token", 32.0);
        c.corpus.file = get_or<std::string>(j, p, "file", "");
        if (j.contains("duplicates")) {
            for (const auto& d : j["duplicates"]) {
                reject_unknown(d, "corpus.duplicates[]", {"index", "multiplicity", "token"});
                Duplication dup;
                dup.index = get_or(d, "corpus.duplicates[]", "index", 0);
                dup.multiplicity = get_or(d, "corpus.duplicates[]", "multiplicity", 1.0);
                if (d.contains("token") && !d["token"].is_null()) dup.token = d["token"].get<int>();
                c.corpus.duplicates.push_back(dup);
            }
        }
        c.watchlist = get_or(j, p, "watchlist", std::vector<int>{});
        c.evaluate_watchlist_only = get_or(j, p, "evaluate_watchlist_only", false);
        if (c.corpus.scale <= 0) throw ConfigError("corpus.scale: must be > 0");
        if (c.corpus.duplicate_per_token < 1) throw ConfigError("corpus.duplicate_per_token: must be >= 1");
        if (c.corpus.kind == CorpusSpec::Kind::File && c.corpus.file.empty())
            throw ConfigError("corpus.file: required for kind=file");
        if (c.corpus.kind != CorpusSpec::Kind::File && (c.corpus.n < 1 || c.corpus.dim < 1 || c.corpus.tokens < 1))
            throw ConfigError("corpus.n/dim/tokens: must be >= 1");
    } else {
        c.corpus.duplicate_per_token = 32;
    }

    if (root.contains("schedule")) {
        const json& j = root["schedule"];
        reject_unknown(j, "schedule", {"T", "beta_start", "beta_end"});
        c.schedule_T = get_or(j, "schedule", "T", c.schedule_T);
        c.beta_start = get_or(j, "schedule", "beta_start", c.beta_start);
        c.beta_end = get_or(j, "schedule", "beta_end", c.beta_end);
        if (c.schedule_T < 1) throw ConfigError("schedule.T: must be >= 1");
        if (!(c.beta_start > 0 && c.beta_end < 1 && c.beta_start <= c.beta_end))
            throw ConfigError("schedule.beta_start/beta_end: need 0 < start <= end < 1");
    }

    if (root.contains("sampler")) {
        const json& j = root["sampler"];
        const std::string p = "sampler";
        reject_unknown(j, p, {"kind", "steps", "condition", "seed", "trajectories", "threads", "sigma_every"});
        auto kind = get_or<std::string>(j, p, "kind", "ddim");
        if (kind == "ddim") c.sampler = SamplerKind::DDIM;
        else if (kind == "ddpm") c.sampler = SamplerKind::DDPM;
        else throw ConfigError("sampler.kind: expected ddim | ddpm");
        c.steps = get_or(j, p, "steps", c.steps);
        if (j.contains("condition") && !j["condition"].is_null()) {
            if (j["condition"].is_string()) {
                if (j["condition"] != "cycle") throw ConfigError("sampler.condition: expected a token, null or \"cycle\"");
                c.condition_mode = ConditionMode::Cycle;
            } else {
                c.condition_mode = ConditionMode::Fixed;
                c.condition = get_or(j, p, "condition", 0);
            }
        }
        c.seed = get_or(j, p, "seed", c.seed);
        c.trajectories = get_or(j, p, "trajectories", c.trajectories);
        c.threads = get_or(j, p, "threads", c.threads);
        c.sigma_every = get_or(j, p, "sigma_every", c.sigma_every);
        if (c.steps < 1 || c.steps > c.schedule_T) throw ConfigError("sampler.steps: must be in [1, schedule.T]");
        if (c.trajectories < 1) throw ConfigError("sampler.trajectories: must be >= 1");
        if (c.sigma_every < 1) throw ConfigError("sampler.sigma_every: must be >= 1");
    }

    if (root.contains("guidance")) {
        const json& j = root["guidance"];
        const std::string p = "guidance";
        reject_unknown(j, p, {"s0", "c1", "c2", "c3", "terms", "gradient_mode", "activation", "constant_level", "schedule"});
        auto& g = c.guidance;
        g.s0 = get_or(j, p, "s0", g.s0);
        g.c1 = get_or(j, p, "c1", g.c1);
        g.c2 = get_or(j, p, "c2", g.c2);
        g.c3 = get_or(j, p, "c3", g.c3);
        if (j.contains("terms")) {
            c.terms_given = true;
            g.terms = {false, false, false};
            for (const auto& t : j["terms"]) {
                std::string s = t.is_string() ? t.get<std::string>() : "";
                if (s == "spe") g.terms.spe = true;
                else if (s == "dup") g.terms.dup = true;
                else if (s == "sim") g.terms.sim = true;
                else throw ConfigError("guidance.terms: entries must be spe | dup | sim");
            }
        }
        auto mode = get_or<std::string>(j, p, "gradient_mode", "frozen-eps");
        if (mode == "frozen-eps") g.gradient_mode = GradientMode::FrozenEps;
        else if (mode == "full") g.gradient_mode = GradientMode::Full;
        else throw ConfigError("guidance.gradient_mode: expected frozen-eps | full");
        auto act = get_or<std::string>(j, p, "activation", "parabolic");
        if (act == "parabolic") g.activation = Activation::Parabolic;
        else if (act == "constant") g.activation = Activation::Constant;
        else if (act == "always") g.activation = Activation::Always;
        else if (act == "never") g.activation = Activation::Never;
        else throw ConfigError("guidance.activation: expected parabolic | constant | always | never");
        if (j.contains("schedule")) {
            const json& s = j["schedule"];
            reject_unknown(s, "guidance.schedule", {"a", "b", "c"});
            g.schedule.a = get_or(s, "guidance.schedule", "a", g.schedule.a);
            g.schedule.b = get_or(s, "guidance.schedule", "b", g.schedule.b);
            g.schedule.c = get_or(s, "guidance.schedule", "c", g.schedule.c);
        }
        g.constant_level = get_or(j, p, "constant_level", g.schedule.b);
        if (g.s0 < 1) throw ConfigError("guidance.s0: must be >= 1");
        if (g.c1 < 0 || g.c2 < 0 || g.c3 < 0) throw ConfigError("guidance.c1/c2/c3: must be >= 0");
        if (!(g.schedule.c > 0)) throw ConfigError("guidance.schedule.c: must be > 0 (decay rate)");
        if (!(g.schedule.b > g.schedule.a)) throw ConfigError("guidance.schedule: need b > a");
    }
    if (!c.terms_given && c.sampler == SamplerKind::DDPM) c.guidance.terms = {false, false, true};

    if (root.contains("guidance_metric")) c.guidance_metric = parse_metric(root["guidance_metric"], "guidance_metric");
    if (root.contains("evaluation_metric") && !root["evaluation_metric"].is_null())
        c.evaluation_metric = parse_metric(root["evaluation_metric"], "evaluation_metric");
    if (root.contains("thresholds")) c.thresholds = get_or(root, "", "thresholds", c.thresholds);
    if (root.contains("reference")) {
        reject_unknown(root["reference"], "reference", {"count"});
        c.reference_count = get_or(root["reference"], "reference", "count", c.reference_count);
        if (c.reference_count < 1) throw ConfigError("reference.count: must be >= 1");
    }
    if (root.contains("kde")) {
        reject_unknown(root["kde"], "kde", {"points", "bandwidth"});
        c.kde_points = get_or(root["kde"], "kde", "points", c.kde_points);
        if (root["kde"].contains("bandwidth") && !root["kde"]["bandwidth"].is_null())
            c.kde_bandwidth = get_or(root["kde"], "kde", "bandwidth", 0.0);
        if (c.kde_points < 2) throw ConfigError("kde.points: must be >= 2");
        if (c.kde_bandwidth && !(*c.kde_bandwidth > 0)) throw ConfigError("kde.bandwidth: must be > 0");
    }
    if (root.contains("gate") && !root["gate"].is_null()) {
        reject_unknown(root["gate"], "gate", {"variant", "threshold"});
        c.gate_variant = get_or<std::string>(root["gate"], "gate", "variant", "");
        if (root["gate"].contains("threshold")) c.gate_threshold = get_or(root["gate"], "gate", "threshold", 0.0);
    }
    if (root.contains("output")) {
        reject_unknown(root["output"], "output", {"dir", "binary_traces"});
        c.output_dir = get_or<std::string>(root["output"], "output", "dir", c.output_dir);
        c.binary_traces = get_or(root["output"], "output", "binary_traces", c.binary_traces);
    }
    if (root.contains("variants")) {
        if (!root["variants"].is_array()) throw ConfigError("variants: expected an array");
        for (const auto& v : root["variants"]) {
            reject_unknown(v, "variants[]", {"name", "overrides"});
            if (!v.contains("name") || !v["name"].is_string()) throw ConfigError("variants[].name: required string");
            if (v.contains("overrides") && !v["overrides"].is_object())
                throw ConfigError("variants[].overrides: expected an object");
            if (v.contains("overrides") && v["overrides"].contains("variants"))
                throw ConfigError("variants[].overrides: may not nest variants");
        }
        c.variants = root["variants"];
    }
    return c;
}

/// Fully resolved config as JSON; the hash covers exactly this document.
inline json to_json(const ExperimentConfig& c) {
    using namespace detail;
    json corpus = {{"kind", to_string(c.corpus.kind)},
                   {"n", c.corpus.n},
                   {"dim", c.corpus.dim},
                   {"tokens", c.corpus.tokens},
                   {"seed", c.corpus.seed},
                   {"scale", c.corpus.scale},
                   {"cluster_spread", c.corpus.cluster_spread},
                   {"shell", c.corpus.shell},
                   {"grid_spacing", c.corpus.grid_spacing},
                   {"duplicate_per_token", c.corpus.duplicate_per_token},
                   {"file", c.corpus.file},
                   {"watchlist", c.watchlist},
                   {"evaluate_watchlist_only", c.evaluate_watchlist_only}};
    json dups = json::array();
    for (const auto& d : c.corpus.duplicates) {
        json dj = {{"index", d.index}, {"multiplicity", d.multiplicity}};
        dj["token"] = d.token ? json(*d.token) : json(nullptr);
        dups.push_back(dj);
    }
    corpus["duplicates"] = dups;
    json terms = json::array();
    if (c.guidance.terms.spe) terms.push_back("spe");
    if (c.guidance.terms.dup) terms.push_back("dup");
    if (c.guidance.terms.sim) terms.push_back("sim");
    json cond = c.condition_mode == ConditionMode::None    ? json(nullptr)
                : c.condition_mode == ConditionMode::Cycle ? json("cycle")
                                                           : json(c.condition);
    json j = {
        {"schema_version", kConfigSchemaVersion},
        {"name", c.name},
        {"corpus", corpus},
        {"schedule", {{"T", c.schedule_T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}},
        {"sampler",
         {{"kind", to_string(c.sampler)},
          {"steps", c.steps},
          {"condition", cond},
          {"seed", c.seed},
          {"trajectories", c.trajectories},
          {"threads", c.threads},
          {"sigma_every", c.sigma_every}}},
        {"guidance",
         {{"s0", c.guidance.s0},
          {"c1", c.guidance.c1},
          {"c2", c.guidance.c2},
          {"c3", c.guidance.c3},
          {"terms", terms},
          {"gradient_mode", to_string(c.guidance.gradient_mode)},
          {"activation", to_string(c.guidance.activation)},
          {"constant_level", c.guidance.constant_level},
          {"schedule", {{"a", c.guidance.schedule.a}, {"b", c.guidance.schedule.b}, {"c", c.guidance.schedule.c}}}}},
        {"guidance_metric", metric_json(c.guidance_metric)},
        {"evaluation_metric", c.evaluation_metric ? metric_json(*c.evaluation_metric) : json(nullptr)},
        {"thresholds", c.thresholds},
        {"reference", {{"count", c.reference_count}}},
        {"kde", {{"points", c.kde_points}, {"bandwidth", c.kde_bandwidth ? json(*c.kde_bandwidth) : json(nullptr)}}},
        {"output", {{"dir", c.output_dir}, {"binary_traces", c.binary_traces}}},
        {"variants", c.variants},
    };
    j["gate"] = c.gate_variant ? json{{"variant", *c.gate_variant},
                                      {"threshold", c.gate_threshold ? json(*c.gate_threshold) : json(nullptr)}}
                               : json(nullptr);
    return j;
}

/// 64-bit FNV-1a of the canonical (sorted-key) dump, as 16 hex digits. Output settings and thread
/// count do not change results and are left out.
inline std::string config_hash(const json& resolved) {
    json j = resolved;
    j.erase("output");
    if (j.contains("sampler")) j["sampler"].erase("threads");
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

inline json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open " + path);
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

/// Config for one variant: the base with variants stripped and the variant's merge patch applied.
inline ExperimentConfig variant_config(const ExperimentConfig& base, const json& variant) {
    json j = to_json(base);
    j["variants"] = json::array();
    if (!base.evaluation_metric) j.erase("evaluation_metric");
    if (variant.contains("overrides")) j.merge_patch(variant["overrides"]);
    ExperimentConfig c = parse_config(j);
    c.name = variant.value("name", base.name);
    return c;
}

}  // namespace amg
