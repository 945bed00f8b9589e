#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "amg/config.hpp"
#include "amg/metrics.hpp"
#include "amg/trace_io.hpp"

namespace amg {

namespace fs = std::filesystem;

/// Corpus, schedule and denoiser for one resolved config.
struct Workspace {
    TrainingCorpus corpus;
    NoiseSchedule schedule;
    std::unique_ptr<EmpiricalDenoiser> denoiser;

    explicit Workspace(const ExperimentConfig& c)
        : corpus(build_corpus(c.corpus)), schedule(NoiseSchedule::linear(c.schedule_T, c.beta_start, c.beta_end)) {
        if (!c.watchlist.empty()) corpus.watchlist = c.watchlist;
        corpus.validate();
        denoiser = std::make_unique<EmpiricalDenoiser>(corpus, schedule);
    }
};

inline SimilarityMetricConfig make_metric(const MetricSettings& m, const TrainingCorpus& c) {
    SimilarityMetricConfig out;
    out.kind = m.kind;
    out.k = m.k;
    out.alpha = m.alpha;
    out.include_nearest_in_set = m.include_nearest_in_set;
    out.memorization_threshold = m.resolved_threshold();
    if (m.kind == MetricKind::Embedding || m.coarse)
        out.embedding = make_whitened_embedding(c, std::min(m.embedding.dim, c.dim()), m.embedding.seed,
                                                m.embedding.normalize);
    if (m.coarse) {
        out.coarse_embedding =
            make_whitened_embedding(c, std::min(m.coarse->dim, c.dim()), m.coarse->seed, m.coarse->normalize);
        out.coarse_k = m.coarse_k;
    }
    return out;
}

inline SamplerConfig make_sampler_config(const ExperimentConfig& c, const TrainingCorpus& corpus) {
    SamplerConfig s;
    s.kind = c.sampler;
    s.steps = c.steps;
    s.seed = c.seed;
    s.sigma_every = c.sigma_every;
    s.guidance = c.guidance;
    s.metric = make_metric(c.guidance_metric, corpus);
    s.evaluation_metric = make_metric(c.evaluation_metric ? *c.evaluation_metric : c.guidance_metric, corpus);
    if (c.condition_mode == ConditionMode::Fixed) s.condition = c.condition;
    if (c.evaluate_watchlist_only) {
        if (corpus.watchlist.empty()) throw ConfigError("corpus.evaluate_watchlist_only: watchlist is empty");
        s.evaluation_ids = corpus.watchlist;
        std::sort(s.evaluation_ids.begin(), s.evaluation_ids.end());
    }
    try {
        s.validate(corpus, NoiseSchedule::linear(c.schedule_T, c.beta_start, c.beta_end));
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    return s;
}

/// Token requested for trajectory i under the config's condition mode.
inline std::optional<int> requested_token(const ExperimentConfig& c, const TrainingCorpus& corpus, int i) {
    if (c.condition_mode == ConditionMode::Fixed) return c.condition;
    if (c.condition_mode == ConditionMode::Cycle) {
        std::vector<int> toks(corpus.tokens);
        std::sort(toks.begin(), toks.end());
        toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
        return toks[std::size_t(i) % toks.size()];
    }
    return std::nullopt;
}

/// Held-out reference for the quality proxy: a fresh draw from the generating mixture, or the
/// corpus rows themselves when the corpus has no generator.
inline Mat reference_set_for(const ExperimentConfig& c, const Workspace& ws) {
    if (c.corpus.kind == CorpusSpec::Kind::GaussianMixture) return reference_set(c.corpus, c.reference_count);
    return ws.corpus.points;
}

struct VariantResult {
    std::string name;
    std::string config_hash;
    json resolved;
    std::vector<SampleTrace> traces;
    MemorizationReport memorization;
    UtilityReport utility;
    std::vector<KdeRow> kde;
    double kde_bandwidth = 0;
    int failed = 0;
    int activated = 0;
    double mean_first_activation = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<SampleTrace> run_samples(const ExperimentConfig& c, const Workspace& ws, int count = -1) {
    if (count < 0) count = c.trajectories;
    SamplerConfig base = make_sampler_config(c, ws.corpus);
    if (c.condition_mode != ConditionMode::Cycle) return run_batch(base, *ws.denoiser, count, c.threads);
    // one batch per requested token keeps each batch homogeneous; seeds stay base+i
    std::vector<SampleTrace> out(count);
    std::map<int, std::vector<int>> by_token;
    for (int i = 0; i < count; ++i) by_token[*requested_token(c, ws.corpus, i)].push_back(i);
    for (const auto& [tok, ids] : by_token) {
        SamplerConfig s = base;
        s.condition = tok;
        std::vector<SampleTrace> part(ids.size());
        std::atomic<std::size_t> next{0};
        auto work = [&] {
            for (std::size_t k; (k = next.fetch_add(1)) < ids.size();) {
                SamplerConfig one = s;
                one.seed = base.seed + std::uint64_t(ids[k]);
                part[k] = run_trajectory(one, *ws.denoiser);
            }
        };
        int threads = c.threads > 0 ? c.threads : int(std::max(1u, std::thread::hardware_concurrency()));
        {
            std::vector<std::jthread> pool;
            for (int t = 0; t < std::min<int>(threads, int(ids.size())); ++t) pool.emplace_back(work);
        }
        for (std::size_t k = 0; k < ids.size(); ++k) out[ids[k]] = std::move(part[k]);
    }
    return out;
}

inline VariantResult evaluate_variant(const ExperimentConfig& c, const Workspace& ws, std::vector<SampleTrace> traces) {
    VariantResult r;
    r.name = c.name;
    r.resolved = to_json(c);
    r.config_hash = config_hash(r.resolved);
    r.traces = std::move(traces);
    std::vector<SimilarityVerdict> verdicts;
    std::vector<Vec> samples;
    std::vector<std::optional<int>> requested;
    double first_sum = 0;
    for (std::size_t i = 0; i < r.traces.size(); ++i) {
        const auto& t = r.traces[i];
        if (t.failed) {
            ++r.failed;
            continue;
        }
        verdicts.push_back(t.final_verdict);
        samples.push_back(t.x0);
        requested.push_back(requested_token(c, ws.corpus, int(i)));
        int f = t.first_activation();
        if (f >= 0) {
            ++r.activated;
            first_sum += f;
        }
    }
    if (verdicts.empty()) throw NumericalError("every trajectory failed");
    if (r.activated > 0) r.mean_first_activation = first_sum / r.activated;
    r.memorization = memorization_report(verdicts, c.thresholds);
    Mat ref = reference_set_for(c, ws);
    std::vector<Vec> refs;
    for (Eigen::Index i = 0; i < ref.rows(); ++i) refs.push_back(ref.row(i).transpose());
    r.utility = utility_report(samples, refs, requested, ws.corpus);
    std::vector<double> scores;
    for (const auto& v : verdicts) scores.push_back(v.sigma);
    r.kde_bandwidth = c.kde_bandwidth ? *c.kde_bandwidth : silverman_bandwidth(scores);
    r.kde = kde_export(scores, r.kde_bandwidth, default_grid(scores, r.kde_bandwidth, c.kde_points));
    return r;
}

inline VariantResult run_variant(const ExperimentConfig& c) {
    Workspace ws(c);
    return evaluate_variant(c, ws, run_samples(c, ws));
}

/// Variants to run: the declared list, or the base config alone.
inline std::vector<ExperimentConfig> expand_variants(const ExperimentConfig& base) {
    std::vector<ExperimentConfig> out;
    if (base.variants.empty()) {
        out.push_back(base);
        return out;
    }
    for (const auto& v : base.variants) out.push_back(variant_config(base, v));
    return out;
}

/// Shortest round-trip spelling, so -1.4 stays "-1.4".
inline std::string threshold_key(double th) {
    char buf[64];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, th).ptr);
}

inline json report_json(const VariantResult& r) {
    json pct = json::object();
    for (const auto& [th, frac] : r.memorization.pct_over) {
        pct[threshold_key(th)] = frac;
    }
    json j = {{"variant", r.name},
              {"config_hash", r.config_hash},
              {"metric", to_string(r.memorization.kind)},
              {"n_samples", r.memorization.n_samples},
              {"failed", r.failed},
              {"top5pct", r.memorization.top5pct},
              {"top1", r.memorization.top1},
              {"top5pct_abs", r.memorization.top5pct_abs},
              {"top1_abs", r.memorization.top1_abs},
              {"pct_over", pct},
              {"mmd", r.utility.mmd},
              {"activated_trajectories", r.activated},
              {"kde_bandwidth", r.kde_bandwidth}};
    j["condition_fidelity"] = r.utility.condition_fidelity ? json(*r.utility.condition_fidelity) : json(nullptr);
    j["mean_first_activation_step"] = std::isnan(r.mean_first_activation) ? json(nullptr) : json(r.mean_first_activation);
    return j;
}

struct RunManifest {
    json doc;
    bool gate_tripped = false;
    bool partial = false;
};

namespace detail {
inline void write_atomic(const fs::path& p, const std::string& text) {
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw NumericalError("cannot write " + tmp.string());
        f << text;
        if (!f) throw NumericalError("write failed: " + tmp.string());
    }
    fs::rename(tmp, p);
}
}  // namespace detail

inline void write_kde_csv(std::ostream& os, const std::vector<KdeRow>& rows) {
    os << "x,density\n" << std::setprecision(17);
    for (const auto& r : rows) os << r.x << ',' << r.density << '\n';
}

/// Runs every variant, writes traces, samples, reports, KDE tables and the manifest.
inline RunManifest run_experiment(const ExperimentConfig& base, const std::string& config_path = "") {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = base.output_dir;
    fs::create_directories(dir);
    RunManifest m;
    const json resolved = to_json(base);
    m.doc = {{"schema_version", kConfigSchemaVersion},
             {"tool_version", kToolVersion},
             {"config_hash", config_hash(resolved)},
             {"config_path", config_path},
             {"config", resolved}};
    json variants = json::array();
    json files = json::array();
    std::map<std::string, std::shared_ptr<Workspace>> shared;  // variants with equal corpus/schedule share one
    for (const auto& vc : expand_variants(base)) {
        json key = to_json(vc);
        std::string wkey = key["corpus"].dump() + key["schedule"].dump();
        auto& ws = shared[wkey];
        if (!ws) ws = std::make_shared<Workspace>(vc);
        VariantResult r = evaluate_variant(vc, *ws, run_samples(vc, *ws));
        const fs::path vdir = dir / r.name;
        fs::create_directories(vdir);
        const std::string stem = r.config_hash.substr(0, 12) + "_seed" + std::to_string(vc.seed) + "-" +
                                 std::to_string(vc.seed + std::uint64_t(vc.trajectories) - 1);
        json vfiles = json::array();
        auto emit = [&](const fs::path& p, const std::string& text) {
            detail::write_atomic(p, text);
            vfiles.push_back(fs::relative(p, dir).string());
        };
        {
            std::ostringstream os;
            write_traces_csv(os, r.traces);
            emit(vdir / ("traces_" + stem + ".csv"), os.str());
        }
        if (vc.binary_traces) {
            std::ostringstream os(std::ios::binary);
            write_traces_binary(os, r.traces);
            emit(vdir / ("traces_" + stem + ".amgt"), os.str());
        }
        {
            std::ostringstream os;
            write_samples_csv(os, r.traces);
            emit(vdir / ("samples_" + stem + ".csv"), os.str());
        }
        {
            std::ostringstream os;
            write_kde_csv(os, r.kde);
            emit(vdir / "kde.csv", os.str());
        }
        emit(vdir / "report.json", report_json(r).dump(2) + "\n");
        if (r.failed > 0) m.partial = true;
        variants.push_back({{"name", r.name},
                            {"config_hash", r.config_hash},
                            {"seeds", {{"first", vc.seed}, {"count", vc.trajectories}}},
                            {"failed", r.failed},
                            {"report", (fs::path(r.name) / "report.json").string()},
                            {"files", vfiles}});
        for (auto& f : vfiles) files.push_back(f);
        if (base.gate_variant && *base.gate_variant == r.name) {
            double th = base.gate_threshold ? *base.gate_threshold : vc.guidance_metric.resolved_threshold();
            std::size_t over = 0;
            for (const auto& t : r.traces)
                if (!t.failed && t.final_verdict.sigma > th) ++over;
            m.gate_tripped = over > 0;
            m.doc["gate"] = {{"variant", r.name}, {"threshold", th}, {"memorized", over}, {"tripped", m.gate_tripped}};
        }
    }
    {
        Workspace ws(base);
        std::ostringstream os;
        write_corpus_table(os, ws.corpus);
        detail::write_atomic(dir / "corpus.csv", os.str());
        files.push_back("corpus.csv");
    }
    m.doc["variants"] = variants;
    m.doc["files"] = files;
    m.doc["partial"] = m.partial;
    m.doc["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::write_atomic(dir / "manifest.json", m.doc.dump(2) + "\n");
    return m;
}

struct CompareRow {
    std::string source;
    json report;
};

/// Side-by-side table of report fields; all rows must share one metric kind.
inline std::vector<CompareRow> load_compare_rows(const std::vector<std::string>& manifests) {
    std::vector<CompareRow> rows;
    for (const auto& path : manifests) {
        json m = read_json_file(path);
        if (!m.contains("variants")) throw ConfigError(path + ": not a run manifest");
        for (const auto& v : m["variants"]) {
            fs::path rp = fs::path(path).parent_path() / v["report"].get<std::string>();
            rows.push_back({path + ":" + v["name"].get<std::string>(), read_json_file(rp.string())});
        }
    }
    if (rows.empty()) throw ConfigError("compare: no reports found");
    for (const auto& r : rows)
        if (r.report["metric"] != rows.front().report["metric"])
            throw ConfigError("compare: incompatible metric kinds (" + r.report["metric"].get<std::string>() + " vs " +
                              rows.front().report["metric"].get<std::string>() + ")");
    return rows;
}

inline std::vector<std::string> compare_threshold_keys(const std::vector<CompareRow>& rows) {
    std::vector<std::string> keys;
    for (const auto& r : rows)
        for (auto it = r.report["pct_over"].begin(); it != r.report["pct_over"].end(); ++it)
            if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) keys.push_back(it.key());
    return keys;
}

inline void write_compare_csv(std::ostream& os, const std::vector<CompareRow>& rows) {
    auto keys = compare_threshold_keys(rows);
    os << "run,metric,n_samples,top5pct,top1";
    for (const auto& k : keys) os << ",pct_over_" << k;
    os << ",mmd,condition_fidelity\n" << std::setprecision(17);
    for (const auto& r : rows) {
        const json& j = r.report;
        os << r.source << ',' << j["metric"].get<std::string>() << ',' << j["n_samples"].get<int>() << ','
           << j["top5pct"].get<double>() << ',' << j["top1"].get<double>();
        for (const auto& k : keys) {
            os << ',';
            if (j["pct_over"].contains(k)) os << j["pct_over"][k].get<double>();
        }
        os << ',' << j["mmd"].get<double>() << ',';
        if (!j["condition_fidelity"].is_null()) os << j["condition_fidelity"].get<double>();
        os << '\n';
    }
}

inline void write_compare_text(std::ostream& os, const std::vector<CompareRow>& rows) {
    auto keys = compare_threshold_keys(rows);
    std::size_t w = 4;
    for (const auto& r : rows) w = std::max(w, r.source.size());
    os << std::left << std::setw(int(w)) << "run" << "  " << std::right << std::setw(9) << "Top5%" << std::setw(9)
       << "Top1";
    for (const auto& k : keys) os << std::setw(12) << ("%>" + k);
    os << std::setw(12) << "MMD" << std::setw(10) << "fidelity" << '\n';
    os << std::fixed;
    for (const auto& r : rows) {
        const json& j = r.report;
        const bool abs = j["metric"] == "nl2";
        os << std::left << std::setw(int(w)) << r.source << "  " << std::right << std::setprecision(3) << std::setw(9)
           << j[abs ? "top5pct_abs" : "top5pct"].get<double>() << std::setw(9)
           << j[abs ? "top1_abs" : "top1"].get<double>();
        for (const auto& k : keys) {
            if (j["pct_over"].contains(k))
                os << std::setw(11) << std::setprecision(2) << 100.0 * j["pct_over"][k].get<double>() << '%';
            else
                os << std::setw(12) << "-";
        }
        os << std::setw(12) << std::setprecision(6) << j["mmd"].get<double>();
        if (j["condition_fidelity"].is_null()) os << std::setw(10) << "-";
        else os << std::setw(10) << std::setprecision(3) << j["condition_fidelity"].get<double>();
        os << '\n';
    }
    os.unsetf(std::ios::floatfield);
}

}  // namespace amg
