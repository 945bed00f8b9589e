// Command-line front end: corpus | sample | report | compare | trace.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amg/amg.hpp"

namespace {

enum Exit : int { kOk = 0, kConfigError = 2, kRuntimeError = 3, kMemorized = 4 };

int verbosity = 0;

void log(int level, const std::string& msg) {
    if (verbosity >= level) std::cerr << msg << '\n';
}

amg::ExperimentConfig load(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out_dir) {
    auto cfg = amg::load_config(path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    return cfg;
}

amg::ExperimentConfig pick_variant(const amg::ExperimentConfig& base, const std::string& name) {
    if (name.empty()) return amg::expand_variants(base).front();
    for (const auto& v : base.variants)
        if (v["name"] == name) return amg::variant_config(base, v);
    throw amg::ConfigError("no variant named " + name);
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
    if (path.empty() || path == "-") return std::cout;
    file.open(path);
    if (!file) throw std::runtime_error("cannot write " + path);
    return file;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anti-memorization guided sampling on a closed-form toy denoiser"};
    app.require_subcommand(1);
    app.set_version_flag("--version", amg::kToolVersion);
    app.add_flag("-v,--verbose", verbosity, "Increase log verbosity");
    std::string config_path, out_dir, variant, out_file, inspect_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> manifests;

    auto* corpus = app.add_subcommand("corpus", "Generate the configured corpus table or inspect an existing one");
    corpus->add_option("-c,--config", config_path, "Experiment config (JSON)");
    corpus->add_option("--inspect", inspect_path, "Corpus table to summarise instead of generating");
    corpus->add_option("-o,--out", out_file, "Output table path (default stdout)");

    auto* sample = app.add_subcommand("sample", "Run the experiment and write traces, reports and manifest");
    sample->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
    sample->add_option("-s,--seed", seed, "Override sampler.seed");
    sample->add_option("-o,--out-dir", out_dir, "Override output.dir");

    auto* report = app.add_subcommand("report", "Recompute memorization metrics from a run's sample tables");
    report->add_option("manifest", manifests, "Run manifest")->required()->expected(1);
    report->add_option("-o,--out", out_file, "Write JSON here (default stdout)");

    auto* compare = app.add_subcommand("compare", "Side-by-side table of several runs");
    compare->add_option("manifests", manifests, "Run manifests")->required();
    compare->add_option("-o,--out", out_file, "Write CSV here; text table goes to stdout");

    auto* trace = app.add_subcommand("trace", "Per-step sigma/lambda series of one trajectory");
    trace->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
    trace->add_option("-s,--seed", seed, "Trajectory seed (default sampler.seed)");
    trace->add_option("--variant", variant, "Variant name (default first)");
    trace->add_option("-o,--out", out_file, "Output CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        if (*corpus) {
            if (!inspect_path.empty()) {
                auto c = amg::read_corpus_table(inspect_path);
                std::cout << "rows " << c.size() << "\ndim " << c.dim() << "\nexpanded " << c.expanded_size()
                          << "\nwatchlist " << c.watchlist.size() << '\n';
                std::map<int, int> per_token;
                for (int t : c.tokens) ++per_token[t];
                for (auto [t, n] : per_token) std::cout << "token " << t << " rows " << n << '\n';
                return kOk;
            }
            if (config_path.empty()) throw amg::ConfigError("corpus: --config or --inspect required");
            auto cfg = load(config_path, std::nullopt, "");
            amg::Workspace ws(cfg);
            std::ofstream f;
            amg::write_corpus_table(open_out(out_file, f), ws.corpus);
            log(1, "wrote " + std::to_string(ws.corpus.size()) + " rows");
            return kOk;
        }
        if (*sample) {
            auto cfg = load(config_path, seed, out_dir);
            auto m = amg::run_experiment(cfg, config_path);
            std::cout << "manifest " << (std::filesystem::path(cfg.output_dir) / "manifest.json").string() << '\n';
            for (const auto& v : m.doc["variants"]) {
                auto r = amg::read_json_file((std::filesystem::path(cfg.output_dir) / v["report"].get<std::string>()).string());
                std::cout << v["name"].get<std::string>() << ": top1 " << r["top1"] << " top5pct " << r["top5pct"]
                          << " pct_over " << r["pct_over"].dump() << " mmd " << r["mmd"] << '\n';
            }
            if (m.partial) {
                std::cerr << "some trajectories failed; see manifest\n";
                return kRuntimeError;
            }
            if (m.gate_tripped) {
                std::cerr << "memorization detected above threshold in gated variant\n";
                return kMemorized;
            }
            return kOk;
        }
        if (*report) {
            const auto& mpath = manifests.front();
            auto m = amg::read_json_file(mpath);
            if (!m.contains("config")) throw amg::ConfigError(mpath + ": not a run manifest");
            auto base = amg::parse_config(m["config"]);
            auto dir = std::filesystem::path(mpath).parent_path();
            amg::json out = amg::json::array();
            for (const auto& v : m["variants"]) {
                std::string samples;
                for (const auto& f : v["files"])
                    if (f.get<std::string>().find("samples_") != std::string::npos) samples = f;
                std::ifstream in(dir / samples);
                if (!in) throw amg::ConfigError("missing samples table for " + v["name"].get<std::string>());
                auto rows = amg::read_samples_csv(in);
                std::vector<double> scores;
                for (const auto& r : rows)
                    if (!r.failed) scores.push_back(r.sigma);
                auto vc = base.variants.empty() ? base : pick_variant(base, v["name"].get<std::string>());
                auto kind = (vc.evaluation_metric ? *vc.evaluation_metric : vc.guidance_metric).kind;
                auto rep = amg::memorization_report(scores, kind, vc.thresholds);
                amg::json pct = amg::json::object();
                for (auto [th, fr] : rep.pct_over) pct[amg::threshold_key(th)] = fr;
                out.push_back({{"variant", v["name"]},
                               {"metric", amg::to_string(kind)},
                               {"n_samples", rep.n_samples},
                               {"top5pct", rep.top5pct},
                               {"top1", rep.top1},
                               {"top5pct_abs", rep.top5pct_abs},
                               {"top1_abs", rep.top1_abs},
                               {"pct_over", pct}});
            }
            std::ofstream f;
            open_out(out_file, f) << out.dump(2) << '\n';
            return kOk;
        }
        if (*compare) {
            auto rows = amg::load_compare_rows(manifests);
            amg::write_compare_text(std::cout, rows);
            if (!out_file.empty()) {
                std::ofstream f;
                amg::write_compare_csv(open_out(out_file, f), rows);
            }
            return kOk;
        }
        if (*trace) {
            auto base = load(config_path, std::nullopt, "");
            auto cfg = pick_variant(base, variant);
            amg::Workspace ws(cfg);
            auto sc = amg::make_sampler_config(cfg, ws.corpus);
            sc.seed = seed ? *seed : cfg.seed;
            if (cfg.condition_mode == amg::ConditionMode::Cycle)
                sc.condition = amg::requested_token(cfg, ws.corpus, int(sc.seed - cfg.seed));
            auto guided = amg::run_trajectory(sc, *ws.denoiser);
            auto twin_cfg = sc;
            twin_cfg.guidance.terms = {false, false, false};
            auto twin = amg::run_trajectory(twin_cfg, *ws.denoiser);
            std::ofstream f;
            std::ostream& os = open_out(out_file, f);
            os << std::setprecision(17) << "step,t,sigma,lambda,activated,s1,s2,gsim_norm,neighbor_id,sigma_unguided\n";
            for (std::size_t i = 0; i < guided.steps.size(); ++i) {
                const auto& r = guided.steps[i];
                os << i << ',' << r.t << ',' << r.sigma << ',' << r.lambda << ',' << (r.activated ? 1 : 0) << ',' << r.s1
                   << ',' << r.s2 << ',' << r.gsim_norm << ',' << r.neighbor_id << ','
                   << (i < twin.steps.size() ? twin.steps[i].sigma : std::nan("")) << '\n';
            }
            // last row, t = -1: the clean output against the threshold in force at t = 0
            if (!guided.failed)
                os << guided.steps.size() << ",-1," << guided.final_verdict.sigma << ',' << sc.guidance.threshold(0)
                   << ",0,0,0,0," << guided.final_verdict.neighbor_id << ','
                   << (twin.failed ? std::nan("") : twin.final_verdict.sigma) << '\n';
            if (guided.failed) {
                std::cerr << "trajectory failed: " << guided.error << '\n';
                return kRuntimeError;
            }
            log(1, "final sigma " + std::to_string(guided.final_verdict.sigma));
            return kOk;
        }
    } catch (const amg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const amg::InvalidArgument& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kOk;
}
