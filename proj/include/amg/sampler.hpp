#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "amg/guidance.hpp"

namespace amg {

enum class SamplerKind { DDIM, DDPM };

inline const char* to_string(SamplerKind k) { return k == SamplerKind::DDIM ? "ddim" : "ddpm"; }

struct SamplerConfig {
    SamplerKind kind = SamplerKind::DDIM;
    int steps = 50;
    std::optional<int> condition;
    std::uint64_t seed = 0;
    int sigma_every = 1;  // similarity search cadence in steps
    GuidanceConfig guidance;
    SimilarityMetricConfig metric;             // drives activation and gradients
    SimilarityMetricConfig evaluation_metric;  // final verdict
    std::vector<int> evaluation_ids;           // watchlist restriction for the final verdict

    void validate(const TrainingCorpus& c, const NoiseSchedule& s) const {
        if (steps < 1 || steps > s.T()) throw InvalidArgument("sampler.steps: must be in [1, T]");
        if (sigma_every < 1) throw InvalidArgument("sampler.sigma_every: must be >= 1");
        if (condition && !c.has_token(*condition)) throw InvalidArgument("sampler.condition: token absent from corpus");
        guidance.validate();
        metric.validate(c);
        evaluation_metric.validate(c);
    }
};

struct StepRecord {
    int t = 0;
    double sigma = std::numeric_limits<double>::quiet_NaN();
    double lambda = 0;
    bool activated = false;
    double s1 = 0, s2 = 0;
    double gsim_norm = 0;
    int neighbor_id = -1;
};

struct SampleTrace {
    std::uint64_t seed = 0;
    std::vector<StepRecord> steps;
    Vec x0;
    SimilarityVerdict final_verdict;
    bool failed = false;
    std::string error;

    int first_activation() const {
        for (std::size_t i = 0; i < steps.size(); ++i)
            if (steps[i].activated) return int(i);
        return -1;
    }
};

/// Descending timestep indices, evenly spaced from T-1 to 0 and rounded.
inline std::vector<int> timesteps(int T, int steps) {
    std::vector<int> ts(steps);
    if (steps == 1) return {T - 1};
    for (int i = 0; i < steps; ++i) ts[i] = int(std::lround((T - 1) * (1.0 - double(i) / (steps - 1))));
    return ts;
}

inline std::mt19937_64 trajectory_rng(std::uint64_t seed) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), 0xA36u};
    return std::mt19937_64(seq);
}

inline Vec standard_normal(std::mt19937_64& rng, int d) {
    std::normal_distribution<double> nd;
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = nd(rng);
    return v;
}

/// One reverse trajectory from x_T ~ N(0, I). The last step writes the clean prediction.
inline SampleTrace run_trajectory(const SamplerConfig& cfg, const EmpiricalDenoiser& den) {
    const auto& corpus = den.corpus();
    const auto& sched = den.schedule();
    const int d = corpus.dim();
    SampleTrace tr;
    tr.seed = cfg.seed;
    auto rng = trajectory_rng(cfg.seed);
    Vec x = standard_normal(rng, d);
    const auto ts = timesteps(sched.T(), cfg.steps);
    tr.steps.reserve(ts.size());
    try {
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const int t = ts[i];
            const double ab = sched.alpha_bar(t);
            const double ab_prev = i + 1 < ts.size() ? sched.alpha_bar(ts[i + 1]) : 1.0;
            StepContext ctx;
            ctx.x_t = x;
            ctx.t = t;
            ctx.alpha_bar = ab;
            ctx.condition = cfg.condition;
            ctx.w_uncond = den.weights(x, t);
            ctx.eps_uncond = den.from_weights(x, t, ctx.w_uncond).eps_hat;
            Vec eps = ctx.eps_uncond;
            if (cfg.condition) {
                ctx.w_cond = den.weights(x, t, cfg.condition);
                ctx.eps_cond = den.from_weights(x, t, ctx.w_cond).eps_hat;
                eps = cfg_eps(ctx.eps_uncond, *ctx.eps_cond, cfg.guidance.s0);
            }
            StepRecord rec;
            rec.t = t;
            rec.lambda = cfg.guidance.threshold(t);
            Vec grad_xt = Vec::Zero(d);
            const bool ancestral = cfg.kind == SamplerKind::DDPM;
            if (i % std::size_t(cfg.sigma_every) == 0) {
                GuidanceOutcome g = amg_update(eps, ctx, den, cfg.metric, cfg.guidance, !ancestral);
                rec.sigma = g.sigma.sigma;
                rec.neighbor_id = g.sigma.neighbor_id;
                rec.activated = g.activated;
                rec.s1 = g.s1;
                rec.s2 = g.s2;
                eps = g.eps;
                if (ancestral && g.activated) {
                    grad_xt = cfg.guidance.c3 * g.grad_sigma_xt;
                    rec.gsim_norm = grad_xt.norm();
                } else {
                    rec.gsim_norm = g.gsim_norm;
                }
            }
            tr.steps.push_back(rec);
            if (!eps.allFinite()) throw NumericalError("non-finite epsilon at t=" + std::to_string(t));
            if (!ancestral) {
                x = ddim_step_to(x, ab, eps, ab_prev);
            } else {
                Posterior p = ddpm_posterior(x, ab, eps, ab_prev);
                Vec noise = standard_normal(rng, d);
                x = p.mean - p.var * grad_xt;
                if (ab_prev < 1.0 && i + 2 < ts.size()) x += std::sqrt(p.var) * noise;
            }
            if (!x.allFinite()) throw NumericalError("non-finite state at t=" + std::to_string(t));
        }
        tr.x0 = x;
        const std::vector<int>* ids = cfg.evaluation_ids.empty() ? nullptr : &cfg.evaluation_ids;
        tr.final_verdict = evaluate_similarity(x, corpus, cfg.evaluation_metric, ids);
    } catch (const std::exception& e) {
        tr.failed = true;
        tr.error = e.what();
        tr.x0 = x;
    }
    return tr;
}

/// Runs `count` trajectories with seeds base_seed, base_seed+1, ... Output order follows the
/// seed order for any thread count.
inline std::vector<SampleTrace> run_batch(const SamplerConfig& cfg, const EmpiricalDenoiser& den, int count,
                                          int threads = 0) {
    std::vector<SampleTrace> out(std::max(0, count));
    if (count <= 0) return out;
    if (threads <= 0) threads = int(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, count);
    std::atomic<int> next{0};
    auto work = [&] {
        for (int i; (i = next.fetch_add(1)) < count;) {
            SamplerConfig c = cfg;
            c.seed = cfg.seed + std::uint64_t(i);
            out[i] = run_trajectory(c, den);
        }
    };
    if (threads == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (int k = 0; k < threads; ++k) pool.emplace_back(work);
    }
    return out;
}

}  // namespace amg
