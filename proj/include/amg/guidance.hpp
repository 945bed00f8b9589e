#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "amg/denoiser.hpp"
#include "amg/similarity.hpp"

namespace amg {

/// Activation threshold lambda(t) = a + (b - a) exp(-c t), c stored as a positive rate.
struct ParabolicSchedule {
    double a = -1.95;
    double b = -1.5;
    double c = 0.025;

    void validate() const {
        if (!(c > 0)) throw InvalidArgument("guidance.schedule.c: must be > 0");
        if (!(b > a)) throw InvalidArgument("guidance.schedule: need b > a");
    }
};

inline double lambda_at(double t, const ParabolicSchedule& s) { return s.a + (s.b - s.a) * std::exp(-s.c * t); }

enum class Activation { Parabolic, Constant, Always, Never };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::Parabolic: return "parabolic";
        case Activation::Constant: return "constant";
        case Activation::Always: return "always";
        case Activation::Never: return "never";
    }
    return "?";
}

struct GuidanceTerms {
    bool spe = true;
    bool dup = true;
    bool sim = true;
    bool any() const { return spe || dup || sim; }
};

struct GuidanceConfig {
    double s0 = 7.0;
    double c1 = 4.0;
    double c2 = 4.0;
    double c3 = 10.0;
    ParabolicSchedule schedule;
    Activation activation = Activation::Parabolic;
    double constant_level = -1.5;
    GuidanceTerms terms;
    GradientMode gradient_mode = GradientMode::FrozenEps;

    void validate() const {
        if (!(s0 >= 1)) throw InvalidArgument("guidance.s0: must be >= 1");
        if (c1 < 0 || c2 < 0 || c3 < 0) throw InvalidArgument("guidance.c1/c2/c3: must be >= 0");
        schedule.validate();
    }

    double threshold(int t) const {
        switch (activation) {
            case Activation::Parabolic: return lambda_at(t, schedule);
            case Activation::Constant: return constant_level;
            case Activation::Always: return -std::numeric_limits<double>::infinity();
            case Activation::Never: return std::numeric_limits<double>::infinity();
        }
        return 0;
    }
};

inline Vec cfg_eps(const Vec& eps_uncond, const Vec& eps_cond, double s0) {
    detail::same_dim(eps_uncond, eps_cond, "cfg_eps");
    return eps_uncond + s0 * (eps_cond - eps_uncond);
}

inline double scale_s1(double sigma, double c1, double s0) { return std::max(std::min(c1 * sigma, s0 - 1), 0.0); }

inline double scale_s2(double sigma, double c2, double s0, double s1) {
    return std::max(std::min(c2 * sigma, s0 - s1 - 1), 0.0);
}

inline Vec g_spe(const Vec& eps_uncond, const Vec& eps_cond_user, double s1) {
    return -s1 * (eps_cond_user - eps_uncond);
}

inline Vec g_dup(const Vec& eps_uncond, const Vec& eps_cond_neighbor, double s2) {
    return -s2 * (eps_cond_neighbor - eps_uncond);
}

inline Vec g_sim(const Vec& grad_sigma, double alpha_bar, double c3) { return c3 * std::sqrt(1 - alpha_bar) * grad_sigma; }

/// Everything amg_update needs about the current step.
struct StepContext {
    Vec x_t;
    int t = 0;
    double alpha_bar = 0;
    Vec eps_uncond;
    std::optional<Vec> eps_cond;  // present when a user condition is active
    std::optional<int> condition;
    Vec w_uncond, w_cond;         // posterior weights, for the full-mode Jacobian
};

struct GuidanceOutcome {
    Vec eps;              // corrected prediction (input unchanged when inactive)
    Vec delta_eps;        // G_spe + G_dup + G_sim actually added
    Vec grad_sigma_xt;    // zero unless G_sim ran
    double s1 = 0, s2 = 0;
    bool activated = false;
    bool degenerate = false;
    SimilarityVerdict sigma;
    double lambda = 0;
    double gsim_norm = 0;
};

/// One guided correction. `eps_hat` is the post-CFG prediction. With `sigma_only` the
/// dissimilarity term is returned in grad_sigma_xt but not folded into eps (ancestral sampler).
inline GuidanceOutcome amg_update(const Vec& eps_hat, const StepContext& ctx, const EmpiricalDenoiser& den,
                                  const SimilarityMetricConfig& metric, const GuidanceConfig& cfg,
                                  bool sim_into_eps = true) {
    GuidanceOutcome out;
    out.eps = eps_hat;
    out.delta_eps = Vec::Zero(eps_hat.size());
    out.grad_sigma_xt = Vec::Zero(eps_hat.size());
    out.lambda = cfg.threshold(ctx.t);
    const Vec x0 = predict_x0_ab(ctx.x_t, ctx.alpha_bar, eps_hat);
    const bool need_grad = cfg.terms.sim && cfg.c3 > 0;
    SigmaGradient g;
    if (need_grad) {
        g = sigma_gradient_x0(x0, den.corpus(), metric);
        out.sigma = g.verdict;
    } else {
        out.sigma = evaluate_similarity(x0, den.corpus(), metric);
    }
    out.activated = cfg.terms.any() && out.sigma.sigma > out.lambda;
    if (!out.activated) return out;

    const double s = out.sigma.sigma;
    if (ctx.eps_cond) {
        out.s1 = cfg.terms.spe ? scale_s1(s, cfg.c1, cfg.s0) : 0.0;
        out.s2 = cfg.terms.dup ? scale_s2(s, cfg.c2, cfg.s0, out.s1) : 0.0;
        if (out.s1 > 0) out.delta_eps += g_spe(ctx.eps_uncond, *ctx.eps_cond, out.s1);
        if (out.s2 > 0) {
            const int tok = den.corpus().tokens[out.sigma.neighbor_id];
            Vec eps_nb = den.eval(ctx.x_t, ctx.t, tok).eps_hat;
            out.delta_eps += g_dup(ctx.eps_uncond, eps_nb, out.s2);
        }
    }
    if (need_grad && !g.degenerate) {
        Mat jac;
        if (cfg.gradient_mode == GradientMode::Full) {
            jac = den.jacobian_from_weights(ctx.t, ctx.w_uncond);
            if (ctx.eps_cond) jac += cfg.s0 * (den.jacobian_from_weights(ctx.t, ctx.w_cond) - jac);
        }
        out.grad_sigma_xt = chain_to_xt(g.grad, ctx.alpha_bar, cfg.gradient_mode, &jac);
        if (sim_into_eps) {
            Vec term = g_sim(out.grad_sigma_xt, ctx.alpha_bar, cfg.c3);
            out.gsim_norm = term.norm();
            out.delta_eps += term;
        }
    }
    out.degenerate = g.degenerate;
    out.eps = eps_hat + out.delta_eps;
    return out;
}

}  // namespace amg
