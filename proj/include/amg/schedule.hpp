#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace amg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised for invalid arguments (bad dimensions, out-of-range steps, bad config values).
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces non-finite values or hits a degenerate case.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kAlphaBarFloor = 1e-8;

/// Discrete variance schedule. Immutable once built.
template <class Scalar = double>
class NoiseScheduleT {
public:
    NoiseScheduleT(std::vector<Scalar> beta) : beta_(std::move(beta)) {
        if (beta_.empty()) throw InvalidArgument("schedule: T must be positive");
        alpha_.resize(beta_.size());
        alpha_bar_.resize(beta_.size());
        Scalar prod = 1;
        for (std::size_t t = 0; t < beta_.size(); ++t) {
            if (!(beta_[t] > 0 && beta_[t] < 1))
                throw InvalidArgument("schedule: beta[" + std::to_string(t) + "] outside (0,1)");
            alpha_[t] = 1 - beta_[t];
            prod *= alpha_[t];
            alpha_bar_[t] = std::max<Scalar>(prod, kAlphaBarFloor);
        }
    }

    static NoiseScheduleT linear(int T, Scalar beta_start = 1e-4, Scalar beta_end = 0.02) {
        if (T < 1) throw InvalidArgument("schedule: T must be positive");
        std::vector<Scalar> b(T);
        for (int t = 0; t < T; ++t)
            b[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * Scalar(t) / Scalar(T - 1);
        return NoiseScheduleT(std::move(b));
    }

    int T() const { return int(beta_.size()); }
    Scalar beta(int t) const { return beta_.at(check(t)); }
    Scalar alpha(int t) const { return alpha_.at(check(t)); }
    Scalar alpha_bar(int t) const { return alpha_bar_.at(check(t)); }
    const std::vector<Scalar>& alpha_bars() const { return alpha_bar_; }

    int check(int t) const {
        if (t < 0 || t >= T()) throw InvalidArgument("timestep " + std::to_string(t) + " out of range");
        return t;
    }

private:
    std::vector<Scalar> beta_, alpha_, alpha_bar_;
};

using NoiseSchedule = NoiseScheduleT<double>;

struct DenoiserOutput {
    Vec eps_hat;
    Vec x0_hat;
};

namespace detail {
inline void same_dim(const Vec& a, const Vec& b, const char* what) {
    if (a.size() != b.size()) throw InvalidArgument(std::string(what) + ": dimension mismatch");
}
}  // namespace detail

inline Vec forward_sample(const Vec& x0, int t, const Vec& noise, const NoiseSchedule& s) {
    detail::same_dim(x0, noise, "forward_sample");
    const double ab = s.alpha_bar(t);
    return std::sqrt(ab) * x0 + std::sqrt(1 - ab) * noise;
}

inline Vec predict_x0_ab(const Vec& x_t, double ab, const Vec& eps_hat) {
    detail::same_dim(x_t, eps_hat, "predict_x0");
    if (!(ab > 0)) throw NumericalError("predict_x0: alpha_bar is zero");
    return (x_t - std::sqrt(1 - ab) * eps_hat) / std::sqrt(ab);
}

inline Vec predict_x0(const Vec& x_t, int t, const Vec& eps_hat, const NoiseSchedule& s) {
    return predict_x0_ab(x_t, s.alpha_bar(t), eps_hat);
}

/// Deterministic step from alpha_bar `ab` to an arbitrary earlier level `ab_prev`.
/// ab_prev = 1 returns the clean prediction.
inline Vec ddim_step_to(const Vec& x_t, double ab, const Vec& eps_hat, double ab_prev) {
    Vec x0 = predict_x0_ab(x_t, ab, eps_hat);
    return std::sqrt(ab_prev) * x0 + std::sqrt(std::max(0.0, 1 - ab_prev)) * eps_hat;
}

inline Vec ddim_step(const Vec& x_t, int t, const Vec& eps_hat, const NoiseSchedule& s) {
    if (t < 1) throw InvalidArgument("ddim_step: t must be >= 1");
    return ddim_step_to(x_t, s.alpha_bar(t), eps_hat, s.alpha_bar(t - 1));
}

/// Posterior q(x_prev | x_t, x0_hat) between two levels of the schedule.
struct Posterior {
    Vec mean;
    double var = 0;
};

inline Posterior ddpm_posterior(const Vec& x_t, double ab, const Vec& eps_hat, double ab_prev) {
    Vec x0 = predict_x0_ab(x_t, ab, eps_hat);
    const double a = ab / ab_prev;  // effective single-step alpha
    const double b = 1 - a;
    Posterior p;
    p.mean = (std::sqrt(ab_prev) * b / (1 - ab)) * x0 + (std::sqrt(a) * (1 - ab_prev) / (1 - ab)) * x_t;
    p.var = (1 - ab_prev) / (1 - ab) * b;
    return p;
}

/// Ancestral step with the mean moved by -var * shift. Noise is dropped when stepping to t-1 = 0.
inline Vec ddpm_step(const Vec& x_t, int t, const Vec& eps_hat, const Vec& shift, const Vec& noise,
                     const NoiseSchedule& s) {
    if (t < 1) throw InvalidArgument("ddpm_step: t must be >= 1");
    detail::same_dim(x_t, shift, "ddpm_step");
    detail::same_dim(x_t, noise, "ddpm_step");
    Posterior p = ddpm_posterior(x_t, s.alpha_bar(t), eps_hat, s.alpha_bar(t - 1));
    Vec out = p.mean - p.var * shift;
    if (t > 1) out += std::sqrt(p.var) * noise;
    return out;
}

inline Vec score_from_eps(const Vec& eps_hat, int t, const NoiseSchedule& s) {
    return -eps_hat / std::sqrt(1 - s.alpha_bar(t));
}

inline Vec eps_from_score(const Vec& score, int t, const NoiseSchedule& s) {
    return -score * std::sqrt(1 - s.alpha_bar(t));
}

}  // namespace amg
