#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include "amg/corpus.hpp"
#include "amg/schedule.hpp"

namespace amg {

/// Closed-form posterior-mean denoiser over a finite corpus.
/// Bayes-optimal for the empirical distribution, so it reproduces training points as t -> 0.
class EmpiricalDenoiser {
public:
    EmpiricalDenoiser(const TrainingCorpus& corpus, const NoiseSchedule& schedule)
        : corpus_(&corpus), schedule_(&schedule) {
        corpus.validate();
        log_mult_.resize(corpus.size());
        for (int i = 0; i < corpus.size(); ++i) log_mult_[i] = std::log(corpus.multiplicity[i]);
    }

    const TrainingCorpus& corpus() const { return *corpus_; }
    const NoiseSchedule& schedule() const { return *schedule_; }

    /// Posterior weights over corpus rows; rows with another token get weight 0 when conditioned.
    Vec weights(const Vec& x_t, int t, std::optional<int> condition = std::nullopt) const {
        const auto& c = *corpus_;
        if (x_t.size() != c.dim()) throw InvalidArgument("denoiser: dimension mismatch");
        if (condition && !c.has_token(*condition))
            throw InvalidArgument("denoiser: no corpus point carries token " + std::to_string(*condition));
        const double ab = schedule_->alpha_bar(t);
        const double sab = std::sqrt(ab), inv2v = 1.0 / (2 * (1 - ab));
        Vec logw(c.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < c.size(); ++i) {
            if (condition && c.tokens[i] != *condition) {
                logw[i] = -std::numeric_limits<double>::infinity();
                continue;
            }
            logw[i] = log_mult_[i] - (x_t - sab * c.points.row(i).transpose()).squaredNorm() * inv2v;
            mx = std::max(mx, logw[i]);
        }
        if (!std::isfinite(mx)) throw NumericalError("denoiser: non-finite weights");
        Vec w(c.size());
        for (int i = 0; i < c.size(); ++i)
            w[i] = std::isinf(logw[i]) ? 0.0 : std::exp(std::max(logw[i] - mx, -700.0));
        w /= w.sum();
        return w;
    }

    DenoiserOutput eval(const Vec& x_t, int t, std::optional<int> condition = std::nullopt) const {
        return from_weights(x_t, t, weights(x_t, t, condition));
    }

    DenoiserOutput from_weights(const Vec& x_t, int t, const Vec& w) const {
        const double ab = schedule_->alpha_bar(t);
        DenoiserOutput out;
        out.x0_hat = corpus_->points.transpose() * w;
        out.eps_hat = (x_t - std::sqrt(ab) * out.x0_hat) / std::sqrt(1 - ab);
        if (!out.eps_hat.allFinite()) throw NumericalError("denoiser: non-finite prediction");
        return out;
    }

    /// d x0_hat / d x_t = sqrt(ab)/(1-ab) * weighted covariance of corpus rows.
    Mat jacobian(const Vec& x_t, int t, std::optional<int> condition = std::nullopt) const {
        return jacobian_from_weights(t, weights(x_t, t, condition));
    }

    Mat jacobian_from_weights(int t, const Vec& w) const {
        const double ab = schedule_->alpha_bar(t);
        const Mat& z = corpus_->points;
        Vec mean = z.transpose() * w;
        Mat centered = z.rowwise() - mean.transpose();
        Mat cov = centered.transpose() * w.asDiagonal() * centered;
        return (std::sqrt(ab) / (1 - ab)) * cov;
    }

private:
    const TrainingCorpus* corpus_;
    const NoiseSchedule* schedule_;
    Vec log_mult_;
};

}  // namespace amg
