#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "amg/corpus.hpp"
#include "amg/denoiser.hpp"

namespace amg {

enum class MetricKind { NL2, Embedding };

inline const char* to_string(MetricKind k) { return k == MetricKind::NL2 ? "nl2" : "embedding"; }

/// Linear feature map: E(x) = P^T (x - center), optionally unit-normalised.
struct Embedding {
    Mat projection;  // d x m
    Vec center;      // d
    bool normalize = true;

    Vec raw(const Vec& x) const { return projection.transpose() * (x - center); }
    Vec operator()(const Vec& x) const {
        Vec v = raw(x);
        if (normalize) {
            double n = v.norm();
            if (n > 0) v /= n;
        }
        return v;
    }
};

/// Random orthonormal directions whitened by the corpus covariance of distinct rows.
inline Embedding make_whitened_embedding(const TrainingCorpus& c, int m, std::uint64_t seed, bool normalize = true) {
    const int d = c.dim();
    if (m < 1 || m > d) throw InvalidArgument("embedding: need 1 <= m <= d");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Mat g(d, m);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < m; ++j) g(i, j) = nd(rng);
    Mat q = Eigen::HouseholderQR<Mat>(g).householderQ() * Mat::Identity(d, m);
    Embedding e;
    e.center = c.points.colwise().mean().transpose();
    Mat centered = c.points.rowwise() - e.center.transpose();
    Mat cov = centered.transpose() * centered / std::max(1, c.size() - 1);
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    double floor = std::max(1e-12, 1e-9 * es.eigenvalues().maxCoeff());
    Vec inv_sqrt = es.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
    Mat whiten = es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
    e.projection = whiten * q;
    e.normalize = normalize;
    return e;
}

struct SimilarityMetricConfig {
    MetricKind kind = MetricKind::NL2;
    int k = 50;
    double alpha = 0.5;
    bool include_nearest_in_set = true;
    double memorization_threshold = -1.4;
    std::optional<Embedding> embedding;         // fine embedding
    std::optional<Embedding> coarse_embedding;  // shortlist stage
    int coarse_k = 0;                           // 0 disables two-stage search

    void validate(const TrainingCorpus& c) const {
        if (kind == MetricKind::NL2) {
            int need = include_nearest_in_set ? k : k + 1;
            if (k < 2) throw InvalidArgument("metric.k: must be >= 2");
            if (need > c.size()) throw InvalidArgument("metric.k: corpus smaller than k");
            if (!(alpha > 0)) throw InvalidArgument("metric.alpha: must be > 0");
        } else if (!embedding) {
            throw InvalidArgument("metric: embedding kind requires an embedding");
        }
        if (coarse_k != 0 && (!coarse_embedding || coarse_k < 1 || coarse_k > c.size()))
            throw InvalidArgument("metric.coarse_k: requires a coarse embedding and 1 <= coarse_k <= N");
    }
};

struct SimilarityVerdict {
    double sigma = 0;
    int neighbor_id = -1;
    MetricKind kind = MetricKind::NL2;
    bool memorized = false;
    bool tie = false;  // runner-up at exactly the same score; lowest id kept
};

namespace detail {

struct Ranked {
    double key;
    int id;
};

inline bool ranked_less(const Ranked& a, const Ranked& b) { return a.key < b.key || (a.key == b.key && a.id < b.id); }

inline Vec distances(const Vec& x, const TrainingCorpus& c) {
    if (x.size() != c.dim()) throw InvalidArgument("similarity: dimension mismatch");
    return (c.points.rowwise() - x.transpose()).rowwise().norm();
}

/// Sorted (distance, id) for the `count` closest rows of the full corpus.
inline std::vector<Ranked> nearest(const Vec& dist, int count) {
    std::vector<Ranked> r(dist.size());
    for (int i = 0; i < int(dist.size()); ++i) r[i] = {dist[i], i};
    count = std::min<int>(count, int(r.size()));
    std::partial_sort(r.begin(), r.begin() + count, r.end(), ranked_less);
    r.resize(count);
    return r;
}

struct NL2Parts {
    int n0 = -1;
    double d1 = 0;
    double mean = 0;
    std::vector<int> set;  // ids in the normalisation set
    bool tie = false;
};

inline NL2Parts nl2_parts(const Vec& x, const TrainingCorpus& c, const SimilarityMetricConfig& cfg,
                          const std::vector<int>* candidates) {
    Vec dist = distances(x, c);
    NL2Parts p;
    // nearest neighbour among candidates (all rows when none given)
    double best = std::numeric_limits<double>::infinity(), second = best;
    auto consider = [&](int i) {
        if (dist[i] < best || (dist[i] == best && i < p.n0)) {
            second = best;
            best = dist[i];
            p.n0 = i;
        } else if (dist[i] < second) {
            second = dist[i];
        }
    };
    if (candidates)
        for (int i : *candidates) consider(i);
    else
        for (int i = 0; i < c.size(); ++i) consider(i);
    p.tie = (second == best);
    p.d1 = best;
    // normalisation set: k nearest distinct ids of the full corpus
    auto near = nearest(dist, cfg.k + 1);
    double sum = 0;
    for (const auto& r : near) {
        if (int(p.set.size()) == cfg.k) break;
        if (!cfg.include_nearest_in_set && r.id == p.n0) continue;
        p.set.push_back(r.id);
        sum += r.key;
    }
    p.mean = sum / double(p.set.size());
    return p;
}

inline std::vector<int> coarse_shortlist(const Vec& x, const TrainingCorpus& c, const Embedding& e, int count) {
    Vec q = e(x);
    std::vector<Ranked> r(c.size());
    for (int i = 0; i < c.size(); ++i) r[i] = {-q.dot(e(c.points.row(i).transpose())), i};
    std::partial_sort(r.begin(), r.begin() + count, r.end(), ranked_less);
    std::vector<int> ids(count);
    for (int i = 0; i < count; ++i) ids[i] = r[i].id;
    return ids;
}

}  // namespace detail

inline SimilarityVerdict nl2_sigma(const Vec& x0_hat, const TrainingCorpus& c, const SimilarityMetricConfig& cfg,
                                   const std::vector<int>* candidates = nullptr) {
    cfg.validate(c);
    auto p = detail::nl2_parts(x0_hat, c, cfg, candidates);
    SimilarityVerdict v;
    v.kind = MetricKind::NL2;
    v.neighbor_id = p.n0;
    v.tie = p.tie;
    v.sigma = p.mean > 0 ? -p.d1 / (cfg.alpha * p.mean) : 0.0;
    v.memorized = v.sigma > cfg.memorization_threshold;
    return v;
}

inline SimilarityVerdict embedding_sigma(const Vec& x0_hat, const TrainingCorpus& c, const SimilarityMetricConfig& cfg,
                                         const std::vector<int>* candidates = nullptr) {
    if (!cfg.embedding) throw InvalidArgument("embedding_sigma: no embedding configured");
    if (x0_hat.size() != c.dim()) throw InvalidArgument("similarity: dimension mismatch");
    const Embedding& e = *cfg.embedding;
    Vec q = e(x0_hat);
    SimilarityVerdict v;
    v.kind = MetricKind::Embedding;
    double best = -std::numeric_limits<double>::infinity(), second = best;
    auto consider = [&](int i) {
        double s = q.dot(e(c.points.row(i).transpose()));
        if (s > best || (s == best && i < v.neighbor_id)) {
            second = best;
            best = s;
            v.neighbor_id = i;
        } else if (s > second) {
            second = s;
        }
    };
    if (candidates)
        for (int i : *candidates) consider(i);
    else
        for (int i = 0; i < c.size(); ++i) consider(i);
    v.sigma = best;
    v.tie = (second == best);
    v.memorized = v.sigma > cfg.memorization_threshold;
    return v;
}

/// Exact search over all rows or over `candidates` (watchlist).
inline SimilarityVerdict exact_sigma(const Vec& x0_hat, const TrainingCorpus& c, const SimilarityMetricConfig& cfg,
                                     const std::vector<int>* candidates = nullptr) {
    return cfg.kind == MetricKind::NL2 ? nl2_sigma(x0_hat, c, cfg, candidates)
                                       : embedding_sigma(x0_hat, c, cfg, candidates);
}

/// Coarse embedding shortlists coarse_k rows, the fine metric picks n0 among them.
inline SimilarityVerdict two_stage_nn(const Vec& x0_hat, const TrainingCorpus& c, int coarse_k,
                                      const SimilarityMetricConfig& cfg) {
    if (!cfg.coarse_embedding) throw InvalidArgument("two_stage_nn: no coarse embedding configured");
    if (coarse_k < 1 || coarse_k > c.size()) throw InvalidArgument("two_stage_nn: coarse_k out of range");
    auto ids = detail::coarse_shortlist(x0_hat, c, *cfg.coarse_embedding, coarse_k);
    std::sort(ids.begin(), ids.end());
    return exact_sigma(x0_hat, c, cfg, &ids);
}

/// Verdict using whatever search the config asks for.
inline SimilarityVerdict evaluate_similarity(const Vec& x0_hat, const TrainingCorpus& c,
                                             const SimilarityMetricConfig& cfg,
                                             const std::vector<int>* candidates = nullptr) {
    if (cfg.coarse_k > 0 && !candidates) return two_stage_nn(x0_hat, c, cfg.coarse_k, cfg);
    return exact_sigma(x0_hat, c, cfg, candidates);
}

struct SigmaGradient {
    Vec grad;
    SimilarityVerdict verdict;
    bool degenerate = false;  // cusp or tie: gradient reported as zero
};

/// Gradient of sigma with respect to x0_hat, with n0 and the normalisation set frozen.
inline SigmaGradient sigma_gradient_x0(const Vec& x0_hat, const TrainingCorpus& c, const SimilarityMetricConfig& cfg,
                                       const std::vector<int>* candidates = nullptr) {
    SigmaGradient out;
    out.grad = Vec::Zero(x0_hat.size());
    if (cfg.kind == MetricKind::NL2) {
        cfg.validate(c);
        std::vector<int> shortlist;
        if (cfg.coarse_k > 0 && !candidates) {
            shortlist = detail::coarse_shortlist(x0_hat, c, *cfg.coarse_embedding, cfg.coarse_k);
            std::sort(shortlist.begin(), shortlist.end());
            candidates = &shortlist;
        }
        auto p = detail::nl2_parts(x0_hat, c, cfg, candidates);
        out.verdict.kind = MetricKind::NL2;
        out.verdict.neighbor_id = p.n0;
        out.verdict.tie = p.tie;
        out.verdict.sigma = p.mean > 0 ? -p.d1 / (cfg.alpha * p.mean) : 0.0;
        out.verdict.memorized = out.verdict.sigma > cfg.memorization_threshold;
        if (p.d1 == 0 || p.tie || !(p.mean > 0)) {
            out.degenerate = true;
            return out;
        }
        auto unit = [&](int id) -> Vec {
            Vec u = x0_hat - c.points.row(id).transpose();
            double n = u.norm();
            return n > 0 ? Vec(u / n) : Vec(Vec::Zero(u.size()));
        };
        Vec avg = Vec::Zero(x0_hat.size());
        for (int id : p.set) avg += unit(id);
        avg /= double(p.set.size());
        const double am = cfg.alpha * p.mean;
        out.grad = -unit(p.n0) / am + (p.d1 / (am * p.mean)) * avg;
        return out;
    }
    const SimilarityVerdict v = cfg.coarse_k > 0 && !candidates ? two_stage_nn(x0_hat, c, cfg.coarse_k, cfg)
                                                               : embedding_sigma(x0_hat, c, cfg, candidates);
    out.verdict = v;
    if (v.tie) {
        out.degenerate = true;
        return out;
    }
    const Embedding& e = *cfg.embedding;
    Vec target = e(c.points.row(v.neighbor_id).transpose());
    if (!e.normalize) {
        out.grad = e.projection * target;
        return out;
    }
    Vec raw = e.raw(x0_hat);
    double r = raw.norm();
    if (r == 0) {
        out.degenerate = true;
        return out;
    }
    Vec unit = raw / r;
    out.grad = e.projection * ((target - unit.dot(target) * unit) / r);
    return out;
}

enum class GradientMode { FrozenEps, Full };

inline const char* to_string(GradientMode m) { return m == GradientMode::FrozenEps ? "frozen-eps" : "full"; }

/// Chain rule through x0_hat = predict_x0(x_t, t, eps_hat). `jac` is d x0_hat / d x_t for full mode.
inline Vec chain_to_xt(const Vec& grad_x0, double alpha_bar, GradientMode mode, const Mat* jac) {
    if (mode == GradientMode::FrozenEps) return grad_x0 / std::sqrt(alpha_bar);
    if (!jac) throw InvalidArgument("full gradient mode needs the denoiser Jacobian");
    return jac->transpose() * grad_x0;
}

/// Gradient of sigma(predict_x0(x_t, t, eps_hat(x_t))) with respect to x_t, for a plain
/// (optionally conditioned) denoiser call.
inline SigmaGradient sigma_gradient(const Vec& x_t, int t, const EmpiricalDenoiser& den,
                                    const SimilarityMetricConfig& cfg, GradientMode mode,
                                    std::optional<int> condition = std::nullopt) {
    Vec w = den.weights(x_t, t, condition);
    DenoiserOutput o = den.from_weights(x_t, t, w);
    Vec x0 = predict_x0(x_t, t, o.eps_hat, den.schedule());
    SigmaGradient g = sigma_gradient_x0(x0, den.corpus(), cfg);
    if (g.degenerate) return g;
    Mat jac;
    if (mode == GradientMode::Full) jac = den.jacobian_from_weights(t, w);
    g.grad = chain_to_xt(g.grad, den.schedule().alpha_bar(t), mode, &jac);
    return g;
}

}  // namespace amg
