#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "amg/similarity.hpp"

namespace amg {

struct MemorizationReport {
    double top5pct = 0;  // nearest-rank 95th percentile
    double top1 = 0;
    std::map<double, double> pct_over;  // threshold -> fraction strictly above
    int n_samples = 0;
    MetricKind kind = MetricKind::NL2;
    // nL2 tables are usually printed as positive distances; for that kind these hold |sigma|
    // of the same two statistics.
    double top5pct_abs = 0;
    double top1_abs = 0;
};

inline double nearest_rank(std::vector<double> sorted_ascending, double q) {
    const std::size_t n = sorted_ascending.size();
    std::size_t rank = std::size_t(std::ceil(q * double(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return sorted_ascending[rank - 1];
}

inline MemorizationReport memorization_report(const std::vector<double>& scores, MetricKind kind,
                                              const std::vector<double>& thresholds) {
    if (scores.empty()) throw InvalidArgument("memorization_report: no scores");
    std::vector<double> s = scores;
    std::sort(s.begin(), s.end());
    MemorizationReport r;
    r.kind = kind;
    r.n_samples = int(s.size());
    r.top5pct = nearest_rank(s, 0.95);
    r.top1 = s.back();
    for (double th : thresholds) {
        auto above = s.end() - std::upper_bound(s.begin(), s.end(), th);
        r.pct_over[th] = double(above) / double(s.size());
    }
    r.top5pct_abs = std::abs(r.top5pct);
    r.top1_abs = std::abs(r.top1);
    return r;
}

inline MemorizationReport memorization_report(const std::vector<SimilarityVerdict>& verdicts,
                                              const std::vector<double>& thresholds) {
    if (verdicts.empty()) throw InvalidArgument("memorization_report: no verdicts");
    std::vector<double> s;
    for (const auto& v : verdicts) {
        if (v.kind != verdicts.front().kind) throw InvalidArgument("memorization_report: mixed metric kinds");
        s.push_back(v.sigma);
    }
    return memorization_report(s, verdicts.front().kind, thresholds);
}

struct GridSpec {
    double lo = 0, hi = 1;
    int points = 512;
};

struct KdeRow {
    double x, density;
};

inline double silverman_bandwidth(const std::vector<double>& v) {
    const double n = double(v.size());
    if (v.size() < 2) return 1e-3;
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    double sd = std::sqrt(var / (n - 1));
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    double iqr = nearest_rank(s, 0.75) - nearest_rank(s, 0.25);
    double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
    double h = 0.9 * spread * std::pow(n, -0.2);
    return h > 0 ? h : 1e-3;
}

/// Grid covering the data range padded by five bandwidths on each side.
inline GridSpec default_grid(const std::vector<double>& scores, double bandwidth, int points = 512) {
    auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
    return {*mn - 5 * bandwidth, *mx + 5 * bandwidth, points};
}

inline std::vector<KdeRow> kde_export(const std::vector<double>& scores, double bandwidth, const GridSpec& grid) {
    if (scores.empty()) throw InvalidArgument("kde_export: no scores");
    if (!(bandwidth > 0) || !std::isfinite(bandwidth)) throw InvalidArgument("kde_export: bandwidth must be > 0");
    if (grid.points < 2 || !(grid.hi > grid.lo)) throw InvalidArgument("kde_export: bad grid");
    std::vector<KdeRow> out(grid.points);
    const double norm = 1.0 / (double(scores.size()) * bandwidth * std::sqrt(2 * M_PI));
    const double step = (grid.hi - grid.lo) / (grid.points - 1);
    for (int i = 0; i < grid.points; ++i) {
        double x = grid.lo + step * i, acc = 0;
        for (double s : scores) {
            double u = (x - s) / bandwidth;
            acc += std::exp(-0.5 * u * u);
        }
        out[i] = {x, acc * norm};
    }
    return out;
}

namespace detail {
inline Mat stack(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    Mat m(Eigen::Index(a.size() + b.size()), a.empty() ? 0 : a.front().size());
    for (std::size_t i = 0; i < a.size(); ++i) m.row(Eigen::Index(i)) = a[i].transpose();
    for (std::size_t i = 0; i < b.size(); ++i) m.row(Eigen::Index(a.size() + i)) = b[i].transpose();
    return m;
}

inline Mat sq_dists(const Mat& p) {
    Vec n = p.rowwise().squaredNorm();
    Mat d = (-2.0 * p * p.transpose()).colwise() + n;
    d.rowwise() += n.transpose();
    return d.cwiseMax(0.0);
}

/// Biased MMD^2 from a pooled kernel matrix split by a membership mask.
inline double mmd_from_kernel(const Mat& k, const std::vector<int>& idx, std::size_t na) {
    const std::size_t n = idx.size(), nb = n - na;
    double xx = 0, yy = 0, xy = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double v = k(idx[i], idx[j]);
            if (i < na && j < na) xx += v;
            else if (i >= na && j >= na) yy += v;
            else xy += v;
        }
    return xx / double(na * na) + yy / double(nb * nb) - xy / double(na * nb);
}
}  // namespace detail

/// Median of the pooled pairwise squared distances (off-diagonal).
inline double median_heuristic(const Mat& pooled_sq_dists) {
    std::vector<double> v;
    const Eigen::Index n = pooled_sq_dists.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) v.push_back(pooled_sq_dists(i, j));
    if (v.empty()) return 1.0;
    auto mid = v.begin() + std::ptrdiff_t(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid > 0 ? *mid : 1.0;
}

/// Squared MMD, biased (V-statistic) estimator, Gaussian kernel exp(-|x-y|^2 / median).
inline double mmd(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    if (a.empty() || b.empty()) throw InvalidArgument("mmd: empty sample set");
    Mat d2 = detail::sq_dists(detail::stack(a, b));
    Mat k = (-d2 / median_heuristic(d2)).array().exp().matrix();
    std::vector<int> idx(a.size() + b.size());
    std::iota(idx.begin(), idx.end(), 0);
    return std::max(0.0, detail::mmd_from_kernel(k, idx, a.size()));
}

struct PermutationTest {
    double statistic = 0;
    double quantile95 = 0;
    double p_value = 1;
};

/// Null distribution by relabelling the pooled set, kernel bandwidth fixed from the pool.
inline PermutationTest mmd_permutation_test(const std::vector<Vec>& a, const std::vector<Vec>& b, int permutations,
                                            std::uint64_t seed) {
    if (a.empty() || b.empty()) throw InvalidArgument("mmd: empty sample set");
    Mat d2 = detail::sq_dists(detail::stack(a, b));
    Mat k = (-d2 / median_heuristic(d2)).array().exp().matrix();
    std::vector<int> idx(a.size() + b.size());
    std::iota(idx.begin(), idx.end(), 0);
    PermutationTest r;
    r.statistic = detail::mmd_from_kernel(k, idx, a.size());
    std::mt19937_64 rng(seed);
    std::vector<double> null(permutations);
    int ge = 0;
    for (int p = 0; p < permutations; ++p) {
        std::shuffle(idx.begin(), idx.end(), rng);
        null[p] = detail::mmd_from_kernel(k, idx, a.size());
        if (null[p] >= r.statistic) ++ge;
    }
    std::sort(null.begin(), null.end());
    r.quantile95 = permutations > 0 ? nearest_rank(null, 0.95) : 0;
    r.p_value = (1.0 + ge) / (1.0 + permutations);
    return r;
}

struct UtilityReport {
    double mmd = 0;
    std::optional<double> condition_fidelity;  // absent for unconditional batches
};

/// `requested` holds the requested token per sample, or nullopt for unconditional samples.
inline UtilityReport utility_report(const std::vector<Vec>& samples, const std::vector<Vec>& reference,
                                    const std::vector<std::optional<int>>& requested, const TrainingCorpus& corpus) {
    if (samples.empty() || reference.empty()) throw InvalidArgument("utility_report: empty inputs");
    UtilityReport r;
    r.mmd = mmd(samples, reference);
    int asked = 0, hit = 0;
    for (std::size_t i = 0; i < samples.size() && i < requested.size(); ++i) {
        if (!requested[i]) continue;
        ++asked;
        Eigen::Index best;
        (corpus.points.rowwise() - samples[i].transpose()).rowwise().squaredNorm().minCoeff(&best);
        if (corpus.tokens[best] == *requested[i]) ++hit;
    }
    if (asked > 0) r.condition_fidelity = double(hit) / asked;
    return r;
}

}  // namespace amg
