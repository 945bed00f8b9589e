#pragma once
// Independent reference implementations used only by the tests. Plain loops, no shared code
// with the library beyond the data types.

#include <cmath>
#include <random>
#include <vector>

#include "amg/amg.hpp"

namespace oracle {

inline double alpha_bar(int t, int T = 250, double b0 = 1e-4, double b1 = 0.02) {
    double p = 1;
    for (int s = 0; s <= t; ++s) p *= 1 - (b0 + (b1 - b0) * s / double(T - 1));
    return p;
}

inline std::vector<double> softmax_weights(const amg::Vec& x, double ab, const amg::TrainingCorpus& c, int cond = -1) {
    std::vector<double> logw(c.size());
    for (int i = 0; i < c.size(); ++i) {
        double d2 = 0;
        for (int j = 0; j < c.dim(); ++j) {
            double r = x[j] - std::sqrt(ab) * c.points(i, j);
            d2 += r * r;
        }
        logw[i] = std::log(c.multiplicity[i]) - d2 / (2 * (1 - ab));
    }
    double mx = -1e300;
    for (int i = 0; i < c.size(); ++i)
        if (cond < 0 || c.tokens[i] == cond) mx = std::max(mx, logw[i]);
    std::vector<double> w(c.size(), 0.0);
    double sum = 0;
    for (int i = 0; i < c.size(); ++i)
        if (cond < 0 || c.tokens[i] == cond) sum += (w[i] = std::exp(logw[i] - mx));
    for (double& v : w) v /= sum;
    return w;
}

inline amg::Vec x0_hat(const amg::Vec& x, double ab, const amg::TrainingCorpus& c, int cond = -1) {
    auto w = softmax_weights(x, ab, c, cond);
    amg::Vec out = amg::Vec::Zero(c.dim());
    for (int i = 0; i < c.size(); ++i)
        for (int j = 0; j < c.dim(); ++j) out[j] += w[i] * c.points(i, j);
    return out;
}

/// nL2 by full sort of all distances.
inline double nl2(const amg::Vec& x, const amg::TrainingCorpus& c, int k, double alpha, int* n0 = nullptr) {
    std::vector<std::pair<double, int>> d;
    for (int i = 0; i < c.size(); ++i) {
        double s = 0;
        for (int j = 0; j < c.dim(); ++j) s += (x[j] - c.points(i, j)) * (x[j] - c.points(i, j));
        d.push_back({std::sqrt(s), i});
    }
    std::sort(d.begin(), d.end());
    double mean = 0;
    for (int i = 0; i < k; ++i) mean += d[i].first;
    mean /= k;
    if (n0) *n0 = d[0].second;
    return -d[0].first / (alpha * mean);
}

inline amg::TrainingCorpus random_corpus(int n, int d, std::uint64_t seed, double scale = 1.0, int tokens = 3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> mult(1, 4);
    amg::TrainingCorpus c;
    c.points.resize(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) c.points(i, j) = scale * nd(rng);
    for (int i = 0; i < n; ++i) {
        c.tokens.push_back(i % tokens);
        c.multiplicity.push_back(mult(rng));
    }
    return c;
}

inline amg::Vec randn(int d, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd;
    amg::Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = scale * nd(rng);
    return v;
}

/// Central finite-difference gradient.
template <class F>
amg::Vec fd_gradient(F&& f, const amg::Vec& x, double h) {
    amg::Vec g(x.size());
    for (int i = 0; i < x.size(); ++i) {
        amg::Vec a = x, b = x;
        a[i] += h;
        b[i] -= h;
        g[i] = (f(a) - f(b)) / (2 * h);
    }
    return g;
}

inline double rel_err(const amg::Vec& a, const amg::Vec& b) {
    return (a - b).norm() / std::max(1e-300, std::max(a.norm(), b.norm()));
}

}  // namespace oracle
