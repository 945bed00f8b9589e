#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "oracles.hpp"

using namespace amg;

TEST(Schedule, LinearDefaultsAndAnchors) {
    auto s = NoiseSchedule::linear(250);
    EXPECT_EQ(s.T(), 250);
    EXPECT_DOUBLE_EQ(s.beta(0), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta(249), 0.02);
    EXPECT_GT(s.alpha_bar(0), 0.9);
    EXPECT_NEAR(s.alpha_bar(249), oracle::alpha_bar(249), 1e-12);
    EXPECT_LT(s.alpha_bar(249), 0.1);
}

TEST(Schedule, AlphaBarIsCumulativeProductAndDecreasing) {
    for (int T : {1, 10, 250, 1000}) {
        auto s = NoiseSchedule::linear(T);
        for (int t = 0; t < T; ++t) {
            EXPECT_GT(s.beta(t), 0);
            EXPECT_LT(s.beta(t), 1);
            double expect = oracle::alpha_bar(t, T);
            if (T == 1) expect = 1 - 1e-4;
            EXPECT_NEAR(s.alpha_bar(t) / expect, 1.0, 1e-12);
            if (t > 0) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
        }
    }
}

TEST(Schedule, RejectsBadInput) {
    EXPECT_THROW(NoiseSchedule::linear(0), InvalidArgument);
    EXPECT_THROW(NoiseSchedule(std::vector<double>{0.5, 1.0}), InvalidArgument);
    auto s = NoiseSchedule::linear(10);
    EXPECT_THROW(s.alpha_bar(10), InvalidArgument);
    EXPECT_THROW(s.alpha_bar(-1), InvalidArgument);
}

TEST(Schedule, AlphaBarFloor) {
    auto s = NoiseSchedule(std::vector<double>(2000, 0.5));
    EXPECT_DOUBLE_EQ(s.alpha_bar(1999), kAlphaBarFloor);
}

TEST(ForwardSample, TrivialCases) {
    // alpha_bar = 0.25: one step with beta = 0.75
    NoiseSchedule s(std::vector<double>{0.75});
    Vec x0(2), zero = Vec::Zero(2);
    x0 << 1, 0;
    Vec xt = forward_sample(x0, 0, zero, s);
    EXPECT_DOUBLE_EQ(xt[0], 0.5);
    EXPECT_DOUBLE_EQ(xt[1], 0.0);
    EXPECT_THROW(forward_sample(x0, 0, Vec::Zero(3), s), InvalidArgument);
    EXPECT_THROW(forward_sample(x0, 1, zero, s), InvalidArgument);
}

TEST(ForwardSample, ZeroNoiseLimit) {
    NoiseSchedule s(std::vector<double>{1e-300});
    Vec x0 = Vec::LinSpaced(3, 1, 3);
    Vec xt = forward_sample(x0, 0, Vec::Constant(3, 5.0), s);
    EXPECT_NEAR((xt - x0).norm(), 0.0, 1e-140);
}

TEST(ForwardSample, MonteCarloMoments) {
    auto s = NoiseSchedule::linear(250);
    const int t = 120, n = 100000, d = 3;
    Vec x0(d);
    x0 << 1.5, -0.5, 2.0;
    std::mt19937_64 rng(11);
    Vec sum = Vec::Zero(d), sq = Vec::Zero(d);
    for (int i = 0; i < n; ++i) {
        Vec x = forward_sample(x0, t, oracle::randn(d, rng), s);
        sum += x;
        sq += x.cwiseProduct(x);
    }
    const double ab = oracle::alpha_bar(t);
    for (int j = 0; j < d; ++j) {
        double mean = sum[j] / n, var = sq[j] / n - mean * mean;
        double se_mean = std::sqrt((1 - ab) / n);
        double se_var = (1 - ab) * std::sqrt(2.0 / n);
        EXPECT_NEAR(mean, std::sqrt(ab) * x0[j], 3 * se_mean);
        EXPECT_NEAR(var, 1 - ab, 3 * se_var);
    }
}

TEST(PredictX0, InversionIdentity) {
    std::mt19937_64 rng(3);
    for (int T : {10, 250, 1000}) {
        auto s = NoiseSchedule::linear(T);
        for (int rep = 0; rep < 200; ++rep) {
            int d = 1 + int(rng() % 64);
            int t = int(rng() % T);
            Vec x0 = oracle::randn(d, rng), eps = oracle::randn(d, rng);
            Vec xt = forward_sample(x0, t, eps, s);
            EXPECT_LE((predict_x0(xt, t, eps, s) - x0).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
}

TEST(PredictX0, ZeroNoiseInversionAndFormula) {
    NoiseSchedule q(std::vector<double>{0.75});
    Vec xt(2);
    xt << 0.5, 0;
    Vec x0 = predict_x0(xt, 0, Vec::Zero(2), q);
    EXPECT_DOUBLE_EQ(x0[0], 1.0);
    EXPECT_DOUBLE_EQ(x0[1], 0.0);

    auto s = NoiseSchedule::linear(250);
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 100; ++rep) {
        int t = int(rng() % 250);
        Vec x = oracle::randn(8, rng), e = oracle::randn(8, rng);
        double ab = oracle::alpha_bar(t);
        Vec got = predict_x0(x, t, e, s);
        for (int j = 0; j < 8; ++j) EXPECT_NEAR(got[j], (x[j] - std::sqrt(1 - ab) * e[j]) / std::sqrt(ab), 1e-12);
    }
}

TEST(DdimStep, NoiselessTargetAndErrors) {
    auto s = NoiseSchedule::linear(250);
    std::mt19937_64 rng(7);
    Vec x = oracle::randn(4, rng), e = oracle::randn(4, rng);
    EXPECT_LE((ddim_step_to(x, s.alpha_bar(100), e, 1.0) - predict_x0(x, 100, e, s)).norm(), 1e-14);
    EXPECT_THROW(ddim_step(x, 0, e, s), InvalidArgument);
}

TEST(DdimStep, ExactEpsilonTrajectoryLandsOnX0) {
    auto s = NoiseSchedule::linear(250);
    std::mt19937_64 rng(9);
    Vec x0 = oracle::randn(6, rng), eps = oracle::randn(6, rng);
    for (int start : {249, 120, 3}) {
        Vec x = forward_sample(x0, start, eps, s);
        for (int t = start; t >= 1; --t) {
            // exact noise for the current state given the known x0
            Vec e = (x - std::sqrt(s.alpha_bar(t)) * x0) / std::sqrt(1 - s.alpha_bar(t));
            x = ddim_step(x, t, e, s);
        }
        Vec e0 = (x - std::sqrt(s.alpha_bar(0)) * x0) / std::sqrt(1 - s.alpha_bar(0));
        EXPECT_LE((predict_x0(x, 0, e0, s) - x0).norm(), 1e-8);
        EXPECT_LE((x - forward_sample(x0, 0, eps, s)).norm(), 1e-8);
    }
}

TEST(DdimStep, FixedPointOfPrediction) {
    auto s = NoiseSchedule::linear(250);
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        int t = 1 + int(rng() % 249);
        Vec x = oracle::randn(5, rng), e = oracle::randn(5, rng);
        Vec prev = ddim_step(x, t, e, s);
        EXPECT_LE((predict_x0(prev, t - 1, e, s) - predict_x0(x, t, e, s)).norm(), 1e-9);
    }
}

TEST(DdimStep, Deterministic) {
    auto s = NoiseSchedule::linear(250);
    std::mt19937_64 rng(1);
    Vec x = oracle::randn(16, rng), e = oracle::randn(16, rng);
    Vec a = ddim_step(x, 77, e, s), b = ddim_step(x, 77, e, s);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * 16), 0);
}

TEST(DdpmStep, PosteriorMeanOracle) {
    auto s = NoiseSchedule::linear(250);
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        int t = 2 + int(rng() % 248);
        Vec x = oracle::randn(4, rng), e = oracle::randn(4, rng), zero = Vec::Zero(4);
        double ab = oracle::alpha_bar(t), abp = oracle::alpha_bar(t - 1);
        double beta = 1e-4 + (0.02 - 1e-4) * t / 249.0;
        Vec x0 = (x - std::sqrt(1 - ab) * e) / std::sqrt(ab);
        Vec mu = (std::sqrt(abp) * beta / (1 - ab)) * x0 + (std::sqrt(1 - beta) * (1 - abp) / (1 - ab)) * x;
        Vec got = ddpm_step(x, t, e, zero, zero, s);
        EXPECT_LE((got - mu).norm(), 1e-9 * (1 + mu.norm()));
    }
    Vec z = Vec::Zero(2);
    EXPECT_THROW(ddpm_step(z, 0, z, z, z, s), InvalidArgument);
}

TEST(DdpmStep, MonteCarloMeanAndVarianceWithShift) {
    auto s = NoiseSchedule::linear(250);
    const int t = 60, n = 100000, d = 2;
    Vec x(d), e(d), shift(d);
    x << 0.3, -1.2;
    e << 0.5, 0.1;
    shift << 2.0, -1.0;
    const double ab = oracle::alpha_bar(t), abp = oracle::alpha_bar(t - 1);
    const double beta = 1e-4 + (0.02 - 1e-4) * t / 249.0;
    const double var = (1 - abp) / (1 - ab) * beta;
    Vec mu = ddpm_step(x, t, e, Vec::Zero(d), Vec::Zero(d), s) - var * shift;
    std::mt19937_64 rng(23);
    Vec sum = Vec::Zero(d), sq = Vec::Zero(d);
    for (int i = 0; i < n; ++i) {
        Vec y = ddpm_step(x, t, e, shift, oracle::randn(d, rng), s);
        sum += y;
        sq += y.cwiseProduct(y);
    }
    for (int j = 0; j < d; ++j) {
        double m = sum[j] / n, v = sq[j] / n - m * m;
        EXPECT_NEAR(m, mu[j], 3 * std::sqrt(var / n));
        EXPECT_NEAR(v, var, 3 * var * std::sqrt(2.0 / n));
    }
}

TEST(DdpmStep, NoNoiseAtFirstStep) {
    auto s = NoiseSchedule::linear(250);
    Vec x = Vec::Constant(3, 0.2), e = Vec::Constant(3, -0.1), z = Vec::Zero(3);
    EXPECT_EQ(ddpm_step(x, 1, e, z, Vec::Constant(3, 9.0), s), ddpm_step(x, 1, e, z, z, s));
}

TEST(Score, RoundTripAndFormula) {
    auto s = NoiseSchedule::linear(250);
    std::mt19937_64 rng(29);
    EXPECT_EQ(score_from_eps(Vec::Zero(3), 10, s), Vec::Zero(3));
    for (int rep = 0; rep < 100; ++rep) {
        int t = int(rng() % 250);
        Vec e = oracle::randn(7, rng);
        Vec sc = score_from_eps(e, t, s);
        EXPECT_LE((eps_from_score(sc, t, s) - e).cwiseAbs().maxCoeff(), 1e-12);
        for (int j = 0; j < 7; ++j) EXPECT_NEAR(sc[j], -e[j] / std::sqrt(1 - oracle::alpha_bar(t)), 1e-12);
    }
}
