#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "divac/inference/mcmc.hpp"

using namespace divac;
using namespace divac::inference;

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Inverse standard normal CDF by bisection on erfc.
double probit(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(Mcmc, StandardNormalMoments) {
  McmcOptions opt;
  opt.n_walkers = 32;
  opt.n_steps = 6250;
  opt.seed = 11;
  opt.init_scale = {1.0};
  const std::vector<double> init{0.3};
  const auto post = mcmc_sample([](std::span<const double> x) { return -0.5 * x[0] * x[0]; },
                                {Prior::normal(0.0, 1e6)}, init, opt);
  ASSERT_EQ(post.draws(), 100000u);
  const auto c = post.column(0);
  const double se = 1.0 / std::sqrt(post.ess[0]);
  EXPECT_LT(std::abs(mean(c)), 3.0 * se);
  EXPECT_NEAR(variance(c), 1.0, 0.1);
  EXPECT_LT(post.rhat[0], 1.05);
  EXPECT_GT(post.ess[0], 400.0);
  EXPECT_GT(post.acceptance, 0.2);
}

TEST(Mcmc, BoundaryTruthGivesOneSidedInterval) {
  // Data consistent with zero on a non-negative parameter.
  const std::vector<double> obs{0.01, -0.02, 0.005, -0.01};
  auto ll = [&](std::span<const double> x) {
    double s = 0.0;
    for (double o : obs) s += -0.5 * (o - x[0]) * (o - x[0]) / (0.05 * 0.05);
    return s;
  };
  McmcOptions opt;
  opt.n_walkers = 16;
  opt.n_steps = 2000;
  opt.init_scale = {0.01};
  const std::vector<double> init{0.02};
  const auto post = mcmc_sample(ll, {Prior::half_normal(0.2)}, init, opt);
  const auto e = post.estimate(0);
  EXPECT_EQ(e.lower, 0.0);
  EXPECT_GT(e.upper, e.value);
  EXPECT_GT(e.value, 0.0);
  // A well-separated posterior keeps an equal-tailed interval.
  auto ll2 = [](std::span<const double> x) { return -0.5 * (x[0] - 1.0) * (x[0] - 1.0) / 0.01; };
  const std::vector<double> init2{1.0};
  const auto post2 = mcmc_sample(ll2, {Prior::half_normal(5.0)}, init2, opt);
  EXPECT_GT(post2.estimate(0).lower, 0.7);
}

TEST(Mcmc, IndependentSeedsAgree) {
  // Correlated 3-d Gaussian, offset from zero so relative comparisons are meaningful.
  auto ll = [](std::span<const double> x) {
    const double a = x[0] - 10.0, b = x[1] - 5.0, c = x[2] + 8.0;
    return -0.5 * (a * a + (b - 0.8 * a) * (b - 0.8 * a) / 0.36 + c * c / 4.0);
  };
  McmcOptions opt;
  opt.n_walkers = 24;
  opt.n_steps = 4000;
  opt.init_scale = {0.5, 0.5, 0.5};
  const std::vector<double> init{9.0, 4.0, -7.0};
  const std::vector<Prior> priors(3, Prior::uniform(-100.0, 100.0));
  opt.seed = 1;
  const auto p1 = mcmc_sample(ll, priors, init, opt);
  opt.seed = 2;
  const auto p2 = mcmc_sample(ll, priors, init, opt);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto a = credible_interval(p1.column(i));
    const auto b = credible_interval(p2.column(i));
    EXPECT_NEAR(a.first, b.first, 0.05 * std::abs(b.first)) << i;
    EXPECT_NEAR(a.second, b.second, 0.05 * std::abs(b.second)) << i;
  }
}

TEST(Mcmc, BitReproducible) {
  auto ll = [](std::span<const double> x) { return -0.5 * (x[0] * x[0] + 4.0 * x[1] * x[1]); };
  McmcOptions opt;
  opt.n_walkers = 8;
  opt.n_steps = 300;
  opt.seed = 77;
  const std::vector<double> init{0.1, 0.1};
  const std::vector<Prior> priors(2, Prior::normal(0.0, 10.0));
  const auto a = mcmc_sample(ll, priors, init, opt);
  const auto b = mcmc_sample(ll, priors, init, opt);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.logp, b.logp);
  opt.seed = 78;
  const auto c = mcmc_sample(ll, priors, init, opt);
  EXPECT_NE(a.samples, c.samples);
}

TEST(Mcmc, Preconditions) {
  auto ll = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
  const std::vector<double> init{0.0, 0.0};
  const std::vector<Prior> priors(2, Prior::normal(0.0, 1.0));
  McmcOptions opt;
  opt.n_walkers = 2;
  EXPECT_THROW(mcmc_sample(ll, priors, init, opt), InvalidArgument);
  opt.n_walkers = 8;
  const std::vector<double> outside{-1.0, 0.0};
  const std::vector<Prior> bounded(2, Prior::uniform(0.0, 1.0));
  EXPECT_THROW(mcmc_sample(ll, bounded, outside, opt), InvalidArgument);
}

TEST(Mcmc, StuckWalkersReported) {
  int calls = 0;
  auto ll = [&](std::span<const double>) {
    return ++calls <= 9 ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  McmcOptions opt;
  opt.n_walkers = 8;
  opt.n_steps = 50;
  const std::vector<double> init{0.5};
  EXPECT_THROW(mcmc_sample(ll, {Prior::uniform(0.0, 1.0)}, init, opt), ConvergenceError);
}

TEST(CredibleInterval, UniformQuantiles) {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(100000);
  for (auto& x : s) x = u(g);
  const auto [lo, hi] = credible_interval(s);
  EXPECT_NEAR(lo, 0.025, 0.01);
  EXPECT_NEAR(hi, 0.975, 0.01);
}

TEST(CredibleInterval, PointMass) {
  const std::vector<double> s(2000, 3.25);
  const auto [lo, hi] = credible_interval(s);
  EXPECT_EQ(lo, 3.25);
  EXPECT_EQ(hi, 3.25);
}

TEST(CredibleInterval, HalfNormalAnalyticQuantiles) {
  const double sigma = 0.2;
  std::mt19937_64 g(9);
  std::normal_distribution<double> n;
  std::vector<double> s(1000000);
  for (auto& x : s) x = sigma * std::abs(n(g));
  const auto [lo, hi] = credible_interval(s);
  const double qlo = sigma * probit(0.5 + 0.5 * 0.025);
  const double qhi = sigma * probit(0.5 + 0.5 * 0.975);
  EXPECT_NEAR(lo, qlo, 0.02 * qlo);
  EXPECT_NEAR(hi, qhi, 0.02 * qhi);
  EXPECT_GT(hi - sigma * std::sqrt(2.0 / std::numbers::pi), sigma * std::sqrt(2.0 / std::numbers::pi) - lo);
}

TEST(CredibleInterval, TooFewDrawsRejected) {
  const std::vector<double> s(999, 1.0);
  EXPECT_THROW(credible_interval(s), InvalidArgument);
}

TEST(Diagnostics, RhatFlagsDisagreeingChains) {
  std::mt19937_64 g(1);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> good(4, std::vector<double>(1000)), bad = good;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t t = 0; t < 1000; ++t) {
      good[c][t] = n(g);
      bad[c][t] = n(g) + (c < 2 ? 0.0 : 3.0);
    }
  EXPECT_LT(detail::split_rhat(good), 1.01);
  EXPECT_GT(detail::split_rhat(bad), 1.5);
  EXPECT_GT(detail::effective_sample_size(good), 3000.0);
}

TEST(Diagnostics, EssOfAr1MatchesTheory) {
  // AR(1) with coefficient r has integrated autocorrelation time (1+r)/(1-r).
  const double r = 0.8;
  std::mt19937_64 g(2);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> chains(8, std::vector<double>(20000));
  for (auto& c : chains) {
    double x = 0.0;
    for (auto& v : c) v = x = r * x + std::sqrt(1.0 - r * r) * n(g);
  }
  const double expected = 8.0 * 20000.0 / ((1.0 + r) / (1.0 - r));
  EXPECT_NEAR(detail::effective_sample_size(chains), expected, 0.1 * expected);
}
