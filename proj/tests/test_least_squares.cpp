#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "divac/inference/assignment.hpp"
#include "divac/inference/least_squares.hpp"

using namespace divac;
using namespace divac::inference;

TEST(LeastSquares, LinearModelExact) {
  std::vector<double> x, y;
  for (int i = 1; i <= 20; ++i) {
    x.push_back(0.37 * i);
    y.push_back(2.718281828 * 0.37 * i);
  }
  ModelFn model = [x](std::span<const double> a, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a[0] * x[i];
  };
  const std::vector<double> init{0.1};
  const auto r = fit_curve(model, y, {}, init, {});
  EXPECT_NEAR(r.x[0], 2.718281828, 1e-12);
  EXPECT_TRUE(r.converged);
}

TEST(LeastSquares, QuadraticBowlFast) {
  const std::vector<double> centre{1.5, -2.0, 0.25};
  ResidualFn f = [centre](std::span<const double> x, std::span<double> r) {
    r[0] = 3.0 * (x[0] - centre[0]);
    r[1] = 0.5 * (x[1] - centre[1]);
    r[2] = 2.0 * (x[2] - centre[2]) + 0.3 * (x[0] - centre[0]);
  };
  const std::vector<double> x0{10.0, 10.0, -10.0};
  const auto r = least_squares(f, 3, x0);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 20);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.x[i], centre[i], 1e-8);
}

TEST(LeastSquares, RosenbrockMatchesGridSearch) {
  // Curved-valley residuals with a non-zero minimum from a third residual.
  ResidualFn f = [](std::span<const double> x, std::span<double> r) {
    r[0] = 10.0 * (x[1] - x[0] * x[0]);
    r[1] = 1.0 - x[0];
    r[2] = 0.5 * (x[0] + x[1] - 1.0);
  };
  const std::vector<double> x0{-1.2, 1.0};
  const auto res = least_squares(f, 3, x0);

  // Dense grid search, then local refinement on successively finer grids.
  std::vector<double> r(3);
  auto cost = [&](double a, double b) {
    const double x[2] = {a, b};
    f(x, r);
    return r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
  };
  double ba = 0.0, bb = 0.0, best = 1e300;
  for (double a = -2.0; a <= 2.0; a += 0.002)
    for (double b = -1.0; b <= 3.0; b += 0.002) {
      const double c = cost(a, b);
      if (c < best) best = c, ba = a, bb = b;
    }
  for (double h = 0.002; h > 1e-9; h *= 0.1) {
    const double ca = ba, cb = bb;
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j) {
        const double c = cost(ca + i * h * 0.1, cb + j * h * 0.1);
        if (c < best) best = c, ba = ca + i * h * 0.1, bb = cb + j * h * 0.1;
      }
  }
  EXPECT_NEAR(res.cost, best, 1e-6);
  EXPECT_NEAR(res.x[0], ba, 1e-3);
  EXPECT_NEAR(res.x[1], bb, 1e-3);
}

TEST(LeastSquares, InvariantUnderResidualReordering) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<double> t, y;
  for (int i = 0; i < 200; ++i) {
    t.push_back(0.05 * i);
    y.push_back(3.0 * std::exp(-t.back() / 2.5) + 0.4 + 0.01 * nd(rng));
  }
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto make = [](std::vector<double> tt, std::vector<double> yy) {
    return [tt, yy](std::span<const double> x, std::span<double> r) {
      for (std::size_t i = 0; i < tt.size(); ++i) r[i] = x[0] * std::exp(-tt[i] / x[1]) + x[2] - yy[i];
    };
  };
  std::vector<double> tp, yp;
  for (auto k : perm) {
    tp.push_back(t[k]);
    yp.push_back(y[k]);
  }
  const std::vector<double> x0{1.0, 1.0, 0.0};
  const auto a = least_squares(make(t, y), t.size(), x0);
  const auto b = least_squares(make(tp, yp), t.size(), x0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.x[i], b.x[i], 1e-12 * std::max(1.0, std::abs(a.x[i])));
  EXPECT_NEAR(a.cost, b.cost, 1e-14);
}

TEST(LeastSquares, CovarianceMatchesLinearTheory) {
  // y = a + b t with unit-normalized residuals: covariance = (JᵀJ)⁻¹.
  std::vector<double> t{0.0, 1.0, 2.0, 3.0, 4.0};
  ResidualFn f = [t](std::span<const double> x, std::span<double> r) {
    for (std::size_t i = 0; i < t.size(); ++i) r[i] = x[0] + x[1] * t[i] - (1.0 + 2.0 * t[i]);
  };
  const std::vector<double> x0{0.0, 0.0};
  const auto r = least_squares(f, t.size(), x0);
  // JᵀJ = [[5, 10], [10, 30]], inverse = [[0.6, -0.2], [-0.2, 0.1]].
  EXPECT_NEAR(r.covariance[0], 0.6, 1e-6);
  EXPECT_NEAR(r.covariance[1], -0.2, 1e-6);
  EXPECT_NEAR(r.covariance[3], 0.1, 1e-6);
}

TEST(LeastSquares, RankDeficiencyReportsNullDirection) {
  ResidualFn f = [](std::span<const double> x, std::span<double> r) {
    for (int i = 0; i < 4; ++i) r[i] = (x[0] + x[1]) * (i + 1) - 3.0 * (i + 1);
  };
  const std::vector<double> x0{0.0, 0.0};
  try {
    least_squares(f, 4, x0);
    FAIL() << "expected NonIdentifiableError";
  } catch (const NonIdentifiableError& e) {
    const auto& d = e.null_direction();
    ASSERT_EQ(d.size(), 2u);
    EXPECT_NEAR(std::abs(d[0] + d[1]), 0.0, 1e-6);
    EXPECT_NEAR(std::abs(d[0]), std::sqrt(0.5), 1e-6);
  }
}

TEST(LeastSquares, BoundsAndFixedParameters) {
  ResidualFn f = [](std::span<const double> x, std::span<double> r) {
    r[0] = x[0] - 5.0;
    r[1] = x[1] - 3.0;
  };
  LsOptions opt;
  opt.lower = {0.0, 0.0};
  opt.upper = {2.0, 10.0};
  opt.fixed = {false, true};
  const std::vector<double> x0{1.0, 7.0};
  const auto r = least_squares(f, 2, x0, opt);
  EXPECT_DOUBLE_EQ(r.x[0], 2.0);
  EXPECT_DOUBLE_EQ(r.x[1], 7.0);
  EXPECT_EQ(r.covariance[3], 0.0);
}

TEST(LeastSquares, RejectsUnderdetermined) {
  ResidualFn f = [](std::span<const double> x, std::span<double> r) { r[0] = x[0] + x[1]; };
  const std::vector<double> x0{0.0, 0.0};
  EXPECT_THROW(least_squares(f, 1, x0), InvalidArgument);
}

TEST(LeastSquares, NonFiniteStartRejected) {
  ResidualFn f = [](std::span<const double> x, std::span<double> r) { r[0] = std::log(x[0]); };
  const std::vector<double> x0{-1.0};
  EXPECT_THROW(least_squares(f, 1, x0), NonFiniteError);
}

TEST(Assignment, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + trial % 4, m = 6;
    std::vector<double> cost(n * m);
    for (auto& c : cost) c = u(rng);
    const auto a = optimal_assignment(cost, n, m);
    double got = 0.0;
    for (std::size_t i = 0; i < n; ++i) got += cost[i * m + a[i]];
    std::vector<std::size_t> cols(m);
    std::iota(cols.begin(), cols.end(), 0);
    double best = 1e300;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += cost[i * m + cols[i]];
      best = std::min(best, s);
    } while (std::next_permutation(cols.begin(), cols.end()));
    EXPECT_NEAR(got, best, 1e-12);
    std::vector<std::size_t> used(a.begin(), a.end());
    std::sort(used.begin(), used.end());
    EXPECT_TRUE(std::adjacent_find(used.begin(), used.end()) == used.end());
  }
}
