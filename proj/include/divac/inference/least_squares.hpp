#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "divac/errors.hpp"
#include "divac/linalg.hpp"

namespace divac::inference {

/// Fills `r` (size fixed per problem) with weighted residuals at `x`.
using ResidualFn = std::function<void(std::span<const double> x, std::span<double> r)>;

struct LsOptions {
  std::vector<double> lower;  // empty => unbounded
  std::vector<double> upper;
  std::vector<bool> fixed;  // empty => all free
  int max_iterations = 200;
  double step_tolerance = 1e-10;
  double fd_relative_step = 1e-6;
  /// Absolute floor for finite-difference steps, per parameter (empty => 1e-8).
  std::vector<double> fd_min_step;
  /// Scale the covariance by cost/(m - p); use when residuals are not
  /// normalized by known uncertainties.
  bool scale_covariance = false;
  /// Skip the rank check; the covariance is then a pseudo-inverse.
  bool allow_rank_deficient = false;
};

struct LsResult {
  std::vector<double> x;
  std::vector<double> covariance;  // row-major n×n (zero rows/cols for fixed params)
  std::vector<double> residuals;
  double cost = 0.0;  // sum of squared residuals
  int iterations = 0;
  bool converged = false;
  bool rank_deficient = false;
  std::vector<double> null_direction;

  double stddev(std::size_t i) const {
    const std::size_t n = x.size();
    return std::sqrt(std::max(0.0, covariance[i * n + i]));
  }
};

namespace detail {

/// Neumaier-compensated sum, so results do not depend on residual order at
/// the level of ordinary round-off.
inline double compensated_sum(std::span<const double> v) {
  double s = 0.0, c = 0.0;
  for (double x : v) {
    const double t = s + x;
    if (std::abs(s) >= std::abs(x))
      c += (s - t) + x;
    else
      c += (x - t) + s;
    s = t;
  }
  return s + c;
}

inline double sum_squares(std::span<const double> r) {
  std::vector<double> sq(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) sq[i] = r[i] * r[i];
  return compensated_sum(sq);
}

}  // namespace detail

/// Central-difference Jacobian (m×n row-major) of `f` at `x`.
inline std::vector<double> numeric_jacobian(const ResidualFn& f, std::span<const double> x, std::size_t m,
                                            const LsOptions& opt = {}) {
  const std::size_t n = x.size();
  std::vector<double> jac(m * n, 0.0);
  std::vector<double> xp(x.begin(), x.end()), rp(m), rm(m);
  for (std::size_t j = 0; j < n; ++j) {
    if (!opt.fixed.empty() && opt.fixed[j]) continue;
    const double floor_step = opt.fd_min_step.empty() ? 1e-8 : opt.fd_min_step[j];
    double h = std::max(opt.fd_relative_step * std::abs(x[j]), floor_step);
    double up = x[j] + h, down = x[j] - h;
    if (!opt.upper.empty()) up = std::min(up, opt.upper[j]);
    if (!opt.lower.empty()) down = std::max(down, opt.lower[j]);
    if (up - down <= 0.0) continue;
    xp[j] = up;
    f(xp, rp);
    xp[j] = down;
    f(xp, rm);
    xp[j] = x[j];
    for (std::size_t i = 0; i < m; ++i) jac[i * n + j] = (rp[i] - rm[i]) / (up - down);
  }
  return jac;
}

/// Damped Gauss-Newton (Levenberg-Marquardt) minimization of the sum of
/// squared residuals, with box bounds by projection. Stops when the relative
/// step falls below `step_tolerance` or after `max_iterations`.
inline LsResult least_squares(const ResidualFn& f, std::size_t m, std::span<const double> x0,
                              const LsOptions& opt = {}) {
  const std::size_t n = x0.size();
  if (m < n) throw InvalidArgument("fewer residuals than parameters");

  std::vector<std::size_t> free_idx;
  for (std::size_t j = 0; j < n; ++j)
    if (opt.fixed.empty() || !opt.fixed[j]) free_idx.push_back(j);
  const std::size_t p = free_idx.size();

  auto project = [&](std::vector<double>& x) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!opt.lower.empty()) x[j] = std::max(x[j], opt.lower[j]);
      if (!opt.upper.empty()) x[j] = std::min(x[j], opt.upper[j]);
    }
  };

  LsResult res;
  res.x.assign(x0.begin(), x0.end());
  project(res.x);
  res.residuals.assign(m, 0.0);
  f(res.x, res.residuals);
  for (double r : res.residuals)
    if (!std::isfinite(r)) throw NonFiniteError("residuals are not finite at the initial point");
  res.cost = detail::sum_squares(res.residuals);

  std::vector<double> jac, a(p * p), g(p), x_new(n), r_new(m);
  double lambda = 1e-3;
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    jac = numeric_jacobian(f, res.x, m, opt);
    std::vector<double> col(m);
    for (std::size_t a_i = 0; a_i < p; ++a_i) {
      for (std::size_t b_i = a_i; b_i < p; ++b_i) {
        for (std::size_t i = 0; i < m; ++i) col[i] = jac[i * n + free_idx[a_i]] * jac[i * n + free_idx[b_i]];
        a[a_i * p + b_i] = a[b_i * p + a_i] = detail::compensated_sum(col);
      }
      for (std::size_t i = 0; i < m; ++i) col[i] = jac[i * n + free_idx[a_i]] * res.residuals[i];
      g[a_i] = detail::compensated_sum(col);
    }
    if (p == 0) {
      res.converged = true;
      break;
    }

    bool accepted = false;
    bool stalled = false;
    double step_norm = 0.0;
    while (!accepted) {
      std::vector<double> damped = a;
      for (std::size_t k = 0; k < p; ++k)
        damped[k * p + k] += lambda * std::max(a[k * p + k], 1e-30) + 1e-300;
      std::vector<double> delta;
      try {
        std::vector<double> rhs(p);
        for (std::size_t k = 0; k < p; ++k) rhs[k] = -g[k];
        delta = linalg::solve(damped, rhs, p);
      } catch (const InvalidArgument&) {
        lambda *= 10.0;
        if (lambda > 1e16) {
          stalled = true;
          break;
        }
        continue;
      }
      x_new = res.x;
      for (std::size_t k = 0; k < p; ++k) x_new[free_idx[k]] += delta[k];
      project(x_new);
      f(x_new, r_new);
      bool finite = true;
      for (double r : r_new) finite = finite && std::isfinite(r);
      const double cost_new = finite ? detail::sum_squares(r_new) : std::numeric_limits<double>::infinity();
      if (cost_new <= res.cost) {
        double dx = 0.0, xn = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dx += (x_new[j] - res.x[j]) * (x_new[j] - res.x[j]);
          xn += res.x[j] * res.x[j];
        }
        step_norm = std::sqrt(dx) / (std::sqrt(xn) + opt.step_tolerance);
        const bool no_gain = cost_new == res.cost;
        res.x = x_new;
        res.residuals = r_new;
        res.cost = cost_new;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (no_gain) stalled = true;
      } else {
        lambda *= 4.0;
        if (lambda > 1e16) {
          stalled = true;
          break;
        }
      }
    }
    if (stalled || (accepted && step_norm < opt.step_tolerance)) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }

  // Covariance from the normal equations at the optimum, with a rank check
  // on the column-scaled information matrix.
  jac = numeric_jacobian(f, res.x, m, opt);
  std::vector<double> info(p * p, 0.0);
  {
    std::vector<double> col(m);
    for (std::size_t a_i = 0; a_i < p; ++a_i)
      for (std::size_t b_i = a_i; b_i < p; ++b_i) {
        for (std::size_t i = 0; i < m; ++i) col[i] = jac[i * n + free_idx[a_i]] * jac[i * n + free_idx[b_i]];
        info[a_i * p + b_i] = info[b_i * p + a_i] = detail::compensated_sum(col);
      }
  }
  std::vector<double> scale(p, 1.0);
  std::vector<double> scaled = info;
  for (std::size_t k = 0; k < p; ++k) scale[k] = info[k * p + k] > 0.0 ? 1.0 / std::sqrt(info[k * p + k]) : 0.0;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) scaled[i * p + j] *= scale[i] * scale[j];

  res.covariance.assign(n * n, 0.0);
  if (p > 0) {
    const auto eig = linalg::symmetric_eigensystem(scaled, p);
    const double cutoff = 1e-12 * std::max(1.0, eig.values.back());
    std::size_t worst = 0;
    bool zero_column = false;
    for (std::size_t k = 0; k < p; ++k) zero_column = zero_column || scale[k] == 0.0;
    res.rank_deficient = zero_column || eig.values.front() < cutoff;
    if (res.rank_deficient) {
      res.null_direction.assign(n, 0.0);
      if (zero_column) {
        for (std::size_t k = 0; k < p; ++k)
          if (scale[k] == 0.0) {
            res.null_direction[free_idx[k]] = 1.0;
            break;
          }
      } else {
        double nn = 0.0;
        for (std::size_t k = 0; k < p; ++k) {
          res.null_direction[free_idx[k]] = eig.vectors[k * p + worst] * scale[k];
          nn += res.null_direction[free_idx[k]] * res.null_direction[free_idx[k]];
        }
        for (auto& v : res.null_direction) v /= std::sqrt(nn);
      }
      if (!opt.allow_rank_deficient) {
        throw NonIdentifiableError("rank-deficient Jacobian: the data do not constrain one parameter direction",
                                   res.null_direction);
      }
    }
    const double factor =
        opt.scale_covariance && m > p ? res.cost / static_cast<double>(m - p) : 1.0;
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < p; ++k) {
          if (eig.values[k] < cutoff) continue;
          s += eig.vectors[i * p + k] * eig.vectors[j * p + k] / eig.values[k];
        }
        res.covariance[free_idx[i] * n + free_idx[j]] = factor * s * scale[i] * scale[j];
      }
    }
  }
  return res;
}

/// Weighted curve fit: residual_i = sqrt(w_i) (model(x)_i - y_i).
using ModelFn = std::function<void(std::span<const double> x, std::span<double> prediction)>;

inline LsResult fit_curve(const ModelFn& model, std::span<const double> y, std::span<const double> weights,
                          std::span<const double> init, const LsOptions& opt = {}) {
  const std::size_t m = y.size();
  if (!weights.empty() && weights.size() != m) throw InvalidArgument("weights and data differ in length");
  std::vector<double> data(y.begin(), y.end());
  std::vector<double> w(weights.begin(), weights.end());
  auto residual = [model, data, w, m](std::span<const double> x, std::span<double> r) {
    std::vector<double> pred(m);
    model(x, pred);
    for (std::size_t i = 0; i < m; ++i) r[i] = (w.empty() ? 1.0 : std::sqrt(w[i])) * (pred[i] - data[i]);
  };
  return least_squares(residual, m, init, opt);
}

}  // namespace divac::inference

namespace divac::inference {

/// Point estimate with a two-sided interval.
struct Estimate {
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double x) const { return x >= lower && x <= upper; }
  double half_width() const { return 0.5 * (upper - lower); }
};

inline constexpr double kZ95 = 1.959963984540054;

/// Normal-approximation 95% interval for parameter i of a least-squares fit.
inline Estimate normal_interval(const LsResult& r, std::size_t i, double z = kZ95) {
  const double s = r.stddev(i);
  return {r.x[i], r.x[i] - z * s, r.x[i] + z * s};
}

}  // namespace divac::inference
