#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "divac/errors.hpp"
#include "divac/inference/least_squares.hpp"

namespace divac::inference {

struct LinewidthOptions {
  double exponent = 5.0;
  bool free_exponent = false;
  std::vector<double> sigma_MHz;  // empty => unit weights, covariance scaled by the residual variance
};

struct LinewidthFit {
  Estimate gamma0_MHz;
  Estimate a;  // MHz / K^n
  Estimate exponent;
  std::vector<double> residuals_MHz;
  LsResult ls;

  double width(double T) const { return gamma0_MHz.value + a.value * std::pow(T, exponent.value); }
};

/// Γ(T) = Γ0 + a·T^n. Internally a is carried as b = a·T_ref^n (T_ref = 20 K)
/// so both amplitudes are of comparable size.
inline LinewidthFit fit_linewidth_temperature(std::span<const double> T_K, std::span<const double> width_MHz,
                                              const LinewidthOptions& opt = {}) {
  const std::size_t m = T_K.size();
  if (width_MHz.size() != m) throw InvalidArgument("temperature and width lists differ in length");
  if (m < 5) throw InvalidArgument("linewidth fit needs at least 5 temperatures");
  for (std::size_t i = 0; i < m; ++i)
    if (!(T_K[i] > 0.0) || !std::isfinite(width_MHz[i])) throw InvalidArgument("temperatures must be positive, widths finite");
  const auto [tmin, tmax] = std::minmax_element(T_K.begin(), T_K.end());
  if (!(*tmin < 20.0 && *tmax > 20.0)) throw InvalidArgument("temperatures must span both sides of 20 K");
  if (!opt.sigma_MHz.empty() && opt.sigma_MHz.size() != m) throw InvalidArgument("one sigma per width required");
  if (!(opt.exponent > 0.0)) throw InvalidArgument("exponent must be positive");
  if (m < (opt.free_exponent ? 3u : 2u)) throw InvalidArgument("too few points");

  constexpr double kRef = 20.0;
  std::vector<double> t(T_K.begin(), T_K.end()), y(width_MHz.begin(), width_MHz.end());
  std::vector<double> w(m, 1.0);
  for (std::size_t i = 0; i < opt.sigma_MHz.size(); ++i) {
    if (!(opt.sigma_MHz[i] > 0.0)) throw InvalidArgument("sigma must be positive");
    w[i] = 1.0 / opt.sigma_MHz[i];
  }
  const double n0 = opt.exponent;
  ResidualFn f = [&](std::span<const double> x, std::span<double> r) {
    for (std::size_t i = 0; i < m; ++i) r[i] = w[i] * (x[0] + x[1] * std::pow(t[i] / kRef, x[2]) - y[i]);
  };

  // Linear start at the nominal exponent.
  double s00 = 0, s01 = 0, s11 = 0, b0 = 0, b1 = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double u = std::pow(t[i] / kRef, n0), ww = w[i] * w[i];
    s00 += ww, s01 += ww * u, s11 += ww * u * u, b0 += ww * y[i], b1 += ww * u * y[i];
  }
  const double det = s00 * s11 - s01 * s01;
  std::vector<double> x0{det != 0.0 ? (s11 * b0 - s01 * b1) / det : y[0], det != 0.0 ? (s00 * b1 - s01 * b0) / det : 0.0,
                         n0};
  LsOptions lso;
  lso.fixed = {false, false, !opt.free_exponent};
  lso.lower = {-1e300, -1e300, 0.1};
  lso.upper = {1e300, 1e300, 20.0};
  lso.scale_covariance = opt.sigma_MHz.empty();
  const auto r = least_squares(f, m, x0, lso);

  LinewidthFit out;
  out.ls = r;
  out.gamma0_MHz = normal_interval(r, 0);
  const auto b = normal_interval(r, 1);
  const double scale = std::pow(kRef, r.x[2]);
  out.a = {b.value / scale, b.lower / scale, b.upper / scale};
  out.exponent = opt.free_exponent ? normal_interval(r, 2) : Estimate{n0, n0, n0};
  out.residuals_MHz.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.residuals_MHz[i] = r.residuals[i] / w[i];
  return out;
}

}  // namespace divac::inference
