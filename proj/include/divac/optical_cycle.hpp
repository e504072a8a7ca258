#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "divac/errors.hpp"
#include "divac/inference/least_squares.hpp"
#include "divac/linalg.hpp"

namespace divac::optical {

using linalg::RealMatrix;

enum Level : std::size_t { G0 = 0, G1 = 1, E0 = 2, E1 = 3, S = 4 };
inline constexpr std::size_t kLevels = 5;
using Populations = std::array<double, kLevels>;

struct RateParams {
  double k_r = 1.0 / 23.0;                    // 1/ns
  double G_isc0 = 0.01;                       // 1/ns
  double G_isc1 = 1.0 / 15.7 - 1.0 / 23.0;    // 1/ns
  double G_s = 20.0 / 220.0;                  // 1/ns
  double beta = 0.05;                         // 1/(ns·mW)
  double bg = 0.0;                            // PL units, additive

  void validate() const {
    for (double v : {k_r, G_isc0, G_isc1, G_s, beta, bg})
      if (!std::isfinite(v)) throw NonFiniteError("rate parameters must be finite");
    if (k_r < 0 || G_isc0 < 0 || G_isc1 < 0 || G_s < 0 || beta < 0 || bg < 0)
      throw InvalidArgument("rates, pump coefficient and background must be non-negative");
  }
  double tau0() const { return 1.0 / (k_r + G_isc0); }
  double tau1() const { return 1.0 / (k_r + G_isc1); }
};

enum class Pump { Off, OffResonant, ResonantMs0 };
enum class Preparation { ms0, ms1 };

inline std::string preparation_name(Preparation p) { return p == Preparation::ms0 ? "ms0" : "ms1"; }

/// Rate generator G[to][from]; columns sum to zero. In resonant-ms0 mode the
/// radiative decay of E0 returns to G1 with probability `spin_flip`.
inline RealMatrix build_generator(const RateParams& p, Pump pump, double power_mW = 0.0, double spin_flip = 0.0) {
  p.validate();
  if (pump != Pump::Off && !(power_mW >= 0.0)) throw InvalidArgument("laser power must be non-negative");
  if (!(spin_flip >= 0.0 && spin_flip <= 1.0)) throw InvalidArgument("spin-flip probability must lie in [0, 1]");
  RealMatrix g(kLevels);
  auto rate = [&g](Level from, Level to, double r) {
    g(to, from) += r;
    g(from, from) -= r;
  };
  const double pump_rate = pump == Pump::Off ? 0.0 : p.beta * power_mW;
  rate(G0, E0, pump_rate);
  if (pump == Pump::OffResonant) rate(G1, E1, pump_rate);
  const double leak = pump == Pump::ResonantMs0 ? spin_flip : 0.0;
  rate(E0, G0, p.k_r * (1.0 - leak));
  rate(E0, G1, p.k_r * leak);
  rate(E1, G1, p.k_r);
  rate(E0, S, p.G_isc0);
  rate(E1, S, p.G_isc1);
  rate(S, G0, p.G_s);
  return g;
}

/// Stationary distribution: null vector of G normalized to unit sum.
inline Populations steady_state(const RealMatrix& g) {
  const std::size_t n = g.dim();
  std::vector<double> a(n * n), b(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] = i == 0 ? 1.0 : g(i, j);
  b[0] = 1.0;
  const auto x = linalg::solve(a, b, n);
  Populations out{};
  // Levels with no inflow are exactly empty; drop round-off below zero.
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] < 0.0 && x[i] > -1e-12 ? 0.0 : x[i];
  return out;
}

struct PlTrace {
  std::vector<double> times;  // ns
  std::vector<double> pl;
  std::vector<double> sigma;  // optional per-point uncertainty
  double power = 0.0;         // mW
  Preparation preparation = Preparation::ms0;
  std::vector<Populations> populations;
};

inline void check_times(std::span<const double> t) {
  if (t.empty()) throw InvalidArgument("time grid is empty");
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (!std::isfinite(t[k]) || t[k] < 0.0) throw InvalidArgument("times must be finite and non-negative");
    if (k > 0 && !(t[k] > t[k - 1])) throw InvalidArgument("times must be strictly increasing");
  }
}

inline PlTrace propagate_trace(const RateParams& p, const RealMatrix& g, const Populations& start,
                               std::span<const double> times) {
  check_times(times);
  PlTrace tr;
  tr.times.assign(times.begin(), times.end());
  const auto states = linalg::propagate_grid(g, start, times);
  for (const auto& s : states) {
    Populations q{};
    std::copy(s.begin(), s.end(), q.begin());
    tr.populations.push_back(q);
    tr.pl.push_back(p.k_r * (q[E0] + q[E1]) + p.bg);
  }
  return tr;
}

/// PL after an instantaneous excitation that leaves P0 in E0 and 1 − P0 in E1.
inline PlTrace pulsed_pl(const RateParams& p, double P0, std::span<const double> times) {
  if (!(P0 >= 0.0 && P0 <= 1.0)) throw InvalidArgument("initial polarization must lie in [0, 1]");
  Populations start{};
  start[E0] = P0;
  start[E1] = 1.0 - P0;
  return propagate_trace(p, build_generator(p, Pump::Off), start, times);
}

/// Fraction of mS=0 after preparation: θ=π swaps mS=0 with the lumped mS=±1
/// level with the given π-pulse fidelity.
inline double prepared_ms0(double polarization, Preparation prep, double pi_fidelity = 1.0) {
  if (!(polarization >= 0.0 && polarization <= 1.0)) throw InvalidArgument("polarization must lie in [0, 1]");
  if (!(pi_fidelity >= 0.0 && pi_fidelity <= 1.0)) throw InvalidArgument("pi-pulse fidelity must lie in [0, 1]");
  if (prep == Preparation::ms0) return polarization;
  return (1.0 - pi_fidelity) * polarization + pi_fidelity * (1.0 - polarization);
}

/// PL under a CW off-resonant pulse starting from a prepared ground state.
inline PlTrace cw_pl(const RateParams& p, double power_mW, Preparation prep, std::span<const double> times,
                     double polarization = 1.0, double pi_fidelity = 1.0) {
  if (!(power_mW > 0.0)) throw InvalidArgument("CW power must be positive");
  Populations start{};
  start[G0] = prepared_ms0(polarization, prep, pi_fidelity);
  start[G1] = 1.0 - start[G0];
  auto tr = propagate_trace(p, build_generator(p, Pump::OffResonant, power_mW), start, times);
  tr.power = power_mW;
  tr.preparation = prep;
  return tr;
}

// ---------------------------------------------------------------------------
// Biexponential lifetime extraction

struct BiexpOptions {
  double pi_fidelity = 1.0;  // assumed for the θ=π trace
  double min_ratio = 1.05;
};

struct BiexpFit {
  inference::Estimate tau0, tau1, polarization;
  double amplitude0 = 0.0, amplitude_pi = 0.0, bg = 0.0;
  inference::LsResult ls;
};

namespace detail {

inline double biexp(double t, double tau0, double tau1, double frac0) {
  return frac0 * std::exp(-t / tau0) + (1.0 - frac0) * std::exp(-t / tau1);
}

inline void biexp_predict(std::span<const double> x, std::span<const double> t, double fidelity,
                          std::span<double> out) {
  const std::size_t n = t.size();
  const double fpi = (1.0 - fidelity) * x[2] + fidelity * (1.0 - x[2]);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[3] * biexp(t[i], x[0], x[1], x[2]) + x[5];
    out[n + i] = x[4] * biexp(t[i], x[0], x[1], fpi) + x[5];
  }
}

}  // namespace detail

/// Simultaneous fit of the θ=0 and θ=π decay traces with shared lifetimes.
/// Parameters: τ0, τ1, polarization, two amplitudes and a shared background.
/// The pair is symmetric under (τ0, τ1, P) ↔ (τ1, τ0, 1 − P); the P ≥ 0.5
/// branch is reported.
inline BiexpFit extract_biexponential(const PlTrace& theta0, const PlTrace& theta_pi, const BiexpOptions& opt = {}) {
  const std::size_t n = theta0.times.size();
  if (n < 8 || theta_pi.times.size() != n) throw InvalidArgument("traces need a shared grid of at least 8 points");
  for (std::size_t i = 0; i < n; ++i)
    if (theta0.times[i] != theta_pi.times[i]) throw InvalidArgument("traces must share the same time grid");
  check_times(theta0.times);
  const auto& t = theta0.times;
  std::vector<double> y(2 * n), w;
  std::copy(theta0.pl.begin(), theta0.pl.end(), y.begin());
  std::copy(theta_pi.pl.begin(), theta_pi.pl.end(), y.begin() + n);
  const bool weighted = theta0.sigma.size() == n && theta_pi.sigma.size() == n;
  if (weighted) {
    w.resize(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 1.0 / (theta0.sigma[i] * theta0.sigma[i]);
      w[n + i] = 1.0 / (theta_pi.sigma[i] * theta_pi.sigma[i]);
    }
  }

  // Initial values by variable projection over a lifetime grid: for fixed
  // (τa, τb) the model is linear in the four amplitudes and background.
  const double span = t.back() - t.front();
  std::vector<double> grid;
  for (double tau = std::max(0.05 * span, 1e-3 * span); tau <= 5.0 * span; tau *= 1.08) grid.push_back(tau);
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> x0{0.0, 0.0, 0.9, 1.0, 1.0, 0.0};
  for (std::size_t a = 0; a < grid.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      const double ta = grid[a], tb = grid[b];
      std::vector<double> ata(25, 0.0), atb(5, 0.0);
      for (std::size_t i = 0; i < 2 * n; ++i) {
        const double ti = t[i % n];
        double row[5] = {0, 0, 0, 0, 1.0};
        const std::size_t off = i < n ? 0 : 2;
        row[off] = std::exp(-ti / ta);
        row[off + 1] = std::exp(-ti / tb);
        const double wi = weighted ? w[i] : 1.0;
        for (int r = 0; r < 5; ++r) {
          atb[r] += wi * row[r] * y[i];
          for (int c = 0; c < 5; ++c) ata[r * 5 + c] += wi * row[r] * row[c];
        }
      }
      std::vector<double> c;
      try {
        c = linalg::solve(ata, atb, 5);
      } catch (const InvalidArgument&) {
        continue;
      }
      double cost = 0.0;
      for (std::size_t i = 0; i < 2 * n; ++i) {
        const double ti = t[i % n];
        const std::size_t off = i < n ? 0 : 2;
        const double r = c[off] * std::exp(-ti / ta) + c[off + 1] * std::exp(-ti / tb) + c[4] - y[i];
        cost += (weighted ? w[i] : 1.0) * r * r;
      }
      const double amp0 = c[0] + c[1], amp_pi = c[2] + c[3];
      if (cost < best && amp0 > 0.0 && amp_pi > 0.0) {
        best = cost;
        const double frac = std::clamp(c[0] / amp0, 0.0, 1.0);
        x0 = {ta, tb, frac, amp0, amp_pi, c[4]};
      }
    }
  }

  const double fidelity = opt.pi_fidelity;
  inference::ModelFn model = [t, fidelity](std::span<const double> x, std::span<double> out) {
    detail::biexp_predict(x, t, fidelity, out);
  };
  inference::LsOptions ls;
  const double big = std::numeric_limits<double>::infinity();
  ls.lower = {1e-6 * span, 1e-6 * span, 0.0, 0.0, 0.0, -big};
  ls.upper = {100.0 * span, 100.0 * span, 1.0, big, big, big};
  ls.scale_covariance = !weighted;
  ls.max_iterations = 500;

  BiexpFit fit;
  try {
    fit.ls = inference::fit_curve(model, y, w, x0, ls);
  } catch (const NonIdentifiableError& e) {
    throw NonIdentifiableError("biexponential components are not separable in these traces", e.null_direction());
  }
  auto x = fit.ls.x;
  auto cov = fit.ls.covariance;
  if (x[2] < 0.5) {
    // Report the P ≥ 0.5 branch of the symmetric pair.
    std::swap(x[0], x[1]);
    x[2] = 1.0 - x[2];
    for (std::size_t k = 0; k < 6; ++k) std::swap(cov[0 * 6 + k], cov[1 * 6 + k]);
    for (std::size_t k = 0; k < 6; ++k) std::swap(cov[k * 6 + 0], cov[k * 6 + 1]);
    for (std::size_t k = 0; k < 6; ++k)
      if (k != 2) {
        cov[2 * 6 + k] = -cov[2 * 6 + k];
        cov[k * 6 + 2] = -cov[k * 6 + 2];
      }
    fit.ls.x = x;
    fit.ls.covariance = cov;
  }
  const double ratio = std::max(x[0], x[1]) / std::min(x[0], x[1]);
  if (ratio < opt.min_ratio) {
    throw NonIdentifiableError("fitted lifetimes differ by less than the separability threshold (ratio " +
                                   std::to_string(ratio) + ")",
                               {1.0, -1.0, 0.0, 0.0, 0.0, 0.0});
  }
  fit.tau0 = inference::normal_interval(fit.ls, 0);
  fit.tau1 = inference::normal_interval(fit.ls, 1);
  fit.polarization = inference::normal_interval(fit.ls, 2);
  fit.polarization.lower = std::max(0.0, fit.polarization.lower);
  fit.polarization.upper = std::min(1.0, fit.polarization.upper);
  fit.amplitude0 = x[3];
  fit.amplitude_pi = x[4];
  fit.bg = x[5];
  return fit;
}

// ---------------------------------------------------------------------------
// Global CW rate fit

struct RateConstraints {
  double tau0 = 18.7;  // ns, total mS=0 excited-state lifetime
  double tau1 = 15.7;  // ns, total mS=±1 excited-state lifetime
  double polarization = 1.0;
  double pi_fidelity = 1.0;
  double bg = 0.0;
};

struct GlobalFitOptions {
  /// Free-parameter mask over (k_r, G_s, beta, eta); fixed ones keep init.
  std::array<bool, 4> free{true, true, true, true};
  int max_iterations = 200;
};

struct GlobalRateFit {
  RateParams rates;
  double eta = 1.0;  // counts per emitted photon
  std::array<inference::Estimate, 4> intervals;  // k_r, G_s, beta, eta
  std::vector<double> trace_rms;                 // weighted RMS residual per trace
  inference::LsResult ls;
};

inline RateParams constrained_rates(double k_r, double G_s, double beta, const RateConstraints& c) {
  RateParams r;
  r.k_r = k_r;
  r.G_isc0 = std::max(0.0, 1.0 / c.tau0 - k_r);
  r.G_isc1 = std::max(0.0, 1.0 / c.tau1 - k_r);
  r.G_s = G_s;
  r.beta = beta;
  r.bg = c.bg;
  return r;
}

/// Fits shared rates to CW traces at several powers and both preparations.
/// ISC rates follow from the fixed lifetimes (G_isc = 1/τ − k_r); the pump
/// rate per trace is beta times its power.
inline GlobalRateFit global_rate_fit(const std::vector<PlTrace>& traces, const RateConstraints& c,
                                     const RateParams& init, double eta_init = 1.0,
                                     const GlobalFitOptions& opt = {}) {
  if (traces.empty()) throw InvalidArgument("no traces to fit");
  std::size_t m = 0;
  for (const auto& tr : traces) {
    if (!(tr.power > 0.0)) throw InvalidArgument("every CW trace needs a positive power");
    check_times(tr.times);
    if (tr.pl.size() != tr.times.size()) throw InvalidArgument("trace PL and time grid differ in length");
    if (!tr.sigma.empty() && tr.sigma.size() != tr.times.size())
      throw InvalidArgument("trace sigma and time grid differ in length");
    m += tr.times.size();
  }
  const bool weighted = std::all_of(traces.begin(), traces.end(), [](const PlTrace& t) { return !t.sigma.empty(); });

  auto residuals = [&traces, c, weighted](std::span<const double> x, std::span<double> r) {
    const auto rates = constrained_rates(x[0], x[1], x[2], c);
    std::size_t k = 0;
    for (const auto& tr : traces) {
      const auto model = cw_pl(rates, tr.power, tr.preparation, tr.times, c.polarization, c.pi_fidelity);
      for (std::size_t i = 0; i < tr.times.size(); ++i, ++k) {
        const double pred = x[3] * (model.pl[i] - rates.bg) + rates.bg;
        r[k] = (pred - tr.pl[i]) / (weighted ? tr.sigma[i] : 1.0);
      }
    }
  };

  const double kmax = std::min(1.0 / c.tau0, 1.0 / c.tau1);
  const std::vector<double> x0{std::min(init.k_r, kmax), init.G_s, init.beta, eta_init};
  inference::LsOptions ls;
  ls.lower = {1e-6 * kmax, 1e-9, 1e-9, 1e-9};
  ls.upper = {kmax, std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
              std::numeric_limits<double>::infinity()};
  ls.fixed.assign(4, false);
  for (int i = 0; i < 4; ++i) ls.fixed[i] = !opt.free[i];
  ls.scale_covariance = !weighted;
  ls.max_iterations = opt.max_iterations;
  ls.fd_min_step = {1e-9, 1e-9, 1e-9, 1e-9};

  GlobalRateFit out;
  out.ls = inference::least_squares(residuals, m, x0, ls);
  std::vector<double> r(m);
  residuals(out.ls.x, r);
  std::size_t k = 0;
  for (const auto& tr : traces) {
    double s = 0.0;
    for (std::size_t i = 0; i < tr.times.size(); ++i, ++k) s += r[k] * r[k];
    out.trace_rms.push_back(std::sqrt(s / static_cast<double>(tr.times.size())));
  }
  if (!out.ls.converged) {
    double worst = 0.0;
    for (double v : out.trace_rms) worst = std::max(worst, v);
    throw ConvergenceError("global rate fit did not converge (worst per-trace RMS " + std::to_string(worst) + ")",
                           std::sqrt(out.ls.cost));
  }
  out.rates = constrained_rates(out.ls.x[0], out.ls.x[1], out.ls.x[2], c);
  out.eta = out.ls.x[3];
  for (std::size_t i = 0; i < 4; ++i) out.intervals[i] = inference::normal_interval(out.ls, i);
  return out;
}

// ---------------------------------------------------------------------------
// Photon statistics and readout

/// g²(τ) from the post-emission state: an emission from E0 (E1) leaves the
/// system in G0 (G1), weighted by the steady-state emission shares.
inline std::vector<double> g2_curve(const RateParams& p, double power_mW, std::span<const double> taus) {
  if (!(power_mW > 0.0)) throw InvalidArgument("g2 needs a positive pump power");
  const auto g = build_generator(p, Pump::OffResonant, power_mW);
  const auto ss = steady_state(g);
  const double emission = p.k_r * (ss[E0] + ss[E1]);
  if (!(emission > 0.0)) throw InvalidArgument("no steady-state emission for these rates");
  Populations start{};
  start[G0] = ss[E0] / (ss[E0] + ss[E1]);
  start[G1] = ss[E1] / (ss[E0] + ss[E1]);
  check_times(taus);
  const auto states = linalg::propagate_grid(g, start, taus);
  std::vector<double> out;
  for (const auto& s : states) out.push_back(p.k_r * (s[E0] + s[E1]) / emission);
  return out;
}

/// Correction for uncorrelated background with signal fraction rho.
inline double background_correct_g2(double raw, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidArgument("signal fraction rho must lie in (0, 1]");
  return (raw - (1.0 - rho * rho)) / (rho * rho);
}

enum class ReadoutMode { OffResonant, ResonantMs0 };

/// Default off-resonant readout power, below PL saturation for the default rates.
inline constexpr double kReadoutPower_mW = 0.5;

/// Integrated PL from `start` over [0, window] under generator g, by the
/// augmented-matrix exponential (background included).
inline double integrated_pl(const RateParams& p, const RealMatrix& g, const Populations& start, double window) {
  RealMatrix aug(kLevels + 1);
  for (std::size_t i = 0; i < kLevels; ++i)
    for (std::size_t j = 0; j < kLevels; ++j) aug(i, j) = g(i, j);
  aug(kLevels, E0) = p.k_r;
  aug(kLevels, E1) = p.k_r;
  std::vector<double> s0(kLevels + 1, 0.0);
  std::copy(start.begin(), start.end(), s0.begin());
  const auto s = linalg::propagate_linear(aug, s0, window);
  return s[kLevels] + p.bg * window;
}

/// 1 − (integrated PL | mS=±1 preparation)/(integrated PL | mS=0 preparation).
inline double readout_contrast(const RateParams& p, double power_mW, double window_ns, ReadoutMode mode,
                               double spin_flip = 0.0, double polarization = 1.0) {
  if (!(window_ns > 0.0)) throw InvalidArgument("readout window must be positive");
  if (!(power_mW > 0.0)) throw InvalidArgument("readout power must be positive");
  const auto g = build_generator(p, mode == ReadoutMode::OffResonant ? Pump::OffResonant : Pump::ResonantMs0,
                                 power_mW, spin_flip);
  Populations a{}, b{};
  a[G0] = prepared_ms0(polarization, Preparation::ms0);
  a[G1] = 1.0 - a[G0];
  b[G0] = prepared_ms0(polarization, Preparation::ms1);
  b[G1] = 1.0 - b[G0];
  const double bright = integrated_pl(p, g, a, window_ns);
  const double dark = integrated_pl(p, g, b, window_ns);
  if (!(bright > 0.0)) throw InvalidArgument("no PL in the readout window");
  return std::clamp(1.0 - dark / bright, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Spin-flip saturation

struct SaturationFit {
  inference::Estimate R_max;  // kHz
  inference::Estimate P_sat;  // mW
  bool well_constrained = true;
  inference::LsResult ls;
};

inline double saturation_rate(double R_max, double P_sat, double power) { return R_max * power / (power + P_sat); }

/// Least-squares fit of R(P) = R_max·P/(P + P_sat). The fit is marked poorly
/// constrained when the R_max interval is wider than the estimate or P_sat
/// lies beyond twice the largest measured power.
inline SaturationFit saturation_fit(std::span<const double> powers, std::span<const double> rates,
                                    std::span<const double> sigma = {}) {
  const std::size_t n = powers.size();
  if (n < 4 || rates.size() != n) throw InvalidArgument("saturation fit needs at least four (power, rate) points");
  if (!sigma.empty() && sigma.size() != n) throw InvalidArgument("sigma length does not match the data");
  double pmax = 0.0, rmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(powers[i] >= 0.0)) throw InvalidArgument("powers must be non-negative");
    pmax = std::max(pmax, powers[i]);
    rmax = std::max(rmax, rates[i]);
  }
  std::vector<double> p(powers.begin(), powers.end());
  inference::ModelFn model = [p](std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = saturation_rate(x[0], x[1], p[i]);
  };
  std::vector<double> w;
  for (double s : sigma) w.push_back(1.0 / (s * s));
  inference::LsOptions ls;
  ls.lower = {0.0, 1e-9 * std::max(pmax, 1e-9)};
  ls.upper = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  ls.scale_covariance = sigma.empty();
  ls.allow_rank_deficient = true;
  ls.max_iterations = 500;

  SaturationFit best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (double ps : {0.3 * pmax, pmax, 3.0 * pmax}) {
    const std::vector<double> x0{std::max(rmax, 1e-12) * (1.0 + ps / std::max(pmax, 1e-12)), ps};
    auto r = inference::fit_curve(model, rates, w, x0, ls);
    if (r.cost < best_cost) {
      best_cost = r.cost;
      best.ls = r;
    }
  }
  if (!best.ls.converged) throw ConvergenceError("saturation fit did not converge", std::sqrt(best.ls.cost));
  best.R_max = inference::normal_interval(best.ls, 0);
  best.P_sat = inference::normal_interval(best.ls, 1);
  best.well_constrained = !best.ls.rank_deficient && best.R_max.half_width() < best.R_max.value &&
                          best.P_sat.value <= 2.0 * pmax;
  if (!best.well_constrained) {
    // Only the initial slope R_max/P_sat is measured; R_max is bounded below
    // by the largest observed rate and unbounded above.
    best.R_max.lower = std::min(best.R_max.value, rmax);
    best.R_max.upper = std::numeric_limits<double>::infinity();
    best.P_sat.upper = std::numeric_limits<double>::infinity();
  }
  return best;
}

}  // namespace divac::optical
