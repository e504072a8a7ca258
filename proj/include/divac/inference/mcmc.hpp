#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "divac/errors.hpp"
#include "divac/inference/least_squares.hpp"

namespace divac::inference {

struct Prior {
  enum class Kind { uniform, half_normal, normal };
  Kind kind = Kind::uniform;
  double a = 0.0;  // lo | scale | mean
  double b = 1.0;  // hi | -     | sd

  static Prior uniform(double lo, double hi) {
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) throw InvalidArgument("uniform prior needs lo < hi");
    return {Kind::uniform, lo, hi};
  }
  static Prior half_normal(double scale) {
    if (!(scale > 0.0)) throw InvalidArgument("half-normal scale must be positive");
    return {Kind::half_normal, scale, 0.0};
  }
  static Prior normal(double mean, double sd) {
    if (!(sd > 0.0)) throw InvalidArgument("normal prior sd must be positive");
    return {Kind::normal, mean, sd};
  }

  double lower() const {
    switch (kind) {
      case Kind::uniform: return a;
      case Kind::half_normal: return 0.0;
      default: return -std::numeric_limits<double>::infinity();
    }
  }
  double upper() const {
    return kind == Kind::uniform ? b : std::numeric_limits<double>::infinity();
  }
  bool bounded_below() const { return kind != Kind::normal; }

  /// Unnormalized log density; -inf outside the support.
  double log_density(double x) const {
    if (!std::isfinite(x)) return -std::numeric_limits<double>::infinity();
    switch (kind) {
      case Kind::uniform:
        return (x >= a && x <= b) ? 0.0 : -std::numeric_limits<double>::infinity();
      case Kind::half_normal:
        return x >= 0.0 ? -0.5 * (x / a) * (x / a) : -std::numeric_limits<double>::infinity();
      default:
        return -0.5 * ((x - a) / b) * ((x - a) / b);
    }
  }

  std::string describe() const {
    switch (kind) {
      case Kind::uniform: return "uniform(" + std::to_string(a) + ", " + std::to_string(b) + ")";
      case Kind::half_normal: return "half-normal(" + std::to_string(a) + ")";
      default: return "normal(" + std::to_string(a) + ", " + std::to_string(b) + ")";
    }
  }
};

/// Equal-tailed interval from type-7 (linear interpolation) sample quantiles.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline std::pair<double, double> credible_interval(std::span<const double> samples, double level = 0.95) {
  if (samples.size() < 1000) throw InvalidArgument("credible interval needs at least 1000 draws");
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("credible level must lie in (0, 1)");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const double tail = 0.5 * (1.0 - level);
  return {quantile_sorted(s, tail), quantile_sorted(s, 1.0 - tail)};
}

/// True when the draws reach down to the lower support bound and the
/// shortest interval holding `level` of them starts in their lowest 1%, i.e.
/// the posterior piles up against the bound.
inline bool mass_at_lower_edge(std::span<const double> samples, double bound, double level = 0.95) {
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const auto n = s.size();
  if (n == 0) return false;
  if (s[0] - bound > 0.05 * (quantile_sorted(s, level) - bound)) return false;
  const auto k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n)));
  if (k >= n) return true;
  std::size_t best = 0;
  double width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + k < n; ++i) {
    const double w = s[i + k] - s[i];
    if (w < width) width = w, best = i;
  }
  return static_cast<double>(best) <= 0.01 * static_cast<double>(n);
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double unit(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

/// Gelman-Rubin statistic over the halves of each chain.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) continue;
    halves.emplace_back(c.begin(), c.begin() + h);
    halves.emplace_back(c.end() - h, c.end());
  }
  if (halves.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(halves[0].size());
  std::vector<double> means, vars;
  for (const auto& c : halves) {
    double m = 0.0;
    for (double x : c) m += x;
    m /= n;
    double v = 0.0;
    for (double x : c) v += (x - m) * (x - m);
    means.push_back(m);
    vars.push_back(v / (n - 1.0));
  }
  const double k = static_cast<double>(halves.size());
  double mm = 0.0, w = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) mm += means[i], w += vars[i];
  mm /= k;
  w /= k;
  double b = 0.0;
  for (double m : means) b += (m - mm) * (m - mm);
  b *= n / (k - 1.0);
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double vplus = (n - 1.0) / n * w + b / n;
  return std::sqrt(vplus / w);
}

/// Effective sample size from the walker-averaged autocorrelation with
/// automatic windowing (window M ≥ 5·τ).
inline double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t t = chains.empty() ? 0 : chains[0].size();
  const double total = static_cast<double>(t * chains.size());
  if (t < 4) return total;
  std::vector<std::vector<double>> centred;
  for (const auto& c : chains) {
    double m = 0.0;
    for (double x : c) m += x;
    m /= static_cast<double>(t);
    std::vector<double> d(t);
    for (std::size_t i = 0; i < t; ++i) d[i] = c[i] - m;
    centred.push_back(std::move(d));
  }
  auto acov = [&](std::size_t lag) {
    double s = 0.0;
    for (const auto& d : centred)
      for (std::size_t i = 0; i + lag < t; ++i) s += d[i] * d[i + lag];
    return s / static_cast<double>(t * centred.size());
  };
  const double c0 = acov(0);
  if (c0 <= 0.0) return total;
  double tau = 1.0;
  for (std::size_t lag = 1; lag < t / 2; ++lag) {
    tau += 2.0 * acov(lag) / c0;
    if (static_cast<double>(lag) >= 5.0 * tau) break;
  }
  tau = std::max(tau, 1.0);
  return total / tau;
}

}  // namespace detail

struct Posterior {
  std::vector<std::string> names;
  std::vector<Prior> priors;
  std::vector<double> samples;  // draws × parameters, row-major
  std::vector<double> logp;     // per draw
  std::uint64_t seed = 0;
  std::vector<double> rhat;
  std::vector<double> ess;
  double acceptance = 0.0;
  std::size_t n_walkers = 0;
  std::size_t n_steps = 0;

  std::size_t dim() const { return names.size(); }
  std::size_t draws() const { return dim() == 0 ? 0 : samples.size() / dim(); }

  std::vector<double> column(std::size_t i) const {
    std::vector<double> c(draws());
    for (std::size_t d = 0; d < c.size(); ++d) c[d] = samples[d * dim() + i];
    return c;
  }
  std::size_t index(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InvalidArgument("no parameter named " + name);
    return static_cast<std::size_t>(it - names.begin());
  }

  double median(std::size_t i) const {
    auto c = column(i);
    std::sort(c.begin(), c.end());
    return quantile_sorted(c, 0.5);
  }

  /// Median with a 95% interval. Equal-tailed, except that a posterior piled
  /// against a prior's lower bound reports [bound, 95% quantile].
  Estimate estimate(std::size_t i, double level = 0.95) const {
    const auto c = column(i);
    auto [lo, hi] = credible_interval(c, level);
    if (priors.size() == dim() && priors[i].bounded_below() && mass_at_lower_edge(c, priors[i].lower(), level)) {
      std::vector<double> s(c);
      std::sort(s.begin(), s.end());
      lo = priors[i].lower();
      hi = quantile_sorted(s, level);
    }
    return {median(i), lo, hi};
  }
  Estimate estimate(const std::string& name, double level = 0.95) const { return estimate(index(name), level); }

  bool converged(double rhat_max = 1.05, double ess_min = 400.0) const {
    for (std::size_t i = 0; i < dim(); ++i)
      if (!(rhat[i] < rhat_max) || !(ess[i] > ess_min)) return false;
    return true;
  }
};

/// Log-likelihood; the sampler adds the prior terms.
using LogDensityFn = std::function<double(std::span<const double>)>;

/// Ensemble proposal. `stretch` is the affine-invariant stretch move;
/// `differential` mixes in differential-evolution moves (also affine
/// invariant), which decorrelate faster in more than a few dimensions.
enum class Move { stretch, differential };

struct McmcOptions {
  Move move = Move::stretch;
  double stretch_fraction = 0.2;  // share of stretch moves under Move::differential
  std::size_t n_walkers = 32;
  std::size_t n_steps = 2000;
  std::uint64_t seed = 1729;
  double stretch = 2.0;
  /// Per-parameter spread of the initial walker ball (empty => 1e-3·max(1, |init|)).
  std::vector<double> init_scale;
  /// Explicit starting positions (n_walkers × dim, row-major); overrides the ball.
  std::vector<double> init_positions;
  std::vector<std::string> names;
};

/// Affine-invariant ensemble sampler with stretch moves over two
/// half-ensembles. Each walker owns a generator seeded from `seed`, so the
/// result does not depend on evaluation order.
inline Posterior mcmc_sample(const LogDensityFn& log_likelihood, const std::vector<Prior>& priors,
                             std::span<const double> init, const McmcOptions& opt = {}) {
  const std::size_t d = init.size();
  const std::size_t nw = opt.n_walkers;
  if (d == 0) throw InvalidArgument("no parameters to sample");
  if (priors.size() != d) throw InvalidArgument("one prior per parameter required");
  if (nw < 2 * d || nw % 2 != 0) throw InvalidArgument("need an even number of walkers, at least twice the dimension");
  if (opt.n_steps < 2) throw InvalidArgument("need at least two steps");
  if (!(opt.stretch > 1.0)) throw InvalidArgument("stretch scale must exceed 1");

  auto log_post = [&](std::span<const double> x) {
    double lp = 0.0;
    for (std::size_t i = 0; i < d; ++i) lp += priors[i].log_density(x[i]);
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    const double ll = log_likelihood(x);
    return std::isnan(ll) ? -std::numeric_limits<double>::infinity() : lp + ll;
  };

  if (!std::isfinite(log_post(init))) throw InvalidArgument("log-posterior is not finite at the initial point");

  std::vector<std::mt19937_64> rng;
  std::uint64_t state = opt.seed;
  for (std::size_t k = 0; k < nw; ++k) rng.emplace_back(detail::splitmix64(state));

  std::vector<double> pos(nw * d), lp(nw);
  if (!opt.init_positions.empty()) {
    if (opt.init_positions.size() != nw * d) throw InvalidArgument("init_positions must hold n_walkers × dim values");
    pos = opt.init_positions;
    for (std::size_t k = 0; k < nw; ++k) {
      lp[k] = log_post(std::span<const double>(&pos[k * d], d));
      if (!std::isfinite(lp[k])) throw InvalidArgument("log-posterior is not finite at a starting position");
    }
  }
  for (std::size_t k = 0; k < nw && opt.init_positions.empty(); ++k) {
    std::normal_distribution<double> nd;
    double* x = &pos[k * d];
    for (int attempt = 0;; ++attempt) {
      for (std::size_t i = 0; i < d; ++i) {
        const double s = opt.init_scale.empty() ? 1e-3 * std::max(1.0, std::abs(init[i])) : opt.init_scale[i];
        double v = init[i] + s * nd(rng[k]);
        const double lo = priors[i].lower(), hi = priors[i].upper();
        if (v < lo) v = lo + (lo - v);
        if (v > hi) v = hi - (v - hi);
        x[i] = std::clamp(v, lo, hi);
      }
      lp[k] = log_post(std::span<const double>(x, d));
      if (std::isfinite(lp[k])) break;
      if (attempt > 1000) throw InvalidArgument("could not place walkers with finite log-posterior near init");
    }
  }

  const std::size_t keep_from = opt.n_steps / 2;
  const std::size_t kept = opt.n_steps - keep_from;
  Posterior post;
  post.names = opt.names;
  if (post.names.empty())
    for (std::size_t i = 0; i < d; ++i) post.names.push_back("x" + std::to_string(i));
  post.priors = priors;
  post.seed = opt.seed;
  post.n_walkers = nw;
  post.n_steps = opt.n_steps;
  post.samples.reserve(kept * nw * d);
  post.logp.reserve(kept * nw);

  const double a = opt.stretch;
  const std::size_t half = nw / 2;
  std::size_t accepted = 0;
  std::vector<double> prop(d);
  for (std::size_t step = 0; step < opt.n_steps; ++step) {
    for (std::size_t s = 0; s < 2; ++s) {
      const std::size_t first = s * half, other = (1 - s) * half;
      for (std::size_t k = first; k < first + half; ++k) {
        auto& g = rng[k];
        double log_ratio = 0.0;
        const bool use_stretch = opt.move == Move::stretch || detail::unit(g) < opt.stretch_fraction;
        if (use_stretch) {
          const std::size_t j = other + static_cast<std::size_t>(detail::unit(g) * static_cast<double>(half));
          const double u = (a - 1.0) * detail::unit(g) + 1.0;
          const double z = u * u / a;
          for (std::size_t i = 0; i < d; ++i) prop[i] = pos[j * d + i] + z * (pos[k * d + i] - pos[j * d + i]);
          log_ratio = (static_cast<double>(d) - 1.0) * std::log(z);
        } else {
          // x + γ (x_a − x_b) with a ≠ b from the other half; γ = 1 now and then for mode jumps.
          const std::size_t ia = other + static_cast<std::size_t>(detail::unit(g) * static_cast<double>(half));
          std::size_t ib = other + static_cast<std::size_t>(detail::unit(g) * static_cast<double>(half - 1));
          if (ib >= ia) ++ib;
          const double gamma = detail::unit(g) < 0.1 ? 1.0 : 2.38 / std::sqrt(2.0 * static_cast<double>(d));
          const double jitter = 1.0 + 1e-4 * (2.0 * detail::unit(g) - 1.0);
          for (std::size_t i = 0; i < d; ++i)
            prop[i] = pos[k * d + i] + gamma * jitter * (pos[ia * d + i] - pos[ib * d + i]);
        }
        const double lnew = log_post(prop);
        log_ratio += lnew - lp[k];
        const double r = detail::unit(g);
        if (std::isfinite(lnew) && std::log(r) < log_ratio) {
          std::copy(prop.begin(), prop.end(), pos.begin() + static_cast<std::ptrdiff_t>(k * d));
          lp[k] = lnew;
          if (step >= keep_from) ++accepted;
        }
      }
    }
    if (step >= keep_from) {
      post.samples.insert(post.samples.end(), pos.begin(), pos.end());
      post.logp.insert(post.logp.end(), lp.begin(), lp.end());
    }
  }

  post.acceptance = static_cast<double>(accepted) / static_cast<double>(kept * nw);
  if (post.acceptance < 0.01)
    throw ConvergenceError("ensemble sampler stuck: acceptance fraction below 1%", post.acceptance,
                           "acceptance fraction");

  for (std::size_t i = 0; i < d; ++i) {
    std::vector<std::vector<double>> chains(nw, std::vector<double>(kept));
    for (std::size_t t = 0; t < kept; ++t)
      for (std::size_t k = 0; k < nw; ++k) chains[k][t] = post.samples[(t * nw + k) * d + i];
    post.rhat.push_back(detail::split_rhat(chains));
    post.ess.push_back(detail::effective_sample_size(chains));
  }
  return post;
}

}  // namespace divac::inference
