#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "divac/errors.hpp"
#include "divac/excited.hpp"
#include "divac/inference/assignment.hpp"
#include "divac/inference/least_squares.hpp"
#include "divac/inference/mcmc.hpp"

namespace divac::inference {

struct ObservedLine {
  double frequency_THz = 0.0;
  double sigma_MHz = 10.0;
  bool microwave_on = true;
};

struct DefectRecord {
  std::string id;
  excited::Form form = excited::Form::kk;
  std::vector<ObservedLine> lines;
};

struct EnsemblePleDataset {
  std::vector<DefectRecord> defects;

  void validate() const {
    if (defects.empty()) throw InvalidArgument("PLE dataset has no defects");
    for (const auto& d : defects) {
      if (d.lines.size() < 2 || d.lines.size() > 6)
        throw InvalidArgument("defect " + d.id + ": needs 2 to 6 lines");
      std::size_t off = 0;
      for (const auto& l : d.lines) {
        if (!std::isfinite(l.frequency_THz) || !(l.frequency_THz > 0.0))
          throw InvalidArgument("defect " + d.id + ": line frequency must be finite and positive");
        if (!(l.sigma_MHz >= 1.0)) throw InvalidArgument("defect " + d.id + ": line sigma must be at least 1 MHz");
        off += l.microwave_on ? 0 : 1;
      }
      if (off > 2) throw InvalidArgument("defect " + d.id + ": more than two microwave-off lines");
    }
  }
};

/// Priors over (lambda_z, D_es, Delta1, Delta2, zpl offset from nominal, per-defect strain), GHz.
struct PlePriors {
  Prior lambda_z = Prior::uniform(0.0, 30.0);
  Prior D_es = Prior::uniform(0.0, 30.0);
  Prior Delta1 = Prior::uniform(0.0, 5.0);
  Prior Delta2 = Prior::half_normal(0.2);
  Prior zpl_offset = Prior::uniform(-50.0, 50.0);
  Prior delta = Prior::uniform(0.0, 100.0);

  PlePriors scaled(double f) const {
    auto s = [f](Prior p) {
      p.a *= f;
      if (p.kind != Prior::Kind::half_normal) p.b *= f;
      return p;
    };
    return {s(lambda_z), s(D_es), s(Delta1), s(Delta2), s(zpl_offset), s(delta)};
  }
};

/// How unlabeled lines enter the likelihood: the single best matching, or a
/// sum over all matchings (unbiased when lines overlap within their σ).
enum class LineMatching { optimal, marginal };

struct PleFitOptions {
  std::optional<double> zpl_THz;       // nominal ZPL, default from the form preset
  std::optional<double> D_ground_GHz;  // default from the form preset
  PlePriors priors;
  std::size_t n_walkers = 0;  // 0 => 2·dim + 2
  std::size_t n_steps = 5000;
  std::uint64_t seed = 1729;
  Move move = Move::differential;
  LineMatching matching = LineMatching::optimal;
  bool sample = true;  // false => point estimate only
};

inline constexpr std::size_t kSharedPleParams = 5;

inline std::vector<std::string> ple_parameter_names(const std::vector<std::string>& defect_ids) {
  std::vector<std::string> n{"lambda_z", "D_es", "Delta1", "Delta2", "zpl_offset"};
  for (const auto& id : defect_ids) n.push_back("delta_" + id);
  return n;
}

namespace detail {

struct PleProblem {
  std::vector<const DefectRecord*> defects;
  double zpl_THz = 0.0;
  double Dg = 0.0;
  std::vector<Prior> priors;
  std::size_t n_lines = 0;
  LineMatching matching = LineMatching::optimal;

  std::size_t dim() const { return kSharedPleParams + defects.size(); }

  static excited::ExcitedStateParams shared(std::span<const double> x) { return {x[0], x[1], x[2], x[3]}; }

  /// Line offsets from the shifted ZPL in GHz, with per-line σ (GHz).
  void deviations(const DefectRecord& d, double zpl_shift, std::vector<double>& dev,
                  std::vector<double>& sig) const {
    dev.resize(d.lines.size());
    sig.resize(d.lines.size());
    for (std::size_t j = 0; j < d.lines.size(); ++j) {
      dev[j] = (d.lines[j].frequency_THz - zpl_THz) * 1e3 - zpl_shift;
      sig[j] = d.lines[j].sigma_MHz * 1e-3;
    }
  }

  /// Minimum-χ² matching of one defect's lines onto the six predicted ones.
  /// Microwave-off lines can only be mS=0-dominant transitions.
  std::vector<std::size_t> assign(const DefectRecord& d, const excited::FastLines& f, double zpl_shift,
                                  double* chi2) const {
    std::vector<double> dev, sig;
    deviations(d, zpl_shift, dev, sig);
    const std::size_t n = d.lines.size();
    std::vector<double> cost(n * 6);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < 6; ++k) {
        const double r = (dev[j] - f.offset_GHz[k]) / sig[j];
        cost[j * 6 + k] = (!d.lines[j].microwave_on && !f.ms0_dominant[k]) ? 1e300 : r * r;
      }
    const auto a = optimal_assignment(cost, n, 6);
    if (chi2) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += cost[j * 6 + a[j]];
      *chi2 = s;
    }
    return a;
  }

  double log_likelihood(std::span<const double> x) const {
    const auto p = shared(x);
    double total = 0.0;
    double cost[36];
    for (std::size_t i = 0; i < defects.size(); ++i) {
      const auto f = excited::ple_offsets(p, x[kSharedPleParams + i], Dg);
      // Microwave-off rows first so forbidden pairings prune the search.
      const auto& lines = defects[i]->lines;
      std::size_t row = 0;
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& l : lines) {
          if (l.microwave_on != (pass == 1)) continue;
          const double dev = (l.frequency_THz - zpl_THz) * 1e3 - x[4];
          const double sig = l.sigma_MHz * 1e-3;
          for (std::size_t k = 0; k < 6; ++k) {
            const double r = (dev - f.offset_GHz[k]) / sig;
            cost[row * 6 + k] =
                (!l.microwave_on && !f.ms0_dominant[k]) ? std::numeric_limits<double>::infinity() : r * r;
          }
          ++row;
        }
      total += matching == LineMatching::optimal ? -0.5 * min_assignment_cost(cost, lines.size(), 6)
                                                 : log_sum_assignments(cost, lines.size(), 6);
    }
    return total;
  }
};

}  // namespace detail

struct PleEnsembleFit {
  excited::Form form = excited::Form::kk;
  double zpl_nominal_THz = 0.0;
  double D_ground_GHz = 0.0;
  std::vector<std::string> defect_ids;
  std::vector<std::string> names;
  std::vector<double> map;  // least-squares optimum including the prior terms
  LsResult ls;
  std::optional<Posterior> posterior;
  bool converged = false;

  std::size_t index(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InvalidArgument("no parameter named " + name);
    return static_cast<std::size_t>(it - names.begin());
  }

  /// Posterior median with its 95% credible interval, or the least-squares
  /// estimate with a normal interval when sampling was skipped.
  Estimate estimate(const std::string& name) const {
    const std::size_t i = index(name);
    if (posterior) return posterior->estimate(i);
    return normal_interval(ls, i);
  }

  std::vector<double> point() const {
    if (!posterior) return map;
    std::vector<double> m(names.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = posterior->median(i);
    return m;
  }
};

/// Predicted frequency (THz) for each observed line of `d` at strain `delta`
/// under the best matching.
inline std::vector<double> predicted_frequencies(const DefectRecord& d, const excited::ExcitedStateParams& p,
                                                 double delta, double zpl_THz, double D_ground_GHz) {
  detail::PleProblem prob;
  prob.zpl_THz = zpl_THz;
  prob.Dg = D_ground_GHz;
  const auto f = excited::ple_offsets(p, delta, D_ground_GHz);
  const auto a = prob.assign(d, f, 0.0, nullptr);
  std::vector<double> out(d.lines.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = zpl_THz + f.offset_GHz[a[j]] * 1e-3;
  return out;
}

/// Global Bayesian fit of one defect form's PLE lines. Shared fine-structure
/// parameters plus a ZPL shift; per-defect transverse strain as nuisance.
inline PleEnsembleFit fit_ple_ensemble(const EnsemblePleDataset& data, excited::Form form,
                                       const PleFitOptions& opt = {}) {
  data.validate();
  const auto pre = excited::preset(form);
  detail::PleProblem prob;
  prob.zpl_THz = opt.zpl_THz.value_or(pre.zpl_THz);
  prob.Dg = opt.D_ground_GHz.value_or(pre.D_ground_GHz);
  prob.matching = opt.matching;
  if (!(prob.Dg >= 0.0) || !std::isfinite(prob.zpl_THz)) throw InvalidArgument("bad nominal ZPL or ground splitting");

  PleEnsembleFit fit;
  fit.form = form;
  fit.zpl_nominal_THz = prob.zpl_THz;
  fit.D_ground_GHz = prob.Dg;
  for (const auto& d : data.defects)
    if (d.form == form) {
      prob.defects.push_back(&d);
      prob.n_lines += d.lines.size();
      fit.defect_ids.push_back(d.id);
    }
  if (prob.defects.empty()) throw InvalidArgument("no defects of form " + excited::form_name(form) + " in dataset");
  fit.names = ple_parameter_names(fit.defect_ids);
  const std::size_t dim = prob.dim();
  const auto& pr = opt.priors;
  prob.priors = {pr.lambda_z, pr.D_es, pr.Delta1, pr.Delta2, pr.zpl_offset};
  for (std::size_t i = 0; i < prob.defects.size(); ++i) prob.priors.push_back(pr.delta);
  if (prob.n_lines + 1 < dim)
    throw NonIdentifiableError("PLE ensemble under-identified: " + std::to_string(prob.n_lines) + " lines for " +
                               std::to_string(dim) + " parameters");

  auto clamp_to = [&](std::size_t i, double v) {
    return std::clamp(v, prob.priors[i].lower(), std::min(prob.priors[i].upper(), 1e300));
  };

  // Strain and ZPL shift from the microwave-off (mS=0) pair: Ex − Ey = 2δ.
  std::vector<double> x(dim, 0.0);
  double shift_sum = 0.0;
  int shift_n = 0;
  for (std::size_t i = 0; i < prob.defects.size(); ++i) {
    std::vector<double> off;
    for (const auto& l : prob.defects[i]->lines)
      if (!l.microwave_on) off.push_back((l.frequency_THz - prob.zpl_THz) * 1e3);
    double delta = 0.0;
    if (off.size() == 2) {
      delta = 0.5 * std::abs(off[0] - off[1]);
      shift_sum += 0.5 * (off[0] + off[1]);
      ++shift_n;
    }
    x[kSharedPleParams + i] = clamp_to(kSharedPleParams + i, delta);
  }
  x[4] = clamp_to(4, shift_n > 0 ? shift_sum / shift_n : 0.0);
  x[2] = clamp_to(2, 0.5 * (pr.Delta1.lower() + std::min(pr.Delta1.upper(), 1.0)));
  x[3] = 0.0;

  // Coarse grid over (lambda_z, D_es) on the prior ranges.
  {
    const int nl = 60, nd = 25;
    const double l0 = pr.lambda_z.lower(), l1 = std::min(pr.lambda_z.upper(), 1e6);
    const double d0 = pr.D_es.lower(), d1 = std::min(pr.D_es.upper(), 1e6);
    const double d_hi = d0 + (d1 - d0) / 6.0;  // fine-structure D_es lies well below the λ range
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> trial = x;
    for (int a = 1; a <= nl; ++a)
      for (int b = 1; b <= nd; ++b) {
        trial[0] = l0 + (l1 - l0) * a / nl;
        trial[1] = d0 + (d_hi - d0) * b / nd;
        const double ll = prob.log_likelihood(trial);
        if (-ll < best) best = -ll, x[0] = trial[0], x[1] = trial[1];
      }
  }

  // Least squares with the matching held fixed per run; Gaussian-prior terms
  // enter as extra residuals.
  std::vector<double> lower(dim), upper(dim);
  for (std::size_t i = 0; i < dim; ++i) lower[i] = prob.priors[i].lower(), upper[i] = prob.priors[i].upper();
  lower[0] = std::max(lower[0], 1e-9 * std::max(1.0, upper[0]));  // the model needs lambda_z > 0
  LsOptions lso;
  lso.lower = lower;
  lso.upper = upper;
  lso.allow_rank_deficient = true;
  lso.fd_min_step.assign(dim, 1e-7 * std::max(1.0, pr.lambda_z.upper() / 30.0));
  std::vector<std::size_t> prior_rows;
  for (std::size_t i = 0; i < dim; ++i)
    if (prob.priors[i].kind != Prior::Kind::uniform) prior_rows.push_back(i);
  const std::size_t m = prob.n_lines + prior_rows.size();

  // Each line keeps its (eigenstate, ground manifold) pair between rematches,
  // so residuals stay continuous where the mS=0 character changes hands.
  std::vector<std::vector<std::size_t>> matching(prob.defects.size());
  std::vector<std::vector<double>> manifold(prob.defects.size());
  auto rematch = [&](std::span<const double> at) {
    bool changed = false;
    const auto p = detail::PleProblem::shared(at);
    for (std::size_t i = 0; i < prob.defects.size(); ++i) {
      const auto f = excited::ple_offsets(p, at[kSharedPleParams + i], prob.Dg);
      auto a = prob.assign(*prob.defects[i], f, at[4], nullptr);
      std::vector<double> g(a.size());
      for (std::size_t j = 0; j < a.size(); ++j) g[j] = f.ms0_dominant[a[j]] ? 0.0 : 1.0;
      changed = changed || a != matching[i] || g != manifold[i];
      matching[i] = std::move(a);
      manifold[i] = std::move(g);
    }
    return changed;
  };
  ResidualFn residual = [&](std::span<const double> at, std::span<double> r) {
    const auto p = detail::PleProblem::shared(at);
    std::size_t row = 0;
    std::vector<double> dev, sig;
    for (std::size_t i = 0; i < prob.defects.size(); ++i) {
      const auto& d = *prob.defects[i];
      const auto f = excited::ple_offsets(p, at[kSharedPleParams + i], prob.Dg);
      prob.deviations(d, at[4], dev, sig);
      for (std::size_t j = 0; j < d.lines.size(); ++j) {
        const std::size_t k = matching[i][j];
        const double offset = f.offset_GHz[k] + (f.ms0_dominant[k] ? 0.0 : prob.Dg) - manifold[i][j] * prob.Dg;
        r[row++] = (dev[j] - offset) / sig[j];
      }
    }
    for (std::size_t k : prior_rows) {
      const auto& q = prob.priors[k];
      r[row++] = q.kind == Prior::Kind::half_normal ? at[k] / q.a : (at[k] - q.a) / q.b;
    }
  };

  rematch(x);
  LsResult best;
  for (int round = 0; round < 8; ++round) {
    best = least_squares(residual, m, x, lso);
    x = best.x;
    if (!rematch(x)) break;
  }
  fit.ls = best;
  fit.map = best.x;

  // Shared parameters the lines leave as unconstrained as the prior are reported.
  for (std::size_t i : {std::size_t{0}, std::size_t{1}, std::size_t{2}, std::size_t{4}}) {
    const double width = prob.priors[i].upper() - prob.priors[i].lower();
    const double sd = best.stddev(i);
    if (best.rank_deficient || !(sd < 0.25 * width)) {
      std::vector<double> dir = best.null_direction;
      if (dir.empty()) {
        dir.assign(dim, 0.0);
        dir[i] = 1.0;
      }
      std::string what = "PLE ensemble under-identified: the lines do not constrain";
      for (std::size_t k = 0; k < dim; ++k)
        if (std::abs(dir[k]) > 0.1) what += " " + fit.names[k];
      throw NonIdentifiableError(what, dir);
    }
  }

  if (!opt.sample) return fit;

  McmcOptions mo;
  mo.n_walkers = opt.n_walkers ? opt.n_walkers : 2 * dim + 2;
  if (mo.n_walkers % 2) ++mo.n_walkers;
  mo.n_steps = opt.n_steps;
  mo.seed = opt.seed;
  mo.move = opt.move;
  mo.names = fit.names;
  // Walkers start from the Laplace approximation around the optimum.
  {
    const auto eig = linalg::symmetric_eigensystem(best.covariance, dim);
    std::mt19937_64 g(opt.seed ^ 0x5EEDULL);
    std::normal_distribution<double> nd;
    std::vector<double> z(dim);
    mo.init_positions.resize(mo.n_walkers * dim);
    for (std::size_t k = 0; k < mo.n_walkers; ++k) {
      for (int attempt = 0;; ++attempt) {
        for (auto& v : z) v = nd(g);
        bool ok = true;
        for (std::size_t i = 0; i < dim; ++i) {
          double v = x[i];
          for (std::size_t c = 0; c < dim; ++c)
            v += eig.vectors[i * dim + c] * std::sqrt(std::max(eig.values[c], 0.0)) * z[c];
          const double lo = prob.priors[i].lower(), hi = prob.priors[i].upper();
          if (v < lo) v = lo + (lo - v);
          if (v > hi) v = hi - (v - hi);
          ok = ok && v >= lo && v <= hi;
          mo.init_positions[k * dim + i] = v;
        }
        if (ok && std::isfinite(prob.log_likelihood(std::span<const double>(&mo.init_positions[k * dim], dim)))) break;
        if (attempt > 100) throw ConvergenceError("could not place walkers around the optimum", best.cost, "cost");
      }
    }
  }
  fit.posterior = mcmc_sample([&prob](std::span<const double> v) { return prob.log_likelihood(v); }, prob.priors,
                              x, mo);
  fit.converged = fit.posterior->converged();
  return fit;
}

/// Synthetic ensemble: six lines per defect (the mS=0 pair flagged
/// microwave-off), Gaussian noise of `noise_MHz` on every line.
inline EnsemblePleDataset synthesize_ple_ensemble(excited::Form form, const excited::ExcitedStateParams& p,
                                                  double zpl_THz, double D_ground_GHz,
                                                  std::span<const double> strains, double noise_MHz,
                                                  std::uint64_t seed, std::size_t lines_per_defect = 6) {
  if (lines_per_defect < 2 || lines_per_defect > 6) throw InvalidArgument("2 to 6 lines per defect");
  std::mt19937_64 g(seed);
  std::normal_distribution<double> nd;
  EnsemblePleDataset out;
  for (std::size_t i = 0; i < strains.size(); ++i) {
    const auto f = excited::ple_offsets(p, strains[i], D_ground_GHz);
    DefectRecord d;
    d.id = std::to_string(i + 1);
    d.form = form;
    std::vector<ObservedLine> on;
    for (std::size_t k = 0; k < 6; ++k) {
      ObservedLine l;
      l.frequency_THz = zpl_THz + (f.offset_GHz[k] + noise_MHz * 1e-3 * nd(g)) * 1e-3;
      l.sigma_MHz = std::max(noise_MHz, 1.0);
      l.microwave_on = !f.ms0_dominant[k];
      (l.microwave_on ? on : d.lines).push_back(l);
    }
    for (std::size_t k = 0; k + 2 < lines_per_defect; ++k) d.lines.push_back(on[k]);
    out.defects.push_back(std::move(d));
  }
  return out;
}

/// Strains spread over [lo, hi] GHz, drawn uniformly from the seed.
inline std::vector<double> random_strains(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> s(n);
  for (auto& v : s) v = u(g);
  return s;
}

}  // namespace divac::inference
