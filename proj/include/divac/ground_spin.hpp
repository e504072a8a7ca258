#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "divac/errors.hpp"
#include "divac/inference/assignment.hpp"
#include "divac/inference/least_squares.hpp"
#include "divac/linalg.hpp"
#include "divac/spectrum.hpp"

namespace divac::ground {

using linalg::ComplexMatrix;
using inference::Estimate;

inline constexpr double kGammaElectron = 2.8025;  // MHz/G
inline constexpr double kGammaC13 = 1.0705;       // kHz/G
inline constexpr double kGammaSi29 = -0.8465;     // kHz/G
inline constexpr double kDefaultD = 1.336;        // GHz

struct GroundStateParams {
  double D = kDefaultD;              // GHz
  double gamma_e = kGammaElectron;   // MHz/G
  double B_mag = 0.0;                // G
  double B_theta = 0.0;              // deg from the symmetry axis
  double B_phi = 0.0;                // deg

  void validate() const {
    if (!(D > 0.0)) throw InvalidArgument("zero-field splitting D must be positive");
    if (!(B_mag >= 0.0)) throw InvalidArgument("field magnitude must be non-negative");
    if (!(B_theta >= 0.0 && B_theta <= 180.0)) throw InvalidArgument("field polar angle must lie in [0, 180] deg");
    if (!std::isfinite(gamma_e) || !std::isfinite(B_phi)) throw NonFiniteError("non-finite ground-state parameter");
  }
};

enum class Nucleus { C13_I, Si29_IIa, Si29_IIb };

inline std::string nucleus_name(Nucleus n) {
  switch (n) {
    case Nucleus::C13_I: return "13C-I";
    case Nucleus::Si29_IIa: return "29Si-IIa";
    case Nucleus::Si29_IIb: return "29Si-IIb";
  }
  return "?";
}

inline Nucleus parse_nucleus(const std::string& s) {
  if (s == "13C-I" || s == "13C") return Nucleus::C13_I;
  if (s == "29Si-IIa") return Nucleus::Si29_IIa;
  if (s == "29Si-IIb") return Nucleus::Si29_IIb;
  throw InvalidArgument("unknown nucleus label '" + s + "'");
}

inline double default_gamma_n(Nucleus n) { return n == Nucleus::C13_I ? kGammaC13 : kGammaSi29; }

struct HyperfineTensor {
  double Axx = 0.0;    // MHz
  double Ayy = 0.0;    // MHz
  double Azz = 0.0;    // MHz
  double theta = 0.0;  // deg, tilt about the defect-frame y axis
  Nucleus nucleus = Nucleus::C13_I;
  double gamma_n = kGammaC13;  // kHz/G
  bool tied = false;           // Ayy constrained to Axx

  void validate() const {
    if (!(theta >= 0.0 && theta <= 90.0)) throw InvalidArgument("hyperfine tilt must lie in [0, 90] deg");
    if (tied && Ayy != Axx) throw InvalidArgument("tied hyperfine tensor requires Ayy == Axx");
    for (double v : {Axx, Ayy, Azz, gamma_n})
      if (!std::isfinite(v)) throw NonFiniteError("non-finite hyperfine parameter");
  }
};

inline HyperfineTensor make_tensor(Nucleus n, double axx, double ayy, double azz, double theta, bool tied = false) {
  return {axx, ayy, azz, theta, n, default_gamma_n(n), tied};
}

/// Reference tensors from the published table (MHz, deg).
inline HyperfineTensor theory_tensor(Nucleus n) {
  switch (n) {
    case Nucleus::C13_I: return make_tensor(n, 51.3, 52.0, 122.2, 72.6);
    case Nucleus::Si29_IIa: return make_tensor(n, 9.1, 9.9, 7.7, 68.5);
    case Nucleus::Si29_IIb: return make_tensor(n, 11.4, 11.4, 11.8, 50.1);
  }
  throw InvalidArgument("unknown nucleus");
}

/// Experimental reconstructions; only 13C-I and 29Si-IIa were measured.
inline HyperfineTensor experimental_tensor(Nucleus n) {
  switch (n) {
    case Nucleus::C13_I: return make_tensor(n, 49.5, 49.5, 108.5, 72.3, true);
    case Nucleus::Si29_IIa: return make_tensor(n, 8.7, 8.7, 9.5, 47.0, true);
    default: throw InvalidArgument("no experimental tensor for " + nucleus_name(n));
  }
}

/// Reported uncertainties (Axx, Azz, theta) of the experimental tensors.
inline std::array<double, 3> experimental_uncertainty(Nucleus n) {
  if (n == Nucleus::C13_I) return {4.5, 3.6, 4.3};
  if (n == Nucleus::Si29_IIa) return {1.0, 1.0, 34.0};
  throw InvalidArgument("no experimental tensor for " + nucleus_name(n));
}

inline double deg(double d) { return d * std::numbers::pi / 180.0; }

/// Field vector in the defect frame, G.
inline std::array<double, 3> field_vector(const GroundStateParams& p) {
  const double t = deg(p.B_theta), f = deg(p.B_phi);
  return {p.B_mag * std::sin(t) * std::cos(f), p.B_mag * std::sin(t) * std::sin(f), p.B_mag * std::cos(t)};
}

/// Cartesian hyperfine matrix R_y(θ) diag(Axx, Ayy, Azz) R_y(θ)ᵀ, MHz.
inline std::array<std::array<double, 3>, 3> hyperfine_matrix(const HyperfineTensor& hf) {
  const double c = std::cos(deg(hf.theta)), s = std::sin(deg(hf.theta));
  const double r[3][3] = {{c, 0, s}, {0, 1, 0}, {-s, 0, c}};
  const double d[3] = {hf.Axx, hf.Ayy, hf.Azz};
  std::array<std::array<double, 3>, 3> a{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) a[i][j] += r[i][k] * d[k] * r[j][k];
  return a;
}

/// Magnitude of the z-column of the rotated tensor, MHz.
inline double effective_az(const HyperfineTensor& hf) {
  const double t = deg(hf.theta);
  return std::hypot(hf.Azz * std::cos(t), hf.Axx * std::sin(t));
}

/// Ground-state Hamiltonian in GHz. Basis |mS⟩ (+1, 0, −1), or |mS⟩⊗|mI⟩
/// (mI = +1/2, −1/2) with a nucleus. `secular` keeps only the part diagonal
/// in mS (drops transverse electron Zeeman and S±-containing hyperfine terms).
inline ComplexMatrix gs_hamiltonian(const GroundStateParams& p, const std::optional<HyperfineTensor>& hf = std::nullopt,
                                    bool secular = false) {
  p.validate();
  const auto s = linalg::spin1_operators();
  const auto b = field_vector(p);
  const double ge = p.gamma_e * 1e-3;  // GHz/G
  ComplexMatrix he = (s.z * s.z - ComplexMatrix::identity(3) * cplx{2.0 / 3.0}) * cplx{p.D};
  he += s.z * cplx{ge * b[2]};
  if (!secular) he += s.x * cplx{ge * b[0]} + s.y * cplx{ge * b[1]};
  if (!hf) return he;

  hf->validate();
  const auto i = linalg::spin_half_operators();
  const auto a = hyperfine_matrix(*hf);
  const std::array<const ComplexMatrix*, 3> sv{&s.x, &s.y, &s.z};
  const std::array<const ComplexMatrix*, 3> iv{&i.x, &i.y, &i.z};
  ComplexMatrix h = linalg::kron(he, ComplexMatrix::identity(2));
  for (int r = 0; r < 3; ++r) {
    if (secular && r != 2) continue;
    for (int c = 0; c < 3; ++c) {
      if (a[r][c] == 0.0) continue;
      h += linalg::kron(*sv[r], *iv[c]) * cplx{a[r][c] * 1e-3};
    }
  }
  const double gn = hf->gamma_n * 1e-6;  // GHz/G
  for (int c = 0; c < 3; ++c) {
    if (b[c] == 0.0) continue;
    h -= linalg::kron(ComplexMatrix::identity(3), *iv[c]) * cplx{gn * b[c]};
  }
  return h;
}

struct Transition {
  double frequency = 0.0;  // GHz
  double strength = 0.0;   // |⟨i|Sx|j⟩|², unnormalized
  int branch = 0;          // +1 or −1 for the mS=±1 partner; 0 when merged from both
  int multiplicity = 1;
};

/// All mS=0 ↔ mS=±1 transitions between eigenstates (unmerged, unnormalized).
inline std::vector<Transition> odmr_transitions(const GroundStateParams& p,
                                                const std::optional<HyperfineTensor>& hf = std::nullopt,
                                                bool secular = false) {
  const auto h = gs_hamiltonian(p, hf, secular);
  const auto es = linalg::hermitian_eigensystem(h);
  const std::size_t n = h.dim();
  const std::size_t nn = n / 3;
  const auto s = linalg::spin1_operators();
  const auto sx = hf ? linalg::kron(s.x, ComplexMatrix::identity(2)) : s.x;

  std::vector<int> kind(n);  // 0 for mS=0-dominant, ±1 otherwise
  for (std::size_t k = 0; k < n; ++k) {
    double w[3] = {0, 0, 0};
    for (std::size_t e = 0; e < 3; ++e)
      for (std::size_t m = 0; m < nn; ++m) w[e] += std::norm(es.vectors(e * nn + m, k));
    kind[k] = w[1] > 0.5 ? 0 : (w[0] >= w[2] ? +1 : -1);
  }
  std::vector<Transition> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (kind[i] != 0) continue;
    const auto vi = es.vector(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (kind[j] == 0) continue;
      const auto vj = es.vector(j);
      const double str = std::norm(linalg::expectation(vi, sx, vj));
      out.push_back({std::abs(es.values[j] - es.values[i]), str, kind[j], 1});
    }
  }
  std::sort(out.begin(), out.end(), [](const Transition& a, const Transition& b) {
    return std::tie(a.frequency, a.branch) < std::tie(b.frequency, b.branch);
  });
  return out;
}

/// ODMR line list: coincident lines (within 1e-9 GHz) merged with their
/// multiplicity, strengths normalized to a maximum of 1, negligible lines
/// (relative strength < 1e-9) dropped.
inline std::vector<Transition> odmr_lines(const GroundStateParams& p,
                                          const std::optional<HyperfineTensor>& hf = std::nullopt,
                                          bool secular = false) {
  const auto raw = odmr_transitions(p, hf, secular);
  std::vector<Transition> merged;
  for (const auto& t : raw) {
    if (!merged.empty() && std::abs(t.frequency - merged.back().frequency) <= 1e-9) {
      auto& m = merged.back();
      m.strength += t.strength;
      m.multiplicity += 1;
      if (m.branch != t.branch) m.branch = 0;
    } else {
      merged.push_back(t);
    }
  }
  double mx = 0.0;
  for (const auto& m : merged) mx = std::max(mx, m.strength);
  std::vector<Transition> out;
  for (auto m : merged) {
    m.strength = mx > 0.0 ? m.strength / mx : 0.0;
    if (m.strength >= 1e-9) out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hyperfine fitting

struct OdmrRecord {
  double B_G = 0.0;
  double theta_deg = 0.0;
  double phi_deg = 0.0;
  int branch = -1;         // +1 or −1
  double freq_GHz = 0.0;
  double sigma_MHz = 1.0;
};

enum class TieMode { Tied, Free, Auto };

struct HyperfineFitOptions {
  TieMode tie = TieMode::Auto;
  double D = kDefaultD;
  double gamma_e = kGammaElectron;
  Nucleus nucleus = Nucleus::C13_I;
  std::optional<double> gamma_n;               // defaults per nucleus
  std::optional<HyperfineTensor> init;         // defaults to the theory tensor
  double min_strength = 0.01;                  // lines weaker than this (relative) are not assignable
  double auto_tie_fraction = 0.25;             // Auto ties Ayy when its half-width exceeds this·|Axx|
};

struct HyperfineFit {
  HyperfineTensor tensor;
  Estimate Axx, Ayy, Azz, theta;
  bool tied = false;
  double chi2 = 0.0;
  std::size_t records = 0;
};

namespace detail {

struct Setting {
  double B, theta, phi;
  auto key() const { return std::tie(B, theta, phi); }
};

using GroupKey = std::tuple<double, double, double, int>;

inline std::map<GroupKey, std::vector<std::size_t>> group_records(std::span<const OdmrRecord> data) {
  std::map<GroupKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i)
    groups[{data[i].B_G, data[i].theta_deg, data[i].phi_deg, data[i].branch}].push_back(i);
  return groups;
}

/// Transitions of one branch at one setting, ascending in frequency, with
/// strengths relative to the strongest line of the whole spectrum.
inline std::vector<Transition> branch_transitions(const GroupKey& key, const HyperfineTensor& hf,
                                                  const HyperfineFitOptions& opt) {
  GroundStateParams p;
  p.D = opt.D;
  p.gamma_e = opt.gamma_e;
  p.B_mag = std::get<0>(key);
  p.B_theta = std::get<1>(key);
  p.B_phi = std::get<2>(key);
  const auto t = odmr_transitions(p, hf);
  double mx = 0.0;
  for (const auto& x : t) mx = std::max(mx, x.strength);
  std::vector<Transition> out;
  for (auto x : t) {
    if (x.branch != std::get<3>(key)) continue;
    x.strength /= mx;
    out.push_back(x);
  }
  if (out.empty()) throw InvalidArgument("no transitions in the requested branch");
  return out;
}

/// For each record, the index of its line within branch_transitions() of
/// its group: optimal matching onto the allowed (strong enough) lines.
inline std::vector<std::size_t> assign_records(std::span<const OdmrRecord> data, const HyperfineTensor& hf,
                                               const HyperfineFitOptions& opt) {
  std::vector<std::size_t> line(data.size(), 0);
  for (const auto& [key, idx] : group_records(data)) {
    const auto t = branch_transitions(key, hf, opt);
    std::vector<std::size_t> allowed;
    for (std::size_t k = 0; k < t.size(); ++k)
      if (t[k].strength >= opt.min_strength) allowed.push_back(k);
    if (allowed.empty()) throw InvalidArgument("no allowed transitions in the requested branch");
    const std::size_t n = idx.size(), m = allowed.size();
    if (n <= m) {
      std::vector<double> cost(n * m);
      for (std::size_t a = 0; a < n; ++a) {
        const auto& r = data[idx[a]];
        for (std::size_t b = 0; b < m; ++b) {
          const double z = (r.freq_GHz - t[allowed[b]].frequency) * 1e3 / r.sigma_MHz;
          cost[a * m + b] = z * z;
        }
      }
      const auto asg = inference::optimal_assignment(cost, n, m);
      for (std::size_t a = 0; a < n; ++a) line[idx[a]] = allowed[asg[a]];
    } else {
      for (std::size_t a : idx) {
        std::size_t best = allowed[0];
        for (std::size_t k : allowed)
          if (std::abs(t[k].frequency - data[a].freq_GHz) < std::abs(t[best].frequency - data[a].freq_GHz)) best = k;
        line[a] = best;
      }
    }
  }
  return line;
}

/// Predicted frequency of every record for a fixed line assignment.
inline std::vector<double> predict_assigned(std::span<const OdmrRecord> data, const HyperfineTensor& hf,
                                            const HyperfineFitOptions& opt, const std::vector<std::size_t>& line) {
  std::vector<double> pred(data.size(), 0.0);
  for (const auto& [key, idx] : group_records(data)) {
    const auto t = branch_transitions(key, hf, opt);
    for (std::size_t a : idx) pred[a] = t[std::min(line[a], t.size() - 1)].frequency;
  }
  return pred;
}

inline std::vector<double> predict_records(std::span<const OdmrRecord> data, const HyperfineTensor& hf,
                                           const HyperfineFitOptions& opt) {
  return predict_assigned(data, hf, opt, assign_records(data, hf, opt));
}

inline HyperfineTensor tensor_from(std::span<const double> x, bool tied, const HyperfineFitOptions& opt,
                                   double gamma_n) {
  HyperfineTensor t;
  t.nucleus = opt.nucleus;
  t.gamma_n = gamma_n;
  t.tied = tied;
  if (tied) {
    t.Axx = t.Ayy = x[0];
    t.Azz = x[1];
    t.theta = x[2];
  } else {
    t.Axx = x[0];
    t.Ayy = x[1];
    t.Azz = x[2];
    t.theta = x[3];
  }
  t.theta = std::clamp(t.theta, 0.0, 90.0);
  return t;
}

inline HyperfineFit fit_hyperfine_mode(std::span<const OdmrRecord> data, const HyperfineFitOptions& opt, bool tied) {
  const double gamma_n = opt.gamma_n.value_or(default_gamma_n(opt.nucleus));
  const HyperfineTensor start = opt.init.value_or(theory_tensor(opt.nucleus));
  const std::size_t np = tied ? 3 : 4;

  std::vector<std::size_t> lines;
  auto residual = [&](std::span<const double> x, std::span<double> r) {
    const auto hf = tensor_from(x, tied, opt, gamma_n);
    const auto pred = predict_assigned(data, hf, opt, lines);
    for (std::size_t i = 0; i < data.size(); ++i) r[i] = (pred[i] - data[i].freq_GHz) * 1e3 / data[i].sigma_MHz;
  };
  // Line assignment is held fixed within each least-squares run (smooth
  // residuals) and refreshed between runs until it stops changing.
  auto solve_from = [&](std::vector<double> x, const inference::LsOptions& ls) {
    lines = assign_records(data, tensor_from(x, tied, opt, gamma_n), opt);
    for (int round = 0;; ++round) {
      auto r = inference::least_squares(residual, data.size(), x, ls);
      auto next = assign_records(data, tensor_from(r.x, tied, opt, gamma_n), opt);
      if (next == lines || round == 9) return r;
      lines = std::move(next);
      x = r.x;
    }
  };

  inference::LsOptions ls;
  ls.lower.assign(np, -1000.0);
  ls.upper.assign(np, 1000.0);
  ls.lower[np - 1] = 0.0;
  ls.upper[np - 1] = 90.0;
  ls.fd_min_step.assign(np, 1e-4);

  std::optional<inference::LsResult> best;
  std::optional<Error> last_error;
  const double axx0 = tied ? 0.5 * (start.Axx + start.Ayy) : start.Axx;
  for (double dtheta : {0.0, -15.0, 15.0}) {
    std::vector<double> x0 = tied ? std::vector<double>{axx0, start.Azz, std::clamp(start.theta + dtheta, 0.0, 90.0)}
                                  : std::vector<double>{start.Axx, start.Ayy, start.Azz,
                                                        std::clamp(start.theta + dtheta, 0.0, 90.0)};
    try {
      auto r = solve_from(x0, ls);
      if (!best || r.cost < best->cost) best = std::move(r);
    } catch (const NonIdentifiableError&) {
      throw;
    } catch (const Error& e) {
      last_error = e;
    }
  }
  if (!best) throw *last_error;

  HyperfineFit fit;
  fit.tied = tied;
  fit.tensor = tensor_from(best->x, tied, opt, gamma_n);
  fit.chi2 = best->cost;
  fit.records = data.size();
  if (tied) {
    fit.Axx = fit.Ayy = inference::normal_interval(*best, 0);
    fit.Azz = inference::normal_interval(*best, 1);
    fit.theta = inference::normal_interval(*best, 2);
  } else {
    fit.Axx = inference::normal_interval(*best, 0);
    fit.Ayy = inference::normal_interval(*best, 1);
    fit.Azz = inference::normal_interval(*best, 2);
    fit.theta = inference::normal_interval(*best, 3);
  }
  return fit;
}

}  // namespace detail

/// Least-squares hyperfine tensor from ODMR resonances recorded over several
/// field magnitudes and orientations.
inline HyperfineFit fit_hyperfine(std::span<const OdmrRecord> data, const HyperfineFitOptions& opt = {}) {
  if (data.size() < 8) throw InvalidArgument("hyperfine fit needs at least 8 resonance records");
  std::vector<std::tuple<double, double, double>> settings;
  for (const auto& r : data) {
    if (r.branch != 1 && r.branch != -1) throw InvalidArgument("record branch must be +1 or -1");
    if (!(r.sigma_MHz > 0.0)) throw InvalidArgument("record uncertainty must be positive");
    settings.emplace_back(r.B_G, r.theta_deg, r.phi_deg);
  }
  std::sort(settings.begin(), settings.end());
  settings.erase(std::unique(settings.begin(), settings.end()), settings.end());
  if (settings.size() < 3) {
    throw NonIdentifiableError("hyperfine tensor is not identifiable from fewer than 3 distinct field settings "
                               "(found " + std::to_string(settings.size()) + ")");
  }
  if (opt.tie == TieMode::Tied) return detail::fit_hyperfine_mode(data, opt, true);
  if (opt.tie == TieMode::Free) return detail::fit_hyperfine_mode(data, opt, false);
  try {
    auto free_fit = detail::fit_hyperfine_mode(data, opt, false);
    if (free_fit.Ayy.half_width() <= opt.auto_tie_fraction * std::abs(free_fit.Axx.value)) return free_fit;
  } catch (const NonIdentifiableError&) {
  }
  return detail::fit_hyperfine_mode(data, opt, true);
}

// ---------------------------------------------------------------------------
// Coherence experiments

struct CoherenceEnvelope {
  std::vector<double> times;   // µs (2τ for echoes)
  std::vector<double> signal;  // dimensionless
  double decay = 0.0;          // T2 or T2*, µs
  double n = 2.0;
};

/// Two-pulse echo with instantaneous ideal pulses on the {0, −1} electron
/// pair, evolving under the full 6-level Hamiltonian (or its secular part).
/// `tau_us` holds the pulse spacing τ; stored times are 2τ.
inline CoherenceEnvelope hahn_echo_eseem(const GroundStateParams& p, const HyperfineTensor& hf, double T2_us,
                                         double n, std::span<const double> tau_us, bool secular = false) {
  if (!(p.B_mag > 0.0)) throw InvalidArgument("echo simulation requires a non-zero field");
  if (!(T2_us > 0.0)) throw InvalidArgument("T2 must be positive");
  if (!(n > 0.5 && n <= 4.0)) throw InvalidArgument("stretch exponent must lie in (0.5, 4]");
  const auto h = gs_hamiltonian(p, hf, secular);
  const auto es = linalg::hermitian_eigensystem(h);
  const std::size_t dim = h.dim();
  const auto& v = es.vectors;
  const auto vd = v.adjoint();

  auto pulse = [&](double angle) {
    ComplexMatrix r = ComplexMatrix::identity(dim);
    const double c = std::cos(0.5 * angle), s = std::sin(0.5 * angle);
    for (std::size_t m = 0; m < 2; ++m) {
      const std::size_t i0 = 2 + m, i1 = 4 + m;  // |0,m⟩ and |−1,m⟩
      r(i0, i0) = c;
      r(i1, i1) = c;
      r(i0, i1) = cplx{0.0, -s};
      r(i1, i0) = cplx{0.0, -s};
    }
    return r;
  };
  const auto p90 = pulse(0.5 * std::numbers::pi);
  const auto p180 = pulse(std::numbers::pi);

  ComplexMatrix rho0(dim);
  rho0(2, 2) = 0.5;
  rho0(3, 3) = 0.5;
  const ComplexMatrix rho1 = p90 * rho0 * p90.adjoint();

  CoherenceEnvelope env;
  env.decay = T2_us;
  env.n = n;
  for (double tau : tau_us) {
    if (!(tau >= 0.0)) throw InvalidArgument("pulse spacing must be non-negative");
    ComplexMatrix phase(dim);
    for (std::size_t k = 0; k < dim; ++k)
      phase(k, k) = std::exp(cplx{0.0, -2.0 * std::numbers::pi * es.values[k] * 1e3 * tau});
    const ComplexMatrix u = v * phase * vd;
    const ComplexMatrix ud = u.adjoint();
    ComplexMatrix rho = u * rho1 * ud;
    rho = p180 * rho * p180.adjoint();
    rho = u * rho * ud;
    const cplx coh = rho(4, 2) + rho(5, 3);
    const double decay = std::isinf(T2_us) ? 1.0 : std::exp(-std::pow(2.0 * tau / T2_us, n));
    env.times.push_back(2.0 * tau);
    env.signal.push_back(2.0 * coh.imag() * decay);
  }
  return env;
}

enum class DecayModel { StretchedExp, Fringe };

struct DecayFit {
  DecayModel model = DecayModel::StretchedExp;
  Estimate amplitude, decay, n, frequency, phase;  // frequency/phase only for fringes
  double residual_norm = 0.0;
};

struct DecayFitOptions {
  double n_min = 0.5;
  double n_max = 4.0;
};

/// Weighted least squares for A·exp(−(t/T)^n) or A·exp(−(t/T)^n)·cos(2πft + φ).
/// Frequencies are in inverse units of `t`. Empty `sigma` means unit weights
/// with covariance scaled by the residual variance.
inline DecayFit fit_decay(std::span<const double> t, std::span<const double> y, std::span<const double> sigma,
                          DecayModel model, const DecayFitOptions& opt = {}) {
  const std::size_t m = t.size();
  if (m < 10 || y.size() != m) throw InvalidArgument("decay fit needs at least 10 points");
  if (!sigma.empty() && sigma.size() != m) throw InvalidArgument("sigma length does not match the data");
  const double tmax = t.back();
  if (!(tmax > 0.0)) throw InvalidArgument("decay fit needs positive times");
  const bool fringe = model == DecayModel::Fringe;
  const std::size_t np = fringe ? 5 : 3;
  std::vector<double> w(m, 1.0);
  for (std::size_t i = 0; i < m && !sigma.empty(); ++i) {
    if (!(sigma[i] > 0.0)) throw InvalidArgument("sigma must be positive");
    w[i] = 1.0 / sigma[i];
  }
  const std::vector<double> tt(t.begin(), t.end()), yy(y.begin(), y.end());

  auto residual = [&](std::span<const double> x, std::span<double> r) {
    for (std::size_t i = 0; i < m; ++i) {
      double v = x[0] * std::exp(-std::pow(tt[i] / x[1], x[2]));
      if (fringe) v *= std::cos(2.0 * std::numbers::pi * x[3] * tt[i] + x[4]);
      r[i] = w[i] * (v - yy[i]);
    }
  };

  inference::LsOptions ls;
  ls.scale_covariance = sigma.empty();
  ls.lower = {-2.0, 1e-6 * tmax, opt.n_min};
  ls.upper = {2.0, 1e3 * tmax, opt.n_max};
  double amp0 = 0.0;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, m); ++i) amp0 = std::max(amp0, std::abs(yy[i]));
  if (amp0 == 0.0) amp0 = 1.0;
  // The time where the envelope first falls below amp0/e.
  double t0 = tmax;
  {
    std::vector<double> env(m);
    for (std::size_t i = 0; i < m; ++i) env[i] = std::abs(yy[i]);
    if (fringe) {
      for (std::size_t i = 0; i < m; ++i) {
        double mx = 0.0;
        for (std::size_t k = i; k < std::min(m, i + 8); ++k) mx = std::max(mx, env[k]);
        env[i] = mx;
      }
    }
    for (std::size_t i = 0; i < m; ++i)
      if (env[i] < amp0 / std::numbers::e) {
        t0 = std::max(tt[i], 1e-3 * tmax);
        break;
      }
  }
  double f0 = 0.0;
  std::vector<double> phases{0.0};
  if (fringe) {
    f0 = dominant_frequency(tt, yy);
    ls.lower.insert(ls.lower.end(), {0.0, -2.0 * std::numbers::pi});
    const double nyq = 0.5 * static_cast<double>(m - 1) / (tmax - tt.front());
    ls.upper.insert(ls.upper.end(), {2.0 * nyq, 2.0 * std::numbers::pi});
    phases = {0.0, 0.5 * std::numbers::pi, std::numbers::pi, -0.5 * std::numbers::pi};
  }

  std::optional<inference::LsResult> best;
  std::optional<Error> last_error;
  for (double n0 : {2.0, 1.0, 3.0}) {
    for (double ph : phases) {
      std::vector<double> x0{fringe ? amp0 : yy.front() == 0.0 ? amp0 : std::copysign(amp0, yy.front()), t0, n0};
      if (fringe) x0.insert(x0.end(), {f0, ph});
      try {
        auto r = inference::least_squares(residual, m, x0, ls);
        if (!best || r.cost < best->cost) best = std::move(r);
      } catch (const Error& e) {
        last_error = e;
      }
    }
  }
  if (!best) {
    if (last_error) {
      if (auto* ni = dynamic_cast<const NonIdentifiableError*>(&*last_error)) throw *ni;
      throw NonIdentifiableError(std::string("decay fit failed: ") + last_error->what());
    }
    throw NonIdentifiableError("decay fit failed");
  }
  if (best->x[1] > 10.0 * tmax) {
    throw NonIdentifiableError("no decay within the sampled window: the decay constant is unbounded above",
                               fringe ? std::vector<double>{0, 1, 0, 0, 0} : std::vector<double>{0, 1, 0});
  }
  if (!best->converged) throw ConvergenceError("decay fit did not converge", std::sqrt(best->cost));
  DecayFit fit;
  fit.model = model;
  fit.amplitude = inference::normal_interval(*best, 0);
  fit.decay = inference::normal_interval(*best, 1);
  fit.n = inference::normal_interval(*best, 2);
  if (fringe) {
    fit.frequency = inference::normal_interval(*best, 3);
    fit.phase = inference::normal_interval(*best, 4);
  }
  fit.residual_norm = std::sqrt(best->cost);
  (void)np;
  return fit;
}

/// Rabi signal 1 − (c/2)(1 − cos 2πft)·e^(−t/decay); f in MHz, t and decay in µs.
inline std::vector<double> rabi_trace(double f_MHz, double contrast, double decay_us, std::span<const double> t_us) {
  if (!(contrast >= 0.0 && contrast <= 1.0)) throw InvalidArgument("contrast must lie in [0, 1]");
  if (!(decay_us > 0.0)) throw InvalidArgument("decay must be positive");
  std::vector<double> s;
  s.reserve(t_us.size());
  for (double t : t_us)
    s.push_back(1.0 - 0.5 * contrast * (1.0 - std::cos(2.0 * std::numbers::pi * f_MHz * t)) * std::exp(-t / decay_us));
  return s;
}

struct RabiFit {
  Estimate frequency;  // MHz
  Estimate contrast;
  Estimate decay;      // µs
  double residual_norm = 0.0;
};

inline RabiFit rabi_fit(std::span<const double> t, std::span<const double> y, std::span<const double> sigma = {}) {
  const std::size_t m = t.size();
  if (m < 8 || y.size() != m) throw InvalidArgument("Rabi fit needs at least 8 points");
  if (!sigma.empty() && sigma.size() != m) throw InvalidArgument("sigma length does not match the data");
  const std::vector<double> tt(t.begin(), t.end()), yy(y.begin(), y.end());
  std::vector<double> w(m, 1.0);
  for (std::size_t i = 0; i < m && !sigma.empty(); ++i) w[i] = 1.0 / sigma[i];
  const double tmax = tt.back();
  auto residual = [&](std::span<const double> x, std::span<double> r) {
    for (std::size_t i = 0; i < m; ++i) {
      const double v =
          1.0 - 0.5 * x[1] * (1.0 - std::cos(2.0 * std::numbers::pi * x[0] * tt[i])) * std::exp(-tt[i] / x[2]);
      r[i] = w[i] * (v - yy[i]);
    }
  };
  const double f0 = dominant_frequency(tt, yy);
  double c0 = 0.0;
  for (double v : yy) c0 = std::max(c0, 1.0 - v);
  c0 = std::clamp(c0, 1e-3, 1.0);
  inference::LsOptions ls;
  ls.scale_covariance = sigma.empty();
  const double nyq = 0.5 * static_cast<double>(m - 1) / (tmax - tt.front());
  ls.lower = {0.0, 0.0, 1e-3 * tmax};
  ls.upper = {2.0 * nyq, 1.0, 1e4 * tmax};
  std::optional<inference::LsResult> best;
  for (double d0 : {tmax, 0.3 * tmax, 3.0 * tmax}) {
    std::vector<double> x0{f0, c0, d0};
    auto r = inference::least_squares(residual, m, x0, ls);
    if (!best || r.cost < best->cost) best = std::move(r);
  }
  if (!best->converged) throw ConvergenceError("Rabi fit did not converge", std::sqrt(best->cost));
  return {inference::normal_interval(*best, 0), inference::normal_interval(*best, 1),
          inference::normal_interval(*best, 2), std::sqrt(best->cost)};
}

}  // namespace divac::ground
