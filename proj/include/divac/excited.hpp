#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "divac/errors.hpp"
#include "divac/inference/assignment.hpp"
#include "divac/linalg.hpp"

namespace divac::excited {

using linalg::ComplexMatrix;
using linalg::CVector;

struct ExcitedStateParams {
  double lambda_z = 0.0;  // GHz
  double D_es = 0.0;      // GHz
  double Delta1 = 0.0;    // GHz
  double Delta2 = 0.0;    // GHz

  void validate() const {
    if (!(lambda_z > 0.0)) throw InvalidArgument("lambda_z must be positive");
    if (!(D_es >= 0.0)) throw InvalidArgument("D_es must be non-negative");
    if (!(Delta1 >= 0.0)) throw InvalidArgument("Delta1 must be non-negative");
    if (!(Delta2 >= 0.0)) throw InvalidArgument("Delta2 must be non-negative");
  }
};

struct StrainVector {
  double delta_perp = 0.0;  // GHz
  double phi = 0.0;         // deg
};

enum class Form { hh, kk, c3 };

struct FormPreset {
  ExcitedStateParams params;
  double zpl_THz;
  double D_ground_GHz;
};

inline FormPreset preset(Form f) {
  switch (f) {
    case Form::hh: return {{3.538, 0.855, 0.577, 0.031}, 264.91, 1.336};
    case Form::kk: return {{6.090, 0.852, 0.584, 0.044}, 265.31, 1.305};
    case Form::c3: return {{15.7, 2.0, 0.58, 0.04}, 270.95, 1.336};
  }
  throw InvalidArgument("unknown form");
}

inline Form parse_form(const std::string& s) {
  if (s == "hh") return Form::hh;
  if (s == "kk") return Form::kk;
  if (s == "3C" || s == "3c") return Form::c3;
  throw InvalidArgument("unknown divacancy form '" + s + "' (expected hh, kk or 3C)");
}

inline std::string form_name(Form f) { return f == Form::hh ? "hh" : f == Form::kk ? "kk" : "3C"; }

/// Reference parameters with NV-centre-like coupling strengths.
inline ExcitedStateParams nv_like_params() { return {5.3, 1.42, 1.55, 0.2}; }

enum class Label { Ex, Ey, A1, A2, E1, E2 };
inline constexpr std::array<Label, 6> kLabels{Label::Ex, Label::Ey, Label::A1, Label::A2, Label::E1, Label::E2};

inline std::string label_name(Label l) {
  static const char* names[] = {"Ex", "Ey", "A1", "A2", "E1", "E2"};
  return names[static_cast<int>(l)];
}

// Basis index orbital*3 + spin, orbital 0 = E+, 1 = E−; spin 0 = +1, 1 = 0, 2 = −1.
// Lz is +1 on E− and −1 on E+.
inline constexpr std::size_t idx(int orbital, int spin) { return static_cast<std::size_t>(orbital * 3 + spin); }

/// Strain operator dH/dδ at azimuth φ (deg).
inline ComplexMatrix strain_operator(double phi_deg) {
  const cplx d = std::polar(1.0, phi_deg * std::numbers::pi / 180.0);
  ComplexMatrix v(6);
  for (int s = 0; s < 3; ++s) {
    v(idx(1, s), idx(0, s)) = d;
    v(idx(0, s), idx(1, s)) = std::conj(d);
  }
  return v;
}

/// Six-level ³E Hamiltonian (GHz) in the |E±⟩⊗|mS⟩ product basis.
inline ComplexMatrix es_hamiltonian(const ExcitedStateParams& p, const StrainVector& s) {
  p.validate();
  if (!(s.delta_perp >= 0.0)) throw InvalidArgument("transverse strain must be non-negative");
  ComplexMatrix h(6);
  const int ms[3] = {1, 0, -1};
  for (int o = 0; o < 2; ++o) {
    const int lz = o == 0 ? -1 : 1;
    for (int k = 0; k < 3; ++k) h(idx(o, k), idx(o, k)) = p.D_es * ms[k] * ms[k] + p.lambda_z * lz * ms[k];
  }
  // Δ1: |E−⟩⟨E+|⊗|+1⟩⟨−1|; Δ2: |E−⟩⟨E+|⊗|0⟩⟨+1| + |E+⟩⟨E−|⊗|0⟩⟨−1|; plus h.c.
  h(idx(1, 0), idx(0, 2)) = h(idx(0, 2), idx(1, 0)) = p.Delta1;
  const double d2 = std::numbers::sqrt2 * p.Delta2;
  h(idx(1, 1), idx(0, 0)) = h(idx(0, 0), idx(1, 1)) = d2;
  h(idx(0, 1), idx(1, 2)) = h(idx(1, 2), idx(0, 1)) = d2;
  if (s.delta_perp != 0.0) h += strain_operator(s.phi) * cplx{s.delta_perp};
  return h;
}

inline double ms0_fraction(std::span<const cplx> v) { return std::norm(v[idx(0, 1)]) + std::norm(v[idx(1, 1)]); }

inline double lzsz(std::span<const cplx> v) {
  double s = 0.0;
  for (int o = 0; o < 2; ++o) s += (o == 0 ? -1.0 : 1.0) * (std::norm(v[idx(o, 0)]) - std::norm(v[idx(o, 2)]));
  return s;
}

/// Eigenstates in label order (Ex, Ey, A1, A2, E1, E2).
struct LabeledStates {
  std::array<double, 6> energy{};  // GHz
  std::array<CVector, 6> vector;
};

namespace detail {

inline double cluster_tol(const ComplexMatrix& h) { return 1e-9 * std::max(1.0, h.norm()); }

/// Eigenvectors at zero strain resolved inside degenerate clusters by
/// degenerate perturbation theory in the strain operator (first order, then
/// second order), so they are the δ → 0⁺ limits of the strained states.
inline LabeledStates label_zero_strain(const ExcitedStateParams& p, double phi) {
  const auto h = es_hamiltonian(p, {0.0, phi});
  const auto es = linalg::hermitian_eigensystem(h);
  const auto v = strain_operator(phi);
  const double tol = cluster_tol(h);
  std::vector<CVector> vecs(6);
  std::vector<double> slope1(6, 0.0), slope2(6, 0.0);
  for (std::size_t k = 0; k < 6; ++k) vecs[k] = es.vector(k);

  auto diagonalize_in = [&](const std::vector<std::size_t>& members, auto&& element) {
    const std::size_t m = members.size();
    ComplexMatrix w(m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b) w(a, b) = element(vecs[members[a]], vecs[members[b]]);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b) w(b, a) = std::conj(w(a, b) = 0.5 * (w(a, b) + std::conj(w(b, a))));
    const auto sub = linalg::hermitian_eigensystem(w);
    std::vector<CVector> rotated(m, CVector(6));
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t i = 0; i < 6; ++i) rotated[c][i] += sub.vectors(a, c) * vecs[members[a]][i];
    for (std::size_t c = 0; c < m; ++c) vecs[members[c]] = rotated[c];
    return sub.values;
  };

  std::size_t start = 0;
  while (start < 6) {
    std::size_t end = start + 1;
    while (end < 6 && es.values[end] - es.values[end - 1] <= tol) ++end;
    if (end - start > 1) {
      std::vector<std::size_t> members;
      for (std::size_t k = start; k < end; ++k) members.push_back(k);
      const auto first = diagonalize_in(members, [&](const CVector& a, const CVector& b) {
        return linalg::expectation(a, v, b);
      });
      // Sub-clusters left degenerate at first order are split at second order.
      std::size_t s0 = 0;
      while (s0 < members.size()) {
        std::size_t s1 = s0 + 1;
        while (s1 < members.size() && first[s1] - first[s1 - 1] <= 1e-9) ++s1;
        for (std::size_t c = s0; c < s1; ++c) slope1[members[c]] = first[c];
        if (s1 - s0 > 1) {
          std::vector<std::size_t> sub(members.begin() + s0, members.begin() + s1);
          const double e0 = es.values[members[s0]];
          const auto second = diagonalize_in(sub, [&](const CVector& a, const CVector& b) {
            cplx acc = 0.0;
            for (std::size_t k = 0; k < 6; ++k) {
              if (std::abs(es.values[k] - e0) <= tol) continue;
              const auto vk = es.vector(k);
              acc += linalg::expectation(a, v, vk) * linalg::expectation(vk, v, b) / (e0 - es.values[k]);
            }
            return acc;
          });
          for (std::size_t c = 0; c < sub.size(); ++c) slope2[sub[c]] = second[c];
        }
        s0 = s1;
      }
    }
    start = end;
  }

  // Classify: the two most mS=0-like states are Ex (upper strain branch) and
  // Ey; of the rest, positive ⟨Lz Sz⟩ is the A pair, negative the E pair.
  std::array<std::size_t, 6> order{0, 1, 2, 3, 4, 5};
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ms0_fraction(vecs[a]) > ms0_fraction(vecs[b]); });
  auto upper_first = [&](std::size_t a, std::size_t b) {
    // True when a sits above b for small positive strain.
    if (std::abs(es.values[a] - es.values[b]) > tol) return es.values[a] > es.values[b];
    if (std::abs(slope1[a] - slope1[b]) > 1e-9) return slope1[a] > slope1[b];
    if (std::abs(slope2[a] - slope2[b]) > 1e-12) return slope2[a] > slope2[b];
    return a > b;
  };
  LabeledStates out;
  auto put = [&](Label l, std::size_t k) {
    out.energy[static_cast<int>(l)] = es.values[k];
    out.vector[static_cast<int>(l)] = vecs[k];
  };
  const bool x_first = upper_first(order[0], order[1]);
  put(Label::Ex, x_first ? order[0] : order[1]);
  put(Label::Ey, x_first ? order[1] : order[0]);
  std::vector<std::size_t> a_like, e_like;
  for (std::size_t q = 2; q < 6; ++q) (lzsz(vecs[order[q]]) > 0.0 ? a_like : e_like).push_back(order[q]);
  if (a_like.size() != 2 || e_like.size() != 2) {
    // Strong Δ2 mixing: fall back to energy order among the remaining four.
    std::vector<std::size_t> rest(order.begin() + 2, order.end());
    std::sort(rest.begin(), rest.end(), [&](auto a, auto b) { return upper_first(b, a); });
    e_like = {rest[0], rest[1]};
    a_like = {rest[2], rest[3]};
  }
  const bool a_swap = upper_first(a_like[0], a_like[1]);
  put(Label::A1, a_swap ? a_like[1] : a_like[0]);
  put(Label::A2, a_swap ? a_like[0] : a_like[1]);
  const bool e_swap = upper_first(e_like[0], e_like[1]);
  put(Label::E1, e_swap ? e_like[1] : e_like[0]);
  put(Label::E2, e_swap ? e_like[0] : e_like[1]);
  return out;
}

struct StepResult {
  bool ok = false;
  double worst_overlap = 1.0;
  LabeledStates next;
};

/// Carries labels from `prev` onto the eigenstates of `h` by maximal overlap.
/// Inside exactly degenerate clusters the previous vectors are projected into
/// the cluster, so labels stay continuous through crossings.
inline StepResult track_step(const LabeledStates& prev, const ComplexMatrix& h) {
  const auto es = linalg::hermitian_eigensystem(h);
  const double tol = cluster_tol(h);
  std::vector<double> cost(36);
  std::array<std::array<double, 6>, 6> ov{};
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = 0; b < 6; ++b) {
      const auto vb = es.vector(b);
      ov[a][b] = std::norm(linalg::inner(prev.vector[a], vb));
      cost[a * 6 + b] = -ov[a][b];
    }
  const auto asg = inference::optimal_assignment(cost, 6, 6);

  std::vector<int> cluster(6);
  int cid = 0;
  for (std::size_t k = 0; k < 6; ++k) cluster[k] = (k > 0 && es.values[k] - es.values[k - 1] <= tol) ? cid : ++cid;

  StepResult r;
  for (std::size_t a = 0; a < 6; ++a) {
    double o = 0.0;
    for (std::size_t b = 0; b < 6; ++b)
      if (cluster[b] == cluster[asg[a]]) o += ov[a][b];
    r.worst_overlap = std::min(r.worst_overlap, o);
  }
  r.ok = r.worst_overlap >= 0.6;
  if (!r.ok) return r;

  for (std::size_t a = 0; a < 6; ++a) {
    r.next.energy[a] = es.values[asg[a]];
    r.next.vector[a] = es.vector(asg[a]);
  }
  // Degenerate clusters: replace by Gram-Schmidt of projected previous vectors.
  for (int c = 0; c <= cid; ++c) {
    std::vector<std::size_t> members, labels;
    for (std::size_t b = 0; b < 6; ++b)
      if (cluster[b] == c) members.push_back(b);
    if (members.size() < 2) continue;
    for (std::size_t a = 0; a < 6; ++a)
      if (cluster[asg[a]] == c) labels.push_back(a);
    std::vector<CVector> basis;
    for (std::size_t a : labels) {
      CVector proj(6);
      for (std::size_t b : members) {
        const auto vb = es.vector(b);
        const cplx cf = linalg::inner(vb, prev.vector[a]);
        for (std::size_t i = 0; i < 6; ++i) proj[i] += cf * vb[i];
      }
      for (const auto& q : basis) {
        const cplx cf = linalg::inner(q, proj);
        for (std::size_t i = 0; i < 6; ++i) proj[i] -= cf * q[i];
      }
      double nn = 0.0;
      for (const auto& x : proj) nn += std::norm(x);
      if (nn < 1e-12) return r;  // keep the plain eigenvectors
      for (auto& x : proj) x /= std::sqrt(nn);
      basis.push_back(proj);
    }
    for (std::size_t q = 0; q < labels.size(); ++q) r.next.vector[labels[q]] = basis[q];
  }
  return r;
}

}  // namespace detail

/// Labeled eigenstates at strain `s`, tracked adiabatically from zero strain.
/// Steps are capped by a quarter of the smallest level spacing so avoided
/// crossings are followed rather than jumped.
inline LabeledStates tracked_states(const ExcitedStateParams& p, const StrainVector& s) {
  auto cur = detail::label_zero_strain(p, s.phi);
  double at = 0.0;
  double step = s.delta_perp;
  const double min_step = 1e-9 * std::max(1.0, s.delta_perp);
  const double floor_step = 1e-3 * std::max(1.0, p.lambda_z);
  while (at < s.delta_perp) {
    auto e = cur.energy;
    std::sort(e.begin(), e.end());
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < 6; ++k)
      if (e[k] - e[k - 1] > 1e-9) gap = std::min(gap, e[k] - e[k - 1]);
    step = std::min(step, std::max(0.25 * gap, floor_step));
    const double to = std::min(s.delta_perp, at + step);
    const auto r = detail::track_step(cur, es_hamiltonian(p, {to, s.phi}));
    if (r.ok) {
      cur = r.next;
      at = to;
      step *= 2.0;
    } else {
      step *= 0.5;
      if (step < min_step) throw TrackingError(at, to, r.worst_overlap);
    }
  }
  return cur;
}

struct PleLine {
  double frequency_THz = 0.0;
  double offset_GHz = 0.0;  // relative to the ZPL
  int ground_ms = 0;        // 0, or 1 for the mS=±1 ground manifold
  Label label = Label::Ex;
  double ms0_fraction = 0.0;
};

/// The two most mS=0-like states (by index into a 6-vector of fractions).
inline std::array<bool, 6> ms0_dominant(const std::array<double, 6>& frac) {
  std::array<std::size_t, 6> o{0, 1, 2, 3, 4, 5};
  std::stable_sort(o.begin(), o.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  std::array<bool, 6> out{};
  out[o[0]] = out[o[1]] = true;
  return out;
}

/// Spin-conserving PLE transitions, one per excited eigenstate, in label order.
inline std::vector<PleLine> ple_lines(const ExcitedStateParams& p, const StrainVector& s, double zpl_THz,
                                      double D_ground_GHz) {
  const auto st = tracked_states(p, s);
  std::array<double, 6> frac{};
  for (std::size_t k = 0; k < 6; ++k) frac[k] = ms0_fraction(st.vector[k]);
  const auto dom = ms0_dominant(frac);
  std::vector<PleLine> out;
  for (std::size_t k = 0; k < 6; ++k) {
    PleLine l;
    l.label = kLabels[k];
    l.ms0_fraction = frac[k];
    l.ground_ms = dom[k] ? 0 : 1;
    l.offset_GHz = st.energy[k] - (dom[k] ? 0.0 : D_ground_GHz);
    l.frequency_THz = zpl_THz + l.offset_GHz * 1e-3;
    out.push_back(l);
  }
  return out;
}

/// Label-free line offsets (GHz from the ZPL) and mS=0 fractions from one
/// diagonalization; ascending excited-state energy. Used in fitting loops.
struct FastLines {
  std::array<double, 6> offset_GHz{};
  std::array<double, 6> ms0_fraction{};
  std::array<bool, 6> ms0_dominant{};
};

namespace detail {

/// Eigenvalues (ascending) of a real symmetric 3×3 matrix and the squared
/// middle component of each eigenvector. Closed-form cubic roots with
/// cross-product eigenvectors; Jacobi when two roots nearly coincide.
inline void sym3_eigen(const std::array<double, 9>& m, std::array<double, 3>& values, std::array<double, 3>& mid2) {
  const double q = (m[0] + m[4] + m[8]) / 3.0;
  const double p1 = m[1] * m[1] + m[2] * m[2] + m[5] * m[5];
  const double p2 = (m[0] - q) * (m[0] - q) + (m[4] - q) * (m[4] - q) + (m[8] - q) * (m[8] - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  bool ok = p > 0.0;
  if (ok) {
    const double b0 = (m[0] - q) / p, b4 = (m[4] - q) / p, b8 = (m[8] - q) / p;
    const double b1 = m[1] / p, b2 = m[2] / p, b5 = m[5] / p;
    const double r = 0.5 * (b0 * (b4 * b8 - b5 * b5) - b1 * (b1 * b8 - b5 * b2) + b2 * (b1 * b5 - b4 * b2));
    const double phi = std::acos(std::clamp(r, -1.0, 1.0)) / 3.0;
    const double hi = q + 2.0 * p * std::cos(phi);
    const double lo = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    values = {lo, 3.0 * q - hi - lo, hi};
    ok = std::min(values[1] - values[0], values[2] - values[1]) > 1e-5 * p;
  }
  if (ok) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double mu = values[k];
      const double r0[3] = {m[0] - mu, m[1], m[2]}, r1[3] = {m[3], m[4] - mu, m[5]}, r2[3] = {m[6], m[7], m[8] - mu};
      const double* pairs[3][2] = {{r0, r1}, {r0, r2}, {r1, r2}};
      double best[3] = {0, 0, 0}, bn = -1.0;
      for (auto& pr : pairs) {
        const double* a = pr[0];
        const double* b = pr[1];
        const double c[3] = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
        const double n = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
        if (n > bn) bn = n, best[0] = c[0], best[1] = c[1], best[2] = c[2];
      }
      mid2[k] = best[1] * best[1] / bn;
    }
    return;
  }
  const auto es = linalg::symmetric_eigensystem<3>(m);
  for (std::size_t k = 0; k < 3; ++k) {
    values[k] = es.values[k];
    mid2[k] = es.vectors[3 + k] * es.vectors[3 + k];
  }
}

}  // namespace detail

inline FastLines ple_offsets(const ExcitedStateParams& p, double delta_perp, double D_ground_GHz) {
  // At φ = 0 the Hamiltonian is real and commutes with (orbital swap)⊗(mS → −mS),
  // so it splits into two 3×3 blocks over the pairs {(E+,+1),(E−,−1)},
  // {(E+,0),(E−,0)}, {(E+,−1),(E−,+1)}.
  p.validate();
  if (!(delta_perp >= 0.0)) throw InvalidArgument("transverse strain must be non-negative");
  const double d2 = std::numbers::sqrt2 * p.Delta2;
  std::array<double, 6> values{}, frac{};
  for (int sign = 0; sign < 2; ++sign) {
    const double e = sign == 0 ? 1.0 : -1.0;
    std::array<double, 9> m{};
    m[0] = p.D_es - p.lambda_z;
    m[4] = e * delta_perp;
    m[8] = p.D_es + p.lambda_z + e * p.Delta1;
    m[1] = m[3] = e * d2;
    m[2] = m[6] = e * delta_perp;
    std::array<double, 3> v{}, w{};
    detail::sym3_eigen(m, v, w);
    for (std::size_t k = 0; k < 3; ++k) {
      values[sign * 3 + k] = v[k];
      frac[sign * 3 + k] = w[k];
    }
  }
  std::array<std::size_t, 6> order{0, 1, 2, 3, 4, 5};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  FastLines f;
  std::array<double, 6> energy{};
  for (std::size_t k = 0; k < 6; ++k) {
    energy[k] = values[order[k]];
    f.ms0_fraction[k] = frac[order[k]];
  }
  f.ms0_dominant = ms0_dominant(f.ms0_fraction);
  for (std::size_t k = 0; k < 6; ++k) f.offset_GHz[k] = energy[k] - (f.ms0_dominant[k] ? 0.0 : D_ground_GHz);
  return f;
}

/// Probability per optical cycle of leaving mS=0: 1 − mS=0 fraction of the
/// tracked Ex or Ey state.
inline double spin_flip_probability(const ExcitedStateParams& p, const StrainVector& s, Label level = Label::Ex) {
  if (level != Label::Ex && level != Label::Ey) throw InvalidArgument("spin-flip probability is defined for Ex or Ey");
  const auto st = tracked_states(p, s);
  const auto& v = st.vector[static_cast<int>(level)];
  // Summed directly over the mS=±1 components so a spin-pure state gives 0 exactly.
  double flip = 0.0, total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    total += std::norm(v[i]);
    if (i % 3 != 1) flip += std::norm(v[i]);
  }
  return std::clamp(flip / total, 0.0, 1.0);
}

struct FanRow {
  double delta_perp = 0.0;
  std::array<double, 6> frequency_THz{};  // label order
  std::array<double, 6> ms0_fraction{};
};

/// Six labeled branch frequencies along a monotone strain grid. Labels are
/// carried point to point; a step with overlap below 0.6 is reported.
inline std::vector<FanRow> strain_fan(const ExcitedStateParams& p, double zpl_THz, double D_ground_GHz,
                                      std::span<const double> grid, double phi = 0.0) {
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!(grid[k] >= 0.0)) throw InvalidArgument("strain grid values must be non-negative");
    if (k > 0 && !(grid[k] > grid[k - 1])) throw InvalidArgument("strain grid must be strictly increasing");
  }
  std::vector<FanRow> rows;
  if (grid.empty()) return rows;
  auto cur = detail::label_zero_strain(p, phi);
  double at = 0.0;
  for (double d : grid) {
    if (d > at) {
      const auto r = detail::track_step(cur, es_hamiltonian(p, {d, phi}));
      if (!r.ok) throw TrackingError(at, d, r.worst_overlap);
      cur = r.next;
      at = d;
    }
    FanRow row;
    row.delta_perp = d;
    for (std::size_t k = 0; k < 6; ++k) row.ms0_fraction[k] = ms0_fraction(cur.vector[k]);
    const auto dom = ms0_dominant(row.ms0_fraction);
    for (std::size_t k = 0; k < 6; ++k)
      row.frequency_THz[k] = zpl_THz + (cur.energy[k] - (dom[k] ? 0.0 : D_ground_GHz)) * 1e-3;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace divac::excited
