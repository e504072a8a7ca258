#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "divac/ground_spin.hpp"

using namespace divac;
using namespace divac::ground;

namespace {

GroundStateParams axial(double B) {
  GroundStateParams p;
  p.B_mag = B;
  return p;
}

std::vector<double> branch_lines(const std::vector<Transition>& t, int branch, double min_strength) {
  std::vector<double> out;
  for (const auto& x : t)
    if (x.branch == branch && x.strength >= min_strength) out.push_back(x.frequency);
  return out;
}

}  // namespace

TEST(GroundHamiltonian, ZeroFieldSpectrum) {
  GroundStateParams p;
  const auto es = linalg::hermitian_eigensystem(gs_hamiltonian(p));
  EXPECT_NEAR(es.values[0], -2.0 * p.D / 3.0, 1e-12);
  EXPECT_NEAR(es.values[1], p.D / 3.0, 1e-12);
  EXPECT_NEAR(es.values[2], p.D / 3.0, 1e-12);
  EXPECT_NEAR(es.values[1] - es.values[0], 1.336, 1e-12);
}

TEST(GroundHamiltonian, AxialZeemanSplitsSymmetrically) {
  const auto lines = odmr_lines(axial(100.0));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_NEAR(lines[0].frequency, 1.336 - 0.28025, 1e-12);
  EXPECT_NEAR(lines[1].frequency, 1.336 + 0.28025, 1e-12);
}

TEST(GroundHamiltonian, TheoryZfsShift) {
  GroundStateParams p;
  p.D = 1.32;
  const double f_theory = odmr_lines(p)[0].frequency;
  const double f_exp = odmr_lines(GroundStateParams{})[0].frequency;
  EXPECT_NEAR((f_exp - f_theory) * 1e3, 16.0, 1e-9);
}

TEST(GroundHamiltonian, TracelessWithoutNuclearZeeman) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    GroundStateParams p;
    p.D = 0.5 + 2.0 * u(rng);
    p.B_mag = 500.0 * u(rng);
    p.B_theta = 180.0 * u(rng);
    p.B_phi = 360.0 * u(rng);
    auto hf = make_tensor(Nucleus::C13_I, 100 * u(rng), 100 * u(rng), 100 * u(rng), 90 * u(rng));
    hf.gamma_n = 0.0;
    EXPECT_LT(std::abs(gs_hamiltonian(p, hf).trace()), 1e-10);
    EXPECT_LT(std::abs(gs_hamiltonian(p).trace()), 1e-10);
  }
}

TEST(OdmrLines, ZeroFieldDoublyDegenerate) {
  const auto lines = odmr_lines(GroundStateParams{});
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_NEAR(lines[0].frequency, 1.336, 1e-12);
  EXPECT_EQ(lines[0].multiplicity, 2);
  EXPECT_DOUBLE_EQ(lines[0].strength, 1.0);
}

TEST(OdmrLines, CarbonSplittingNear59MHz) {
  // At 10 G the hyperfine coupling exceeds the Zeeman splitting, so the
  // strong lines form a comb whose spacing is the dominant splitting.
  const auto lines = odmr_lines(axial(10.0), experimental_tensor(Nucleus::C13_I));
  std::vector<double> strong;
  for (const auto& l : lines) {
    if (l.strength < 0.05) continue;
    if (strong.empty() || l.frequency - strong.back() > 1e-3) strong.push_back(l.frequency);
  }
  ASSERT_GE(strong.size(), 2u);
  for (std::size_t k = 1; k < strong.size(); ++k) EXPECT_NEAR((strong[k] - strong[k - 1]) * 1e3, 59.0, 5.0);
}

TEST(OdmrLines, SecularAxialSplittingEqualsAzz) {
  const auto hf = make_tensor(Nucleus::C13_I, 40.0, 40.0, 90.0, 0.0);
  for (double B : {300.0, 1000.0, 20000.0}) {
    const auto lines = branch_lines(odmr_transitions(axial(B), hf, true), -1, 1e-6);
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_NEAR((lines[1] - lines[0]) * 1e3, 90.0, 1e-9);
  }
  // The full Hamiltonian approaches the secular value as the field grows.
  double prev = 1e9;
  for (double B : {2000.0, 20000.0, 200000.0}) {
    auto t = odmr_transitions(axial(B), hf);
    std::sort(t.begin(), t.end(), [](auto& x, auto& y) { return x.strength > y.strength; });
    std::vector<double> top;
    for (const auto& x : t)
      if (x.branch == -1 && top.size() < 2) top.push_back(x.frequency);
    const double err = std::abs(std::abs(top[1] - top[0]) * 1e3 - 90.0);
    EXPECT_LT(err, prev);
    prev = err;
  }
  EXPECT_LT(prev, 0.05);
}

TEST(OdmrLines, AzimuthInvariantForAxialTensor) {
  const auto hf = make_tensor(Nucleus::Si29_IIa, 8.0, 8.0, 12.0, 0.0);
  GroundStateParams p;
  p.B_mag = 120.0;
  p.B_theta = 35.0;
  const auto ref = odmr_lines(p, hf);
  for (double phi : {17.0, 90.0, 233.0}) {
    p.B_phi = phi;
    const auto l = odmr_lines(p, hf);
    ASSERT_EQ(l.size(), ref.size());
    for (std::size_t k = 0; k < l.size(); ++k) EXPECT_NEAR(l[k].frequency, ref[k].frequency, 1e-9);
  }
}

TEST(EffectiveAz, TableValues) {
  // The tabulated 61.0 comes from rounded inputs; the formula gives 61.088.
  EXPECT_NEAR(effective_az(theory_tensor(Nucleus::C13_I)), 61.0878, 1e-4);
  EXPECT_NEAR(effective_az(theory_tensor(Nucleus::C13_I)), 61.0, 0.1);
  EXPECT_NEAR(effective_az(theory_tensor(Nucleus::Si29_IIa)), 8.9, 0.05);
  EXPECT_NEAR(effective_az(theory_tensor(Nucleus::Si29_IIb)), 11.6, 0.05);
  EXPECT_NEAR(effective_az(experimental_tensor(Nucleus::C13_I)), 57.6, 0.1);
  auto t = make_tensor(Nucleus::C13_I, 33.0, 71.0, 150.0, 0.0);
  EXPECT_EQ(effective_az(t), 150.0);
  std::swap(t.Axx, t.Ayy);
  EXPECT_EQ(effective_az(t), 150.0);
}

TEST(EffectiveAz, MatchesRotatedTensorColumn) {
  const auto hf = theory_tensor(Nucleus::Si29_IIb);
  const auto a = hyperfine_matrix(hf);
  EXPECT_NEAR(std::sqrt(a[0][2] * a[0][2] + a[1][2] * a[1][2] + a[2][2] * a[2][2]), effective_az(hf), 1e-12);
}

namespace {

std::vector<OdmrRecord> synthetic_odmr(const HyperfineTensor& truth, double noise_MHz, std::mt19937_64& rng,
                                       std::vector<double> fields = {10, 60, 120, 180, 250},
                                       std::vector<double> angles = {0, 20, 40, 60, 80}) {
  std::normal_distribution<double> g(0.0, noise_MHz);
  std::vector<OdmrRecord> out;
  for (double B : fields) {
    for (double th : angles) {
      GroundStateParams p;
      p.B_mag = B;
      p.B_theta = th;
      const auto t = odmr_transitions(p, truth);
      double mx = 0.0;
      for (const auto& x : t) mx = std::max(mx, x.strength);
      for (const auto& x : t) {
        if (x.strength < 0.05 * mx) continue;
        out.push_back({B, th, 0.0, x.branch, x.frequency + g(rng) * 1e-3, noise_MHz > 0 ? noise_MHz : 1.0});
      }
    }
  }
  return out;
}

}  // namespace

TEST(HyperfineFit, NoiselessExactRecovery) {
  std::mt19937_64 rng(1);
  const auto truth = experimental_tensor(Nucleus::C13_I);
  const auto data = synthetic_odmr(truth, 0.0, rng);
  HyperfineFitOptions opt;
  opt.tie = TieMode::Tied;
  const auto fit = fit_hyperfine(data, opt);
  EXPECT_NEAR(fit.tensor.Axx, truth.Axx, 1e-3);
  EXPECT_NEAR(fit.tensor.Azz, truth.Azz, 1e-3);
  EXPECT_NEAR(fit.tensor.theta, truth.theta, 1e-3);
  EXPECT_TRUE(fit.tied);
  EXPECT_EQ(fit.tensor.Ayy, fit.tensor.Axx);
}

TEST(HyperfineFit, FreeModeRecoversUntiedTensor) {
  std::mt19937_64 rng(2);
  const auto truth = theory_tensor(Nucleus::C13_I);
  const auto data = synthetic_odmr(truth, 0.0, rng);
  HyperfineFitOptions opt;
  opt.tie = TieMode::Free;
  opt.init = make_tensor(Nucleus::C13_I, 45.0, 45.0, 110.0, 70.0);
  const auto fit = fit_hyperfine(data, opt);
  EXPECT_NEAR(fit.tensor.Axx, truth.Axx, 1e-3);
  EXPECT_NEAR(fit.tensor.Ayy, truth.Ayy, 1e-3);
  EXPECT_NEAR(fit.tensor.Azz, truth.Azz, 1e-3);
}

TEST(HyperfineFit, SingleSettingIsNotIdentifiable) {
  std::mt19937_64 rng(3);
  auto data = synthetic_odmr(experimental_tensor(Nucleus::C13_I), 0.5, rng, {120.0}, {40.0});
  while (data.size() < 8) data.push_back(data.front());
  EXPECT_THROW(fit_hyperfine(data), NonIdentifiableError);
}

TEST(HyperfineFit, IntervalCoverageCarbon) {
  const auto truth = experimental_tensor(Nucleus::C13_I);
  const auto reported = experimental_uncertainty(Nucleus::C13_I);
  int cover_axx = 0, cover_azz = 0, cover_theta = 0, within_reported = 0;
  const int trials = 30;
  for (int s = 0; s < trials; ++s) {
    std::mt19937_64 rng(100 + s);
    const auto data = synthetic_odmr(truth, 1.0, rng);
    HyperfineFitOptions opt;
    opt.tie = TieMode::Tied;
    const auto fit = fit_hyperfine(data, opt);
    cover_axx += fit.Axx.contains(truth.Axx);
    cover_azz += fit.Azz.contains(truth.Azz);
    cover_theta += fit.theta.contains(truth.theta);
    within_reported += std::abs(fit.tensor.Axx - truth.Axx) <= reported[0] &&
                       std::abs(fit.tensor.Azz - truth.Azz) <= reported[1] &&
                       std::abs(fit.tensor.theta - truth.theta) <= reported[2];
  }
  EXPECT_GE(cover_axx, 27);
  EXPECT_GE(cover_azz, 27);
  EXPECT_GE(cover_theta, 27);
  EXPECT_EQ(within_reported, trials);
}

TEST(HyperfineFit, AutoModeTiesUnresolvedAyy) {
  // Few settings and 2 MHz noise leave Ayy poorly constrained.
  std::mt19937_64 rng(4);
  const auto data = synthetic_odmr(experimental_tensor(Nucleus::C13_I), 2.0, rng, {10, 250}, {0, 40});
  const auto fit = fit_hyperfine(data);
  EXPECT_TRUE(fit.tied);
  EXPECT_EQ(fit.tensor.Ayy, fit.tensor.Axx);
}

TEST(HyperfineFit, AutoModeKeepsResolvedAyy) {
  std::mt19937_64 rng(5);
  const auto truth = theory_tensor(Nucleus::C13_I);
  const auto data = synthetic_odmr(truth, 0.2, rng);
  const auto fit = fit_hyperfine(data);
  EXPECT_FALSE(fit.tied);
  EXPECT_TRUE(fit.Ayy.contains(truth.Ayy));
}

TEST(Eseem, ZeroDelayGivesUnitSignal) {
  GroundStateParams p = axial(253.0);
  const std::vector<double> tau{0.0};
  const auto env = hahn_echo_eseem(p, experimental_tensor(Nucleus::C13_I), 900.0, 2.0, tau);
  EXPECT_NEAR(env.signal[0], 1.0, 1e-12);
}

TEST(Eseem, IsotropicCouplingHasNoModulation) {
  const auto hf = make_tensor(Nucleus::Si29_IIa, 9.0, 9.0, 9.0, 0.0);
  std::vector<double> tau;
  for (int k = 0; k < 200; ++k) tau.push_back(0.05 * k);
  const auto env = hahn_echo_eseem(axial(253.0), hf, 901.0, 2.0, tau, true);
  for (std::size_t k = 0; k < tau.size(); ++k)
    EXPECT_NEAR(env.signal[k], std::exp(-std::pow(2.0 * tau[k] / 901.0, 2.0)), 1e-12);
}

TEST(Eseem, BoundedForRandomInputs) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> tau;
  for (int k = 0; k < 40; ++k) tau.push_back(0.37 * k);
  for (int trial = 0; trial < 20; ++trial) {
    GroundStateParams p;
    p.B_mag = 5.0 + 400.0 * u(rng);
    p.B_theta = 180.0 * u(rng);
    p.B_phi = 360.0 * u(rng);
    const auto hf = make_tensor(Nucleus::C13_I, 120 * u(rng), 120 * u(rng), 120 * u(rng), 90 * u(rng));
    const auto env = hahn_echo_eseem(p, hf, 50.0, 1.0 + 3.0 * u(rng), tau);
    for (double s : env.signal) EXPECT_LE(std::abs(s), 1.0 + 1e-9);
  }
}

namespace {

// Closed-form two-pulse modulation for an S=1 {0,−1} pair and an I=1/2 nucleus.
double mims_closed_form(const GroundStateParams& p, const HyperfineTensor& hf, double tau_us) {
  const auto a = hyperfine_matrix(hf);
  const auto b = field_vector(p);
  const double gn = hf.gamma_n * 1e-3;  // MHz/G
  double v0[3], v1[3];
  for (int c = 0; c < 3; ++c) {
    v0[c] = -gn * b[c];
    v1[c] = -a[2][c] - gn * b[c];
  }
  const double n0 = std::sqrt(v0[0] * v0[0] + v0[1] * v0[1] + v0[2] * v0[2]);
  const double n1 = std::sqrt(v1[0] * v1[0] + v1[1] * v1[1] + v1[2] * v1[2]);
  const double cosang = (v0[0] * v1[0] + v0[1] * v1[1] + v0[2] * v1[2]) / (n0 * n1);
  const double k = 1.0 - cosang * cosang;
  const double w0 = 2 * std::numbers::pi * n0 * tau_us, w1 = 2 * std::numbers::pi * n1 * tau_us;
  return 1.0 - 0.25 * k * (2 - 2 * std::cos(w0) - 2 * std::cos(w1) + std::cos(w0 + w1) + std::cos(w0 - w1));
}

}  // namespace

TEST(Eseem, SecularSimulationMatchesClosedForm) {
  for (const auto& hf : {experimental_tensor(Nucleus::C13_I), experimental_tensor(Nucleus::Si29_IIa),
                         theory_tensor(Nucleus::Si29_IIb)}) {
    for (double th : {0.0, 30.0, 70.0}) {
      GroundStateParams p;
      p.B_mag = 253.0;
      p.B_theta = th;
      p.B_phi = 20.0;
      std::vector<double> tau;
      for (int k = 0; k < 100; ++k) tau.push_back(0.031 * k);
      const auto env = hahn_echo_eseem(p, hf, std::numeric_limits<double>::infinity(), 2.0, tau, true);
      for (std::size_t k = 0; k < tau.size(); ++k) EXPECT_NEAR(env.signal[k], mims_closed_form(p, hf, tau[k]), 1e-6);
    }
  }
}

TEST(Eseem, SpectralPeaksAtManifoldNuclearFrequencies) {
  const auto hf = experimental_tensor(Nucleus::Si29_IIa);
  GroundStateParams p = axial(253.0);
  p.B_theta = 30.0;
  // Oracle: nuclear splittings within the mS=0 and mS=−1 manifolds from the
  // 6-level eigenvalues, grouped by dominant electron character.
  const auto h = gs_hamiltonian(p, hf);
  const auto es = linalg::hermitian_eigensystem(h);
  std::vector<double> e0, e1;
  for (std::size_t k = 0; k < 6; ++k) {
    double w0 = std::norm(es.vectors(2, k)) + std::norm(es.vectors(3, k));
    double w1 = std::norm(es.vectors(4, k)) + std::norm(es.vectors(5, k));
    if (w0 > 0.5) e0.push_back(es.values[k]);
    if (w1 > 0.5) e1.push_back(es.values[k]);
  }
  ASSERT_EQ(e0.size(), 2u);
  ASSERT_EQ(e1.size(), 2u);
  const double f0 = std::abs(e0[1] - e0[0]) * 1e3, f1 = std::abs(e1[1] - e1[0]) * 1e3;  // MHz

  const std::size_t n = 4096;
  const double dt = 0.02;  // µs
  std::vector<double> tau(n);
  for (std::size_t k = 0; k < n; ++k) tau[k] = dt * k;
  const auto env = hahn_echo_eseem(p, hf, std::numeric_limits<double>::infinity(), 2.0, tau);
  double mean = 0.0;
  for (double s : env.signal) mean += s;
  mean /= n;
  std::vector<double> power(n / 2);
  for (std::size_t j = 1; j < n / 2; ++j) {
    std::complex<double> acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double hann = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * k / (n - 1));
      acc += (env.signal[k] - mean) * hann * std::polar(1.0, -2 * std::numbers::pi * j * k / n);
    }
    power[j] = std::norm(acc);
  }
  const double bin = 1.0 / (n * dt);
  auto peak_near = [&](double f) {
    const auto c = static_cast<std::size_t>(std::llround(f / bin));
    std::size_t best = c;
    for (std::size_t j = c - 3; j <= c + 3; ++j)
      if (power[j] > power[best]) best = j;
    return best * bin;
  };
  // The two largest local maxima are the manifold frequencies.
  std::vector<std::pair<double, std::size_t>> maxima;
  for (std::size_t j = 2; j + 1 < n / 2; ++j)
    if (power[j] > power[j - 1] && power[j] >= power[j + 1]) maxima.push_back({power[j], j});
  std::sort(maxima.rbegin(), maxima.rend());
  ASSERT_GE(maxima.size(), 2u);
  std::vector<double> top{maxima[0].second * bin, maxima[1].second * bin};
  std::sort(top.begin(), top.end());
  EXPECT_NEAR(top[0], std::min(f0, f1), bin);
  EXPECT_NEAR(top[1], std::max(f0, f1), bin);
  EXPECT_NEAR(peak_near(f1), f1, bin);
}

TEST(DecayFit, HahnEchoRoundTrip) {
  std::mt19937_64 rng(901);
  std::normal_distribution<double> g(0.0, 0.02);
  std::vector<double> t, y;
  for (int k = 0; k < 60; ++k) {
    t.push_back(30.0 * (k + 1));
    y.push_back(std::exp(-std::pow(t.back() / 901.0, 2.0)) + g(rng));
  }
  const std::vector<double> sigma(t.size(), 0.02);
  const auto fit = fit_decay(t, y, sigma, DecayModel::StretchedExp);
  EXPECT_NEAR(fit.decay.value, 901.0, 51.0);
  EXPECT_NEAR(fit.n.value, 2.0, 0.3);
}

TEST(DecayFit, RamseyRoundTrip) {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> g(0.0, 0.02);
  std::vector<double> t, y;
  for (int k = 0; k < 200; ++k) {
    t.push_back(0.025 * k);
    y.push_back(std::exp(-std::pow(t.back() / 1.8, 2.0)) * std::cos(2 * std::numbers::pi * 3.0 * t.back()) + g(rng));
  }
  const auto fit = fit_decay(t, y, {}, DecayModel::Fringe);
  EXPECT_NEAR(fit.decay.value, 1.8, 0.1);
  EXPECT_NEAR(fit.frequency.value, 3.0, 0.01);
}

TEST(DecayFit, ConstantSignalIsNotIdentifiable) {
  std::vector<double> t, y;
  for (int k = 0; k < 30; ++k) {
    t.push_back(10.0 * (k + 1));
    y.push_back(1.0);
  }
  EXPECT_THROW(fit_decay(t, y, {}, DecayModel::StretchedExp), NonIdentifiableError);
}

TEST(Rabi, StartsAtUnity) {
  const std::vector<double> t{0.0};
  for (double c : {0.0, 0.3, 1.0}) EXPECT_EQ(rabi_trace(7.0, c, 2.0, t)[0], 1.0);
}

TEST(Rabi, ContrastRoundTrips) {
  for (auto [c, tol, noise] : {std::tuple{0.075, 0.005, 0.003}, std::tuple{0.94, 0.01, 0.01}}) {
    std::mt19937_64 rng(75);
    std::normal_distribution<double> g(0.0, noise);
    std::vector<double> t;
    for (int k = 0; k < 150; ++k) t.push_back(0.01 * k);
    auto y = rabi_trace(5.0, c, 3.0, t);
    for (auto& v : y) v += g(rng);
    const auto fit = rabi_fit(t, y);
    EXPECT_NEAR(fit.contrast.value, c, tol);
    EXPECT_NEAR(fit.frequency.value, 5.0, 0.05);
  }
}
