#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "divac/linalg.hpp"

using namespace divac;
using namespace divac::linalg;

namespace {

ComplexMatrix random_hermitian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  ComplexMatrix h(n);
  for (std::size_t i = 0; i < n; ++i) {
    h(i, i) = g(rng);
    for (std::size_t j = i + 1; j < n; ++j) {
      h(i, j) = cplx{g(rng), g(rng)};
      h(j, i) = std::conj(h(i, j));
    }
  }
  return h;
}

// Number of eigenvalues below x, from the inertia of an LDL^H factorization
// of H - x I (Sylvester's law). Used as a bisection oracle.
int count_below(const ComplexMatrix& h, double x) {
  const std::size_t n = h.dim();
  std::vector<cplx> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] = h(i, j) - (i == j ? x : 0.0);
  int neg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double d = a[k * n + k].real();
    if (d == 0.0) d = -1e-300;
    if (d < 0.0) ++neg;
    for (std::size_t i = k + 1; i < n; ++i) {
      const cplx l = a[i * n + k] / d;
      for (std::size_t j = k + 1; j < n; ++j) a[i * n + j] -= l * std::conj(a[j * n + k]);
    }
  }
  return neg;
}

double bisect_eigenvalue(const ComplexMatrix& h, int k) {
  double lo = -h.norm() - 1.0, hi = h.norm() + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (count_below(h, mid) > k)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(SpinOperators, SpinOneAlgebra) {
  const auto s = spin1_operators();
  const auto comm = s.x * s.y - s.y * s.x;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_LT(std::abs(comm(i, j) - cplx{0, 1} * s.z(i, j)), 1e-14);
  const auto cas = s.x * s.x + s.y * s.y + s.z * s.z;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_LT(std::abs(cas(i, j) - (i == j ? 2.0 : 0.0)), 1e-14);
  const auto es = hermitian_eigensystem(s.z);
  EXPECT_NEAR(es.values[0], -1.0, 1e-14);
  EXPECT_NEAR(es.values[1], 0.0, 1e-14);
  EXPECT_NEAR(es.values[2], 1.0, 1e-14);
}

TEST(Eigensystem, DiagonalAndTwoByTwo) {
  ComplexMatrix d(3);
  d(0, 0) = 3;
  d(1, 1) = 1;
  d(2, 2) = 2;
  const auto es = hermitian_eigensystem(d);
  EXPECT_DOUBLE_EQ(es.values[0], 1.0);
  EXPECT_DOUBLE_EQ(es.values[1], 2.0);
  EXPECT_DOUBLE_EQ(es.values[2], 3.0);

  ComplexMatrix m(2);
  m(0, 1) = m(1, 0) = 0.7;
  const auto e2 = hermitian_eigensystem(m);
  EXPECT_NEAR(e2.values[0], -0.7, 1e-14);
  EXPECT_NEAR(e2.values[1], 0.7, 1e-14);
}

TEST(Eigensystem, MatchesCharacteristicPolynomialRoots) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = random_hermitian(6, rng);
    const auto es = hermitian_eigensystem(h);
    for (int k = 0; k < 6; ++k) EXPECT_NEAR(es.values[k], bisect_eigenvalue(h, k), 1e-8);
  }
}

TEST(Eigensystem, OrthonormalReconstructsAndTrace) {
  std::mt19937_64 rng(5);
  for (std::size_t n : {2u, 3u, 6u, 12u, 16u}) {
    const auto h = random_hermitian(n, rng);
    const auto es = hermitian_eigensystem(h);
    const auto& v = es.vectors;
    const auto vv = v.adjoint() * v;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) EXPECT_LT(std::abs(vv(i, j) - (i == j ? 1.0 : 0.0)), 1e-10);
    ComplexMatrix d(n);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      d(k, k) = es.values[k];
      sum += es.values[k];
    }
    const auto rec = v * d * v.adjoint();
    EXPECT_LT((rec - h).norm(), 1e-9 * h.norm());
    EXPECT_NEAR(sum, h.trace().real(), 1e-10 * n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto col = es.vector(k);
      const auto hv = h.apply(col);
      double r = 0.0;
      for (std::size_t i = 0; i < n; ++i) r += std::norm(hv[i] - es.values[k] * col[i]);
      EXPECT_LT(std::sqrt(r), 1e-9 * h.norm());
    }
  }
}

TEST(Eigensystem, DegenerateComplexSpectrum) {
  // Sx ⊗ 1 has doubly degenerate eigenvalues; a unitary rotation makes it complex.
  const auto s = spin1_operators();
  const auto h = kron(s.y, ComplexMatrix::identity(2)) + kron(s.z * 0.3, spin_half_operators().y);
  const auto es = hermitian_eigensystem(h);
  const auto vv = es.vectors.adjoint() * es.vectors;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_LT(std::abs(vv(i, j) - (i == j ? 1.0 : 0.0)), 1e-10);
}

TEST(Eigensystem, PhaseConventionIsDeterministic) {
  std::mt19937_64 rng(9);
  const auto h = random_hermitian(5, rng);
  const auto a = hermitian_eigensystem(h);
  const auto b = hermitian_eigensystem(h);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(a.values[k], b.values[k]);
    std::size_t arg = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(a.vectors(i, k), b.vectors(i, k));
      if (std::abs(a.vectors(i, k)) > std::abs(a.vectors(arg, k))) arg = i;
    }
    EXPECT_EQ(a.vectors(arg, k).imag(), 0.0);
    EXPECT_GT(a.vectors(arg, k).real(), 0.0);
  }
}

TEST(Eigensystem, RejectsNonHermitian) {
  ComplexMatrix h(3);
  h(0, 2) = cplx{1.0, 0.5};
  h(2, 0) = cplx{1.0, 0.5};
  try {
    hermitian_eigensystem(h);
    FAIL() << "expected rejection";
  } catch (const NonHermitianError& e) {
    EXPECT_EQ(e.row(), 0u);
    EXPECT_EQ(e.col(), 2u);
  }
}

TEST(Propagation, TrivialCases) {
  const std::vector<double> p0{0.2, 0.3, 0.5};
  const auto same = propagate_linear(RealMatrix(3), p0, 123.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(same[i], p0[i]);
  RealMatrix g(1);
  g(0, 0) = -0.37;
  const std::vector<double> one{1.0};
  EXPECT_NEAR(propagate_linear(g, one, 4.2)[0], std::exp(-0.37 * 4.2), 1e-14);
}

namespace {

RealMatrix five_level_generator() {
  // Ordering G0, G1, E0, E1, S; entry (to, from).
  const double kr = 1.0 / 23, i0 = 0.01, i1 = 0.0202, gs = 0.09, pump = 0.08;
  RealMatrix g(5);
  auto rate = [&](int from, int to, double k) {
    g(to, from) += k;
    g(from, from) -= k;
  };
  rate(0, 2, pump);
  rate(1, 3, pump);
  rate(2, 0, kr);
  rate(3, 1, kr);
  rate(2, 4, i0);
  rate(3, 4, i1);
  rate(4, 0, gs);
  return g;
}

std::vector<double> rk4(const RealMatrix& g, std::vector<double> p, double t, double h) {
  const auto n = static_cast<long>(std::llround(t / h));
  auto f = [&](const std::vector<double>& x) { return g.apply(x); };
  for (long s = 0; s < n; ++s) {
    const auto k1 = f(p);
    std::vector<double> tmp(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) tmp[i] = p[i] + 0.5 * h * k1[i];
    const auto k2 = f(tmp);
    for (std::size_t i = 0; i < p.size(); ++i) tmp[i] = p[i] + 0.5 * h * k2[i];
    const auto k3 = f(tmp);
    for (std::size_t i = 0; i < p.size(); ++i) tmp[i] = p[i] + h * k3[i];
    const auto k4 = f(tmp);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  }
  return p;
}

}  // namespace

TEST(Propagation, MatchesFineStepIntegrator) {
  const auto g = five_level_generator();
  const std::vector<double> p0{0.6, 0.4, 0.0, 0.0, 0.0};
  const auto exact = propagate_linear(g, p0, 50.0);
  const auto ref = rk4(g, p0, 50.0, 1e-3);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(exact[i], ref[i], 1e-8);
}

TEST(Propagation, ConservesPopulationAndPositivity) {
  const auto g = five_level_generator();
  const std::vector<double> p0{0.0, 1.0, 0.0, 0.0, 0.0};
  std::vector<double> times;
  for (int k = 0; k <= 200; ++k) times.push_back(50.0 * k);
  const auto states = propagate_grid(g, p0, times);
  for (const auto& s : states) {
    double sum = 0.0;
    for (double x : s) {
      sum += x;
      EXPECT_GE(x, -1e-10);
    }
    EXPECT_NEAR(sum, 1.0, 1e-10);
  }
  const auto direct = propagate_linear(g, p0, 1e4);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(direct[i], states.back()[i], 1e-10);
}

TEST(Propagation, RejectsNonFinite) {
  RealMatrix g(2);
  g(0, 1) = std::nan("");
  const std::vector<double> p0{1.0, 0.0};
  EXPECT_THROW(propagate_linear(g, p0, 1.0), NonFiniteError);
  ComplexMatrix c(2);
  c(0, 1) = cplx{0.0, 1.0};
  EXPECT_THROW(propagate_linear(c, p0, 1.0), InvalidArgument);
}

TEST(Solve, SmallSystem) {
  const auto x = solve({2, 1, 1, 3}, {3, 5}, 2);
  EXPECT_NEAR(x[0], 0.8, 1e-14);
  EXPECT_NEAR(x[1], 1.4, 1e-14);
}
