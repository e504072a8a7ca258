#pragma once

// Small dense complex linear algebra for spin Hamiltonians (dim <= 16) and
// exact propagation of linear rate systems.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "divac/errors.hpp"

namespace divac {

using cplx = std::complex<double>;

namespace linalg {

inline constexpr std::size_t kMaxDim = 16;

template <class T>
class Matrix {
 public:
  Matrix() = default;
  explicit Matrix(std::size_t dim) : dim_(dim), data_(dim * dim, T{}) {
    if (dim > kMaxDim) {
      throw InvalidArgument("matrix dimension " + std::to_string(dim) + " exceeds " +
                            std::to_string(kMaxDim));
    }
  }

  static Matrix identity(std::size_t dim) {
    Matrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m(i, i) = T{1};
    return m;
  }

  static Matrix diagonal(std::span<const T> d) {
    Matrix m(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t dim() const { return dim_; }
  T& operator()(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }
  std::span<const T> entries() const { return data_; }

  Matrix& operator+=(const Matrix& o) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Matrix& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, T s) { return a *= s; }
  friend Matrix operator*(T s, Matrix a) { return a *= s; }

  friend Matrix operator*(const Matrix& a, const Matrix& b) {
    a.check_same(b);
    const std::size_t n = a.dim_;
    Matrix c(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        const T aik = a(i, k);
        if (aik == T{}) continue;
        for (std::size_t j = 0; j < n; ++j) c(i, j) += aik * b(k, j);
      }
    }
    return c;
  }

  Matrix adjoint() const {
    Matrix m(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < dim_; ++j) m(j, i) = conj_of((*this)(i, j));
    return m;
  }

  T trace() const {
    T t{};
    for (std::size_t i = 0; i < dim_; ++i) t += (*this)(i, i);
    return t;
  }

  /// Frobenius norm.
  double norm() const {
    double s = 0.0;
    for (const auto& v : data_) s += std::norm(v);
    return std::sqrt(s);
  }

  std::vector<T> apply(std::span<const T> v) const {
    if (v.size() != dim_) throw InvalidArgument("vector length does not match matrix");
    std::vector<T> out(dim_, T{});
    for (std::size_t i = 0; i < dim_; ++i) {
      T s{};
      for (std::size_t j = 0; j < dim_; ++j) s += (*this)(i, j) * v[j];
      out[i] = s;
    }
    return out;
  }

 private:
  static T conj_of(const T& v) {
    if constexpr (std::is_same_v<T, cplx>) {
      return std::conj(v);
    } else {
      return v;
    }
  }
  void check_same(const Matrix& o) const {
    if (o.dim_ != dim_) throw InvalidArgument("matrix dimensions differ");
  }

  std::size_t dim_ = 0;
  std::vector<T> data_;
};

using ComplexMatrix = Matrix<cplx>;
using RealMatrix = Matrix<double>;
using CVector = std::vector<cplx>;

inline ComplexMatrix to_complex(const RealMatrix& m) {
  ComplexMatrix c(m.dim());
  for (std::size_t i = 0; i < m.dim(); ++i)
    for (std::size_t j = 0; j < m.dim(); ++j) c(i, j) = m(i, j);
  return c;
}

/// Kronecker product a ⊗ b.
inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
  const std::size_t na = a.dim(), nb = b.dim();
  ComplexMatrix k(na * nb);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < na; ++j)
      for (std::size_t p = 0; p < nb; ++p)
        for (std::size_t q = 0; q < nb; ++q) k(i * nb + p, j * nb + q) = a(i, j) * b(p, q);
  return k;
}

/// <a|b> with the first argument conjugated.
inline cplx inner(std::span<const cplx> a, std::span<const cplx> b) {
  cplx s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

/// <a|M|b>
inline cplx expectation(std::span<const cplx> a, const ComplexMatrix& m, std::span<const cplx> b) {
  const auto mb = m.apply(b);
  return inner(a, mb);
}

struct SpinOperators {
  ComplexMatrix x;
  ComplexMatrix y;
  ComplexMatrix z;
};

/// Spin-1 matrices in the {+1, 0, -1} basis.
inline SpinOperators spin1_operators() {
  const double r = 1.0 / std::sqrt(2.0);
  SpinOperators s{ComplexMatrix(3), ComplexMatrix(3), ComplexMatrix(3)};
  s.x(0, 1) = s.x(1, 0) = s.x(1, 2) = s.x(2, 1) = r;
  const cplx i{0.0, 1.0};
  s.y(0, 1) = -i * r;
  s.y(1, 0) = i * r;
  s.y(1, 2) = -i * r;
  s.y(2, 1) = i * r;
  s.z(0, 0) = 1.0;
  s.z(2, 2) = -1.0;
  return s;
}

/// Spin-1/2 matrices in the {+1/2, -1/2} basis.
inline SpinOperators spin_half_operators() {
  SpinOperators s{ComplexMatrix(2), ComplexMatrix(2), ComplexMatrix(2)};
  s.x(0, 1) = s.x(1, 0) = 0.5;
  s.y(0, 1) = cplx{0.0, -0.5};
  s.y(1, 0) = cplx{0.0, 0.5};
  s.z(0, 0) = 0.5;
  s.z(1, 1) = -0.5;
  return s;
}

namespace detail {

/// Cyclic Jacobi on a dense real symmetric n×n matrix stored row-major.
/// On return `a` holds the (unsorted) eigenvalues on its diagonal and `v`
/// the eigenvectors as columns. No dimension limit.
inline void jacobi_symmetric(std::vector<double>& a, std::vector<double>& v, std::size_t n) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };

  double total = 0.0;
  for (double x : a) total += x * x;
  if (total == 0.0) return;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
    if (off <= 1e-32 * total) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double app = at(p, p), aqq = at(q, q);
        if (std::abs(apq) < 1e-300) {
          at(p, q) = at(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        at(p, q) = at(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

/// Indices that sort `values` ascending (stable).
inline std::vector<std::size_t> ascending_order(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return idx;
}

inline void fix_phase(std::span<cplx> v) {
  double best = 0.0;
  for (const auto& c : v) best = std::max(best, std::abs(c));
  if (best == 0.0) return;
  // first component within round-off of the maximum, for determinism under ties
  std::size_t k = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) >= best * (1.0 - 1e-12)) {
      k = i;
      break;
    }
  }
  const cplx phase = std::conj(v[k]) / std::abs(v[k]);
  for (auto& c : v) c *= phase;
  v[k] = std::abs(v[k]);
}

}  // namespace detail

struct EigenSystem {
  std::vector<double> values;  // ascending
  ComplexMatrix vectors;       // column k pairs with values[k]

  CVector vector(std::size_t k) const {
    CVector v(vectors.dim());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = vectors(i, k);
    return v;
  }
};

/// Throws NonHermitianError naming the first offending pair.
inline void check_hermitian(const ComplexMatrix& h, double tol = 1e-12) {
  const std::size_t n = h.dim();
  double scale = 1.0;
  for (const auto& c : h.entries()) {
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag()))
      throw NonFiniteError("matrix has non-finite entries");
    scale = std::max(scale, std::abs(c));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double d = std::abs(h(i, j) - std::conj(h(j, i)));
      if (d > tol * scale) throw NonHermitianError(i, j, d);
    }
  }
}

/// Eigen-decomposition of a Hermitian matrix via cyclic Jacobi on the embedded
/// real-symmetric form [[Re, -Im], [Im, Re]]. Eigenvalues ascend; each vector
/// has its largest-magnitude component real and positive.
inline EigenSystem hermitian_eigensystem(const ComplexMatrix& h) {
  check_hermitian(h);
  const std::size_t n = h.dim();
  EigenSystem es{std::vector<double>(n), ComplexMatrix(n)};
  if (n == 0) return es;

  bool real_input = true;
  for (const auto& c : h.entries()) real_input = real_input && c.imag() == 0.0;

  std::vector<CVector> vecs;
  vecs.reserve(n);

  if (real_input) {
    // The embedded form is block-diagonal with two copies of Re(H).
    std::vector<double> a(n * n), v;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] = 0.5 * (h(i, j).real() + h(j, i).real());
    detail::jacobi_symmetric(a, v, n);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i * n + i];
    for (std::size_t k : detail::ascending_order(d)) {
      CVector c(n);
      for (std::size_t i = 0; i < n; ++i) c[i] = v[i * n + k];
      vecs.push_back(std::move(c));
    }
  } else {
    const std::size_t m = 2 * n;
    std::vector<double> a(m * m), v;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const cplx hij = 0.5 * (h(i, j) + std::conj(h(j, i)));
        a[i * m + j] = hij.real();
        a[(i + n) * m + (j + n)] = hij.real();
        a[i * m + (j + n)] = -hij.imag();
        a[(i + n) * m + j] = hij.imag();
      }
    }
    detail::jacobi_symmetric(a, v, m);
    std::vector<double> d(m);
    for (std::size_t i = 0; i < m; ++i) d[i] = a[i * m + i];
    const auto order = detail::ascending_order(d);
    const double tol = 1e-9 * std::max(1.0, h.norm());

    // Every eigenvalue of H appears twice in the embedding. Within each
    // cluster of (near-)equal values pick half as many complex vectors,
    // greedily taking the candidate with the largest residual after
    // projecting out the ones already chosen.
    std::size_t start = 0;
    while (start < m) {
      std::size_t end = start + 1;
      while (end < m && (d[order[end]] - d[order[end - 1]] <= tol || (end - start) % 2 == 1)) ++end;
      const std::size_t want = (end - start) / 2;
      std::vector<CVector> cand;
      for (std::size_t k = start; k < end; ++k) {
        CVector c(n);
        for (std::size_t i = 0; i < n; ++i) c[i] = cplx{v[i * m + order[k]], v[(i + n) * m + order[k]]};
        cand.push_back(std::move(c));
      }
      const std::size_t first_new = vecs.size();
      for (std::size_t pick = 0; pick < want; ++pick) {
        double best_norm = -1.0;
        CVector best;
        for (const auto& c : cand) {
          CVector r = c;
          for (std::size_t q = first_new; q < vecs.size(); ++q) {
            const cplx proj = inner(vecs[q], r);
            for (std::size_t i = 0; i < n; ++i) r[i] -= proj * vecs[q][i];
          }
          double nr = 0.0;
          for (const auto& x : r) nr += std::norm(x);
          if (nr > best_norm) {
            best_norm = nr;
            best = std::move(r);
          }
        }
        const double s = 1.0 / std::sqrt(best_norm);
        for (auto& x : best) x *= s;
        vecs.push_back(std::move(best));
      }
      start = end;
    }
  }

  // Rayleigh quotients give the paired eigenvalues; a final stable sort keeps
  // near-degenerate clusters in ascending order.
  std::vector<double> vals(n);
  for (std::size_t k = 0; k < n; ++k) {
    detail::fix_phase(vecs[k]);
    vals[k] = expectation(vecs[k], h, vecs[k]).real();
  }
  const auto order = detail::ascending_order(vals);
  for (std::size_t k = 0; k < n; ++k) {
    es.values[k] = vals[order[k]];
    for (std::size_t i = 0; i < n; ++i) es.vectors(i, k) = vecs[order[k]][i];
  }
  return es;
}

/// Real symmetric eigen-decomposition (ascending values, column vectors).
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;  // row-major n×n, column k pairs with values[k]
  std::size_t n = 0;
};

inline SymmetricEigen symmetric_eigensystem(std::span<const double> a_in, std::size_t n) {
  std::vector<double> a(a_in.begin(), a_in.end()), v;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = a[j * n + i] = 0.5 * (a[i * n + j] + a[j * n + i]);
  detail::jacobi_symmetric(a, v, n);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i * n + i];
  const auto order = detail::ascending_order(d);
  SymmetricEigen out{std::vector<double>(n), std::vector<double>(n * n), n};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = d[order[k]];
    double best = 0.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(v[i * n + order[k]]) > best * (1.0 + 1e-12)) {
        best = std::abs(v[i * n + order[k]]);
        arg = i;
      }
    }
    const double sign = v[arg * n + order[k]] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + k] = sign * v[i * n + order[k]];
  }
  return out;
}

/// Allocation-free cyclic Jacobi for small real symmetric matrices, for hot
/// loops. Values ascending; `vectors` row-major, column k pairs with value k.
template <std::size_t N>
struct FixedSymmetricEigen {
  std::array<double, N> values{};
  std::array<double, N * N> vectors{};
};

template <std::size_t N>
inline FixedSymmetricEigen<N> symmetric_eigensystem(std::array<double, N * N> a) {
  std::array<double, N * N> v{};
  for (std::size_t i = 0; i < N; ++i) v[i * N + i] = 1.0;
  double total = 0.0;
  for (double x : a) total += x * x;
  for (int sweep = 0; sweep < 50 && total > 0.0; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t q = p + 1; q < N; ++q) off += a[p * N + q] * a[p * N + q];
    if (off <= 1e-30 * total) break;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t q = p + 1; q < N; ++q) {
        const double apq = a[p * N + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * N + q] - a[p * N + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < N; ++k) {
          const double akp = a[k * N + p], akq = a[k * N + q];
          a[k * N + p] = c * akp - s * akq;
          a[k * N + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const double apk = a[p * N + k], aqk = a[q * N + k];
          a[p * N + k] = c * apk - s * aqk;
          a[q * N + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const double vkp = v[k * N + p], vkq = v[k * N + q];
          v[k * N + p] = c * vkp - s * vkq;
          v[k * N + q] = s * vkp + c * vkq;
        }
      }
  }
  std::array<std::size_t, N> order{};
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x * N + x] < a[y * N + y]; });
  FixedSymmetricEigen<N> out;
  for (std::size_t k = 0; k < N; ++k) {
    out.values[k] = a[order[k] * N + order[k]];
    for (std::size_t i = 0; i < N; ++i) out.vectors[i * N + k] = v[i * N + order[k]];
  }
  return out;
}

/// Matrix exponential of a real matrix by scaling and squaring with a
/// degree-16 Taylor kernel (||A/2^s||_1 <= 0.25).
inline RealMatrix expm(const RealMatrix& a) {
  const std::size_t n = a.dim();
  double norm1 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < n; ++i) col += std::abs(a(i, j));
    norm1 = std::max(norm1, col);
  }
  int squarings = 0;
  if (norm1 > 0.25) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.25)));
  const RealMatrix x = a * std::ldexp(1.0, -squarings);

  RealMatrix result = RealMatrix::identity(n);
  RealMatrix term = RealMatrix::identity(n);
  for (int k = 1; k <= 16; ++k) {
    term = term * x;
    term *= 1.0 / k;
    result += term;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;
  return result;
}

inline void check_finite(const RealMatrix& g, std::span<const double> p0, double t) {
  for (double x : g.entries())
    if (!std::isfinite(x)) throw NonFiniteError("generator has non-finite entries");
  for (double x : p0)
    if (!std::isfinite(x)) throw NonFiniteError("initial vector has non-finite entries");
  if (!std::isfinite(t)) throw NonFiniteError("propagation time is not finite");
}

/// exp(G t) p0 for a real generator G.
inline std::vector<double> propagate_linear(const RealMatrix& g, std::span<const double> p0, double t) {
  check_finite(g, p0, t);
  if (p0.size() != g.dim()) throw InvalidArgument("initial vector length does not match generator");
  return expm(g * t).apply(p0);
}

inline std::vector<double> propagate_linear(const ComplexMatrix& g, std::span<const double> p0, double t) {
  RealMatrix r(g.dim());
  for (std::size_t i = 0; i < g.dim(); ++i) {
    for (std::size_t j = 0; j < g.dim(); ++j) {
      const cplx v = g(i, j);
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw NonFiniteError("generator has non-finite entries");
      if (v.imag() != 0.0) throw InvalidArgument("generator must have real entries");
      r(i, j) = v.real();
    }
  }
  return propagate_linear(r, p0, t);
}

/// States at each of `times` (ascending, starting at or after 0) for
/// dp/dt = G p, p(0) = p0. Step propagators are reused for equal spacings.
inline std::vector<std::vector<double>> propagate_grid(const RealMatrix& g, std::span<const double> p0,
                                                       std::span<const double> times) {
  check_finite(g, p0, 0.0);
  if (p0.size() != g.dim()) throw InvalidArgument("initial vector length does not match generator");
  std::vector<std::vector<double>> out;
  out.reserve(times.size());
  std::vector<double> state(p0.begin(), p0.end());
  double now = 0.0;
  double cached_dt = -1.0;
  RealMatrix step;
  for (double t : times) {
    if (!std::isfinite(t)) throw NonFiniteError("propagation time is not finite");
    const double dt = t - now;
    if (dt < 0.0) throw InvalidArgument("propagation times must be ascending and non-negative");
    if (dt > 0.0) {
      if (std::abs(dt - cached_dt) > 1e-12 * std::max(1.0, dt)) {
        step = expm(g * dt);
        cached_dt = dt;
      }
      state = step.apply(state);
      now = t;
    }
    out.push_back(state);
  }
  return out;
}

/// Solve A x = b (dense, partial pivoting). Throws on singular A.
inline std::vector<double> solve(std::vector<double> a, std::vector<double> b, std::size_t n) {
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    if (a[piv * n + c] == 0.0) throw InvalidArgument("singular linear system");
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      if (f == 0.0) continue;
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i * n + k] * x[k];
    x[i] = s / a[i * n + i];
  }
  return x;
}

}  // namespace linalg
}  // namespace divac
