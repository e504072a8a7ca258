#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "divac/errors.hpp"

namespace divac::inference {

/// Minimum-total-cost one-to-one matching of n rows (observations) onto
/// m ≥ n columns (predictions). `cost` is row-major n×m. Returns the column
/// chosen for each row. Exact bitmask dynamic programme, so m ≤ 20.
inline std::vector<std::size_t> optimal_assignment(std::span<const double> cost, std::size_t n, std::size_t m) {
  if (n > m) throw InvalidArgument("more observations than predictions to assign them to");
  if (m > 20) throw InvalidArgument("too many predictions for exact assignment");
  if (cost.size() != n * m) throw InvalidArgument("cost matrix has the wrong size");
  const std::size_t states = std::size_t{1} << m;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(states, inf);
  std::vector<std::size_t> choice(states, 0);
  best[0] = 0.0;
  for (std::size_t mask = 0; mask < states; ++mask) {
    if (best[mask] == inf) continue;
    const auto row = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (row >= n) continue;
    for (std::size_t j = 0; j < m; ++j) {
      if (mask & (std::size_t{1} << j)) continue;
      const std::size_t next = mask | (std::size_t{1} << j);
      const double c = best[mask] + cost[row * m + j];
      if (c < best[next]) {
        best[next] = c;
        choice[next] = j;
      }
    }
  }
  std::size_t end = 0;
  double end_cost = inf;
  for (std::size_t mask = 0; mask < states; ++mask) {
    if (static_cast<std::size_t>(__builtin_popcountll(mask)) != n) continue;
    if (best[mask] < end_cost) {
      end_cost = best[mask];
      end = mask;
    }
  }
  std::vector<std::size_t> out(n);
  for (std::size_t row = n; row-- > 0;) {
    out[row] = choice[end];
    end &= ~(std::size_t{1} << out[row]);
  }
  return out;
}

/// Minimum total cost only, without allocations, for m ≤ 8 predictions.
inline double min_assignment_cost(const double* cost, std::size_t n, std::size_t m) {
  if (n > m || m > 8) throw InvalidArgument("min_assignment_cost needs n ≤ m ≤ 8");
  constexpr double inf = std::numeric_limits<double>::infinity();
  double best[256];
  const std::size_t states = std::size_t{1} << m;
  std::fill(best, best + states, inf);
  best[0] = 0.0;
  double out = inf;
  for (std::size_t mask = 0; mask < states; ++mask) {
    if (best[mask] == inf) continue;
    const auto row = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (row == n) {
      out = std::min(out, best[mask]);
      continue;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (mask & (std::size_t{1} << j)) continue;
      const std::size_t next = mask | (std::size_t{1} << j);
      best[next] = std::min(best[next], best[mask] + cost[row * m + j]);
    }
  }
  return out;
}

/// log Σ over one-to-one matchings of exp(−cost/2), i.e. the Gaussian
/// likelihood of unlabeled observations summed over labelings; m ≤ 8.
inline double log_sum_assignments(const double* cost, std::size_t n, std::size_t m) {
  if (n > m || m > 8) throw InvalidArgument("log_sum_assignments needs n ≤ m ≤ 8");
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  double acc[256];
  const std::size_t states = std::size_t{1} << m;
  std::fill(acc, acc + states, ninf);
  acc[0] = 0.0;
  double out = ninf;
  auto add = [](double a, double b) {
    if (a == ninf) return b;
    if (b == ninf) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
  };
  for (std::size_t mask = 0; mask < states; ++mask) {
    if (acc[mask] == ninf) continue;
    const auto row = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (row == n) {
      out = add(out, acc[mask]);
      continue;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (mask & (std::size_t{1} << j)) continue;
      const std::size_t next = mask | (std::size_t{1} << j);
      acc[next] = add(acc[next], acc[mask] - 0.5 * cost[row * m + j]);
    }
  }
  return out;
}

}  // namespace divac::inference
