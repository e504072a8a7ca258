#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "divac/errors.hpp"

namespace divac {

/// Frequency (inverse time units of `t`) with the largest periodogram power
/// of the mean-removed signal, scanned on a grid up to the Nyquist limit of
/// the mean sample spacing. Works for non-uniform sampling.
inline double dominant_frequency(std::span<const double> t, std::span<const double> y, int oversample = 8) {
  const std::size_t n = t.size();
  if (n < 4 || y.size() != n) throw InvalidArgument("need at least four samples for a frequency estimate");
  const double span = t.back() - t.front();
  if (!(span > 0.0)) throw InvalidArgument("sample times must span a positive interval");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  const double nyquist = 0.5 * static_cast<double>(n - 1) / span;
  const double df = 1.0 / (span * oversample);
  double best_f = df, best_p = -1.0;
  for (double f = df; f <= nyquist; f += df) {
    double c = 0.0, s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ph = 2.0 * std::numbers::pi * f * t[i];
      c += (y[i] - mean) * std::cos(ph);
      s += (y[i] - mean) * std::sin(ph);
    }
    const double p = c * c + s * s;
    if (p > best_p) {
      best_p = p;
      best_f = f;
    }
  }
  return best_f;
}

}  // namespace divac
