#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance harness.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "ubp/signals.hpp"

namespace ubp::oracle {

/// Frequency in [lo, hi] with the largest DFT magnitude, scanned on a fine grid.
inline double dft_peak_hz(std::span<const double> x, double fs, double lo, double hi,
                          double step = 0.002) {
  double best_f = lo;
  double best_p = -1.0;
  for (double f = lo; f <= hi + 1e-12; f += step) {
    double re = 0.0;
    double im = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
      const double a = 2.0 * std::numbers::pi * f * t / fs;
      re += x[t] * std::cos(a);
      im -= x[t] * std::sin(a);
    }
    const double p = re * re + im * im;
    if (p > best_p) {
      best_p = p;
      best_f = f;
    }
  }
  return best_f;
}

/// Lag L in [-max_lag, max_lag] maximizing the normalized overlap of
/// a[t] and b[t + L]; positive when b trails a.
inline int xcorr_lag(std::span<const double> a, std::span<const double> b, int max_lag) {
  int best = 0;
  double best_c = -1e300;
  const int n = static_cast<int>(a.size());
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double c = 0.0;
    int count = 0;
    for (int t = 0; t < n; ++t) {
      const int u = t + lag;
      if (u < 0 || u >= n) continue;
      c += a[t] * b[u];
      ++count;
    }
    c /= count;
    if (c > best_c) {
      best_c = c;
      best = lag;
    }
  }
  return best;
}

/// Skin-toned RGB traces with a blood-volume modulation at `hz`; ROI r is
/// delayed by lag_frames[r].
inline signals::RoiTraceSet modulated_traces(std::size_t frames, double fps, double hz,
                                             const std::vector<double>& lag_frames,
                                             double depth = 0.01) {
  const double skin[3] = {170.0, 125.0, 105.0};
  const double strength[3] = {0.33, 0.77, 0.53};
  signals::RoiTraceSet out(lag_frames.size(), frames, fps);
  for (std::size_t r = 0; r < lag_frames.size(); ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t t = 0; t < frames; ++t) {
        const double time = (static_cast<double>(t) - lag_frames[r]) / fps;
        out.at(r, c, t) =
            skin[c] * (1.0 + depth * strength[c] * std::sin(2.0 * std::numbers::pi * hz * time));
      }
    }
  }
  return out;
}

inline double mean_power(std::span<const double> x, std::size_t skip = 0) {
  double s = 0.0;
  for (std::size_t i = skip; i + skip < x.size(); ++i) s += x[i] * x[i];
  return s / static_cast<double>(x.size() - 2 * skip);
}

/// Minimizer of a unimodal f on [lo, hi] by golden-section search.
template <class F>
double golden_section_min(F f, double lo, double hi, double tol = 1e-9) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace ubp::oracle
