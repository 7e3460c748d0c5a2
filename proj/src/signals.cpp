#include "ubp/signals.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "ubp/error.hpp"

namespace ubp::signals {
namespace {

// Four running sums so the loops vectorize without reassociation flags.
double sum_of(std::span<const double> x) {
  double a[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= x.size(); i += 4) {
    for (int k = 0; k < 4; ++k) a[k] += x[i + k];
  }
  for (; i < x.size(); ++i) a[0] += x[i];
  return (a[0] + a[1]) + (a[2] + a[3]);
}

double squared_deviation(std::span<const double> x, double m) {
  double a[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= x.size(); i += 4) {
    for (int k = 0; k < 4; ++k) a[k] += (x[i + k] - m) * (x[i + k] - m);
  }
  for (; i < x.size(); ++i) a[0] += (x[i] - m) * (x[i] - m);
  return (a[0] + a[1]) + (a[2] + a[3]);
}

double mean_of(std::span<const double> x) { return sum_of(x) / static_cast<double>(x.size()); }

double stddev_of(std::span<const double> x) {
  return std::sqrt(squared_deviation(x, mean_of(x)) / static_cast<double>(x.size()));
}

struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 3> a{1.0, 0.0, 0.0};
};

std::complex<double> biquad_response(const Biquad& q, double omega) {
  const std::complex<double> z1 = std::polar(1.0, -omega);
  const std::complex<double> z2 = z1 * z1;
  return (q.b[0] + q.b[1] * z1 + q.b[2] * z2) /
         (q.a[0] + q.a[1] * z1 + q.a[2] * z2);
}

// Direct form II transposed, initial state at the step response steady state
// for the first sample.
std::vector<double> run_biquad(const Biquad& q, const std::vector<double>& x) {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  const double dc_gain = (q.b[0] + q.b[1] + q.b[2]) / (1.0 + q.a[1] + q.a[2]);
  const double u = x.front();
  const double y0 = dc_gain * u;
  double z1 = y0 - q.b[0] * u;
  double z2 = q.b[2] * u - q.a[2] * y0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double out = q.b[0] * x[i] + z1;
    z1 = q.b[1] * x[i] - q.a[1] * out + z2;
    z2 = q.b[2] * x[i] - q.a[2] * out;
    y[i] = out;
  }
  return y;
}

std::vector<Biquad> design_bandpass(double low_hz, double high_hz, double fs) {
  const double w1 = 2.0 * fs * std::tan(std::numbers::pi * low_hz / fs);
  const double w2 = 2.0 * fs * std::tan(std::numbers::pi * high_hz / fs);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;
  // Second-order Butterworth low-pass prototype pole in the upper half plane.
  const std::complex<double> proto = std::polar(1.0, 3.0 * std::numbers::pi / 4.0);
  const std::complex<double> pb = proto * bw;
  const std::complex<double> disc = std::sqrt(pb * pb - 4.0 * w0 * w0);
  const std::array<std::complex<double>, 2> analog{(pb + disc) / 2.0,
                                                    (pb - disc) / 2.0};

  std::vector<Biquad> sections;
  for (const auto& s : analog) {
    const std::complex<double> z = (2.0 * fs + s) / (2.0 * fs - s);
    Biquad q;
    q.b = {1.0, 0.0, -1.0};  // zeros at z = 1 and z = -1
    q.a = {1.0, -2.0 * z.real(), std::norm(z)};
    sections.push_back(q);
  }
  const double center = 2.0 * std::atan(w0 / (2.0 * fs));
  std::complex<double> h{1.0, 0.0};
  for (const auto& q : sections) h *= biquad_response(q, center);
  const double g = 1.0 / std::abs(h);
  for (double& c : sections.front().b) c *= g;
  return sections;
}

}  // namespace

RoiTraceSet::RoiTraceSet(std::size_t rois, std::size_t n_frames, double fps)
    : roi_count(rois),
      frame_rate(fps),
      frames(n_frames),
      values(rois * kChannels * n_frames, 0.0) {}

RoiTraceSet RoiTraceSet::slice(std::size_t start, std::size_t count) const {
  if (start + count > frames) {
    throw degenerate_input("trace slice [" + std::to_string(start) + ", " +
                           std::to_string(start + count) + ") exceeds " +
                           std::to_string(frames) + " frames");
  }
  RoiTraceSet out(roi_count, count, frame_rate);
  out.roi_labels = roi_labels;
  for (std::size_t r = 0; r < roi_count; ++r) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      auto src = channel(r, c).subspan(start, count);
      std::copy(src.begin(), src.end(), &out.at(r, c, 0));
    }
  }
  return out;
}

void RoiTraceSet::validate() const {
  if (roi_count < 1) throw degenerate_input("trace set has no ROIs");
  if (frames < 2) throw degenerate_input("trace set needs at least 2 frames");
  if (values.size() != roi_count * kChannels * frames) {
    throw degenerate_input("trace value count does not match roi_count x 3 x frames");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw degenerate_input("trace set contains non-finite values");
  }
}

std::vector<std::string> default_roi_labels() {
  return {"cheek", "inner-cheek", "forehead"};
}

RoiTraceSet spatial_average(const RoiPixels& pixels, double frame_rate) {
  if (pixels.empty() || pixels.front().empty()) {
    throw degenerate_input("no ROI pixel data");
  }
  const std::size_t frames = pixels.front().size();
  RoiTraceSet out(pixels.size(), frames, frame_rate);
  for (std::size_t r = 0; r < pixels.size(); ++r) {
    if (pixels[r].size() != frames) {
      throw degenerate_input("ROI " + std::to_string(r) + " has a different frame count");
    }
    for (std::size_t t = 0; t < frames; ++t) {
      const auto& samples = pixels[r][t];
      if (samples.empty()) {
        throw degenerate_input("empty frame " + std::to_string(t) + " in ROI " +
                               std::to_string(r));
      }
      for (std::size_t c = 0; c < kChannels; ++c) {
        double acc = 0.0;
        for (const auto& px : samples) acc += px[c];
        out.at(r, c, t) = acc / static_cast<double>(samples.size());
      }
    }
  }
  return out;
}

ZScoreStats zscore_inplace(std::span<double> values) {
  ZScoreStats stats;
  if (values.empty()) return stats;
  stats.mean = mean_of(values);
  stats.stddev = std::sqrt(squared_deviation(values, stats.mean) / static_cast<double>(values.size()));
  // Rounding noise on constant input must not be blown up to unit variance.
  if (stats.stddev <= 1e-12 * std::max(1.0, std::abs(stats.mean))) {
    stats.stddev = 0.0;
    std::fill(values.begin(), values.end(), 0.0);
    return stats;
  }
  const double inv = 1.0 / stats.stddev;
  for (double& v : values) v = (v - stats.mean) * inv;
  return stats;
}

std::vector<double> pos_pulse(const RoiTraceSet& traces, std::size_t roi,
                              double window_seconds) {
  if (traces.frame_rate <= 0.0) throw config_error("frame_rate must be positive");
  if (roi >= traces.roi_count) throw usage_error("ROI index out of range");
  const auto window = static_cast<std::size_t>(
      std::max(2.0, std::round(window_seconds * traces.frame_rate)));
  if (traces.frames < window) {
    throw degenerate_input("trace has " + std::to_string(traces.frames) +
                           " frames, POS window needs " + std::to_string(window));
  }

  std::vector<double> pulse(traces.frames, 0.0);
  std::array<std::vector<double>, kChannels> norm;
  for (auto& n : norm) n.resize(window);
  std::vector<double> s1(window), s2(window);

  for (std::size_t end = window; end <= traces.frames; ++end) {
    const std::size_t start = end - window;
    for (std::size_t c = 0; c < kChannels; ++c) {
      auto seg = traces.channel(roi, c).subspan(start, window);
      const double m = mean_of(seg);
      for (std::size_t i = 0; i < window; ++i) norm[c][i] = m > 0.0 ? seg[i] / m : 1.0;
    }
    // Projection onto the plane orthogonal to the skin tone.
    for (std::size_t i = 0; i < window; ++i) {
      s1[i] = norm[1][i] - norm[2][i];
      s2[i] = -2.0 * norm[0][i] + norm[1][i] + norm[2][i];
    }
    const double sd2 = stddev_of(s2);
    const double alpha = sd2 > 0.0 ? stddev_of(s1) / sd2 : 0.0;
    double h_mean = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
      s1[i] += alpha * s2[i];
      h_mean += s1[i];
    }
    h_mean /= static_cast<double>(window);
    for (std::size_t i = 0; i < window; ++i) pulse[start + i] += s1[i] - h_mean;
  }
  return pulse;
}

RppgWindow pos_project(const RoiTraceSet& traces, double window_seconds) {
  traces.validate();
  RppgWindow out;
  out.rows = traces.roi_count;
  out.frames = traces.frames;
  out.roi_labels = traces.roi_labels.empty() && traces.roi_count == 3
                       ? default_roi_labels()
                       : traces.roi_labels;
  out.signals.reserve(out.rows * out.frames);
  for (std::size_t r = 0; r < traces.roi_count; ++r) {
    auto pulse = pos_pulse(traces, r, window_seconds);
    zscore_inplace(pulse);
    out.signals.insert(out.signals.end(), pulse.begin(), pulse.end());
  }
  return out;
}

SpatioTemporalMap build_st_map(const RoiTraceSet& traces, std::size_t block_rows,
                               std::size_t block_cols) {
  if (traces.roi_count != block_rows * block_cols) {
    throw config_error("spatio-temporal map expects " +
                       std::to_string(block_rows * block_cols) + " blocks, got " +
                       std::to_string(traces.roi_count));
  }
  traces.validate();
  SpatioTemporalMap out;
  out.blocks = traces.roi_count;
  out.frames = traces.frames;
  out.map.resize(kChannels * out.blocks * out.frames);
  out.mean.resize(kChannels * out.blocks);
  out.stddev.resize(kChannels * out.blocks);
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (std::size_t b = 0; b < out.blocks; ++b) {
      auto src = traces.channel(b, c);
      const std::size_t offset = (c * out.blocks + b) * out.frames;
      std::copy(src.begin(), src.end(), out.map.begin() + static_cast<std::ptrdiff_t>(offset));
      const auto stats = zscore_inplace(std::span(out.map).subspan(offset, out.frames));
      out.mean[c * out.blocks + b] = stats.mean;
      out.stddev[c * out.blocks + b] = stats.stddev;
    }
  }
  return out;
}

RoiTraceSet unnormalize_st_map(const SpatioTemporalMap& map, double frame_rate) {
  RoiTraceSet out(map.blocks, map.frames, frame_rate);
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (std::size_t b = 0; b < map.blocks; ++b) {
      const double m = map.mean[c * map.blocks + b];
      const double s = map.stddev[c * map.blocks + b];
      for (std::size_t t = 0; t < map.frames; ++t) {
        out.at(b, c, t) = map.at(c, b, t) * s + m;
      }
    }
  }
  return out;
}

std::vector<double> forward_difference(std::span<const double> x) {
  std::vector<double> out;
  if (x.size() < 2) return out;
  out.resize(x.size() - 1);
  for (std::size_t j = 0; j + 1 < x.size(); ++j) out[j] = x[j + 1] - x[j];
  return out;
}

PulseTriplet derive_triplet(std::span<const double> ppg) {
  if (ppg.size() < 3) {
    throw degenerate_input("PPG needs at least 3 samples for VPG/APG, got " +
                           std::to_string(ppg.size()));
  }
  PulseTriplet t;
  t.ppg.assign(ppg.begin(), ppg.end());
  t.vpg = forward_difference(t.ppg);
  t.apg = forward_difference(t.vpg);
  return t;
}

std::vector<double> bandpass(std::span<const double> signal, double low_hz,
                             double high_hz, double fs) {
  if (!(fs > 0.0) || !(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < fs / 2.0)) {
    throw config_error("band-pass requires 0 < low < high < fs/2");
  }
  const std::size_t n = signal.size();
  if (n < 2) return {signal.begin(), signal.end()};
  const auto sections = design_bandpass(low_hz, high_hz, fs);

  // Odd extension at both ends, about one slow period long.
  const std::size_t pad = std::min(
      n - 1, std::max<std::size_t>(15, static_cast<std::size_t>(3.0 * fs / low_hz)));
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * signal[0] - signal[i]);
  ext.insert(ext.end(), signal.begin(), signal.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * signal[n - 1] - signal[n - 1 - i]);

  auto run = [&](std::vector<double> x) {
    for (const auto& q : sections) x = run_biquad(q, x);
    return x;
  };
  auto y = run(std::move(ext));
  std::reverse(y.begin(), y.end());
  y = run(std::move(y));
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad),
          y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

}  // namespace ubp::signals
