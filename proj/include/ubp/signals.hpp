#pragma once

// Pulse-signal extraction from multi-region RGB traces: spatial averaging,
// POS projection, spatio-temporal maps and PPG derivative triplets.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ubp::signals {

inline constexpr std::size_t kChannels = 3;
inline constexpr double kDefaultPosWindowSeconds = 1.6;

/// Mean RGB per ROI per frame, stored roi-major then channel then frame.
struct RoiTraceSet {
  std::size_t roi_count = 0;
  double frame_rate = 30.0;
  std::size_t frames = 0;
  std::vector<double> values;
  std::vector<std::string> roi_labels;

  RoiTraceSet() = default;
  RoiTraceSet(std::size_t rois, std::size_t n_frames, double fps);

  double& at(std::size_t roi, std::size_t channel, std::size_t frame) {
    return values[(roi * kChannels + channel) * frames + frame];
  }
  double at(std::size_t roi, std::size_t channel, std::size_t frame) const {
    return values[(roi * kChannels + channel) * frames + frame];
  }
  std::span<const double> channel(std::size_t roi, std::size_t c) const {
    return {values.data() + (roi * kChannels + c) * frames, frames};
  }

  /// Frames [start, start + count) of every ROI.
  RoiTraceSet slice(std::size_t start, std::size_t count) const;

  /// Throws degenerate_input unless frames >= 2, roi_count >= 1, all finite.
  void validate() const;

  bool operator==(const RoiTraceSet&) const = default;
};

/// Default labels for the three-ROI layout.
std::vector<std::string> default_roi_labels();

struct RppgWindow {
  std::size_t rows = 0;
  std::size_t frames = 0;
  std::vector<double> signals;  // rows x frames
  std::vector<std::string> roi_labels;

  std::span<const double> row(std::size_t k) const {
    return {signals.data() + k * frames, frames};
  }
};

struct SpatioTemporalMap {
  std::size_t blocks = 0;
  std::size_t frames = 0;
  std::vector<double> map;  // channel-major: 3 x blocks x frames
  // Per (channel, block) statistics used for normalization.
  std::vector<double> mean;
  std::vector<double> stddev;

  double at(std::size_t channel, std::size_t block, std::size_t frame) const {
    return map[(channel * blocks + block) * frames + frame];
  }
};

struct PulseTriplet {
  std::vector<double> ppg;
  std::vector<double> vpg;
  std::vector<double> apg;
};

using Rgb = std::array<double, 3>;
/// pixels[roi][frame] is the list of pixel samples for that ROI and frame.
using RoiPixels = std::vector<std::vector<std::vector<Rgb>>>;

struct ZScoreStats {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Per-ROI per-frame channel means.
RoiTraceSet spatial_average(const RoiPixels& pixels, double frame_rate);

/// Z-scores in place (population std). Zero-variance input becomes all zeros.
ZScoreStats zscore_inplace(std::span<double> values);

/// Raw (un-normalized) POS pulse of one ROI over the whole trace,
/// overlap-added from sliding windows of `window_seconds`.
std::vector<double> pos_pulse(const RoiTraceSet& traces, std::size_t roi,
                              double window_seconds = kDefaultPosWindowSeconds);

/// One z-scored POS pulse row per ROI. No band-pass filtering is applied.
RppgWindow pos_project(const RoiTraceSet& traces,
                       double window_seconds = kDefaultPosWindowSeconds);

SpatioTemporalMap build_st_map(const RoiTraceSet& traces,
                               std::size_t block_rows = 16,
                               std::size_t block_cols = 14);

/// Inverse of the map normalization, back to block traces.
RoiTraceSet unnormalize_st_map(const SpatioTemporalMap& map, double frame_rate);

PulseTriplet derive_triplet(std::span<const double> ppg);

/// Forward first difference: out[j] = x[j + 1] - x[j].
std::vector<double> forward_difference(std::span<const double> x);

/// Zero-phase Butterworth band-pass (2nd-order prototype, i.e. 4th-order
/// band-pass sections, run forward and backward). Visualization only.
std::vector<double> bandpass(std::span<const double> signal, double low_hz,
                             double high_hz, double fs);

}  // namespace ubp::signals
