#pragma once

// Synthetic subjects and recordings with known blood pressure. Pulse
// morphology, inter-ROI transit lag and appearance features all depend on
// BP so every modality has something to learn from.

#include <cstdint>
#include <string>
#include <vector>

#include "ubp/signals.hpp"

namespace ubp::synth {

struct GroupSpec {
  std::string label;
  double attenuation = 1.0;  // pulse amplitude factor in (0, 1]
  double weight = 1.0;       // relative sampling frequency
};

struct GeneratorConfig {
  double frame_rate = 30.0;
  double duration_seconds = 10.0;
  std::size_t appearance_dim = 8;
  double noise_sigma = 0.3;           // camera units, ROI traces
  double noise_spread = 0.5;          // log-sd of the per-subject trace and appearance noise factors
  double block_noise_factor = 4.0;    // blocks average fewer pixels
  double pulse_amplitude = 0.01;      // relative modulation depth
  double appearance_noise = 1.5;
  double frame_appearance_jitter = 0.05;
  double hypertensive_fraction = 0.12;
  double session_jitter_mmhg = 5.0;   // hard bound on per-session offset
  std::size_t block_rows = 16;
  std::size_t block_cols = 14;
  std::vector<GroupSpec> groups{{"A", 1.0, 1.0}};

  /// Throws config_error on out-of-range settings.
  void validate() const;
};

struct SyntheticSubject {
  int subject_id = 0;
  double sbp = 120.0;
  double dbp = 80.0;
  double heart_rate = 70.0;
  double ptt_lag = 0.1;  // seconds, forehead behind cheek
  std::vector<double> appearance;
  double noise_sigma = 0.0;
  double attenuation = 1.0;
  std::string group_label;
  std::array<double, 3> skin_rgb{160.0, 120.0, 100.0};

  bool operator==(const SyntheticSubject&) const = default;
};

struct SyntheticRecord {
  std::string record_id;
  SyntheticSubject subject;
  int session = 0;
  std::uint64_t seed = 0;
  double sbp = 0.0;  // session labels
  double dbp = 0.0;
  double heart_rate = 0.0;
  double ptt_lag = 0.0;
  signals::RoiTraceSet traces;
  std::vector<double> ppg_truth;

  bool operator==(const SyntheticRecord&) const = default;
};

/// Clean pulse waveform value at beat phase in [0, 1). The systolic upstroke
/// moves earlier in the beat as SBP rises; DBP shapes the dicrotic lobe.
double pulse_shape(double phase, double sbp, double dbp);

/// Beat phase of the systolic upstroke (steepest rise) for the given BP.
double upstroke_phase(double sbp);

SyntheticSubject generate_subject(std::uint64_t seed, const GeneratorConfig& config,
                                  int subject_id = 0);

/// Session labels, heart rate and lag are derived from the subject and seed.
SyntheticRecord render_record(const SyntheticSubject& subject, double duration_seconds,
                              std::uint64_t seed, const GeneratorConfig& config = {},
                              int session = 0);

/// Renders the block_rows x block_cols face-block traces for the record.
signals::RoiTraceSet render_blocks(const SyntheticRecord& record,
                                   const GeneratorConfig& config);

/// Appearance vector observed at one frame of the record.
std::vector<double> appearance_at(const SyntheticRecord& record, std::size_t frame,
                                  const GeneratorConfig& config);

std::vector<SyntheticRecord> generate_dataset(int n_subjects, int min_sessions,
                                              int max_sessions, std::uint64_t seed,
                                              const GeneratorConfig& config = {});

}  // namespace ubp::synth
