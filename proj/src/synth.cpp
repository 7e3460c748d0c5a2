#include "ubp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ubp/error.hpp"
#include "ubp/rng.hpp"

namespace ubp::synth {
namespace {

constexpr std::uint64_t kAppearanceBasisSeed = 0x5eedA99eULL;
constexpr std::uint64_t kBlockSalt = 0xb10c5ULL;
constexpr std::uint64_t kFrameAppearanceSalt = 0xface5ULL;

// Relative pulse strength per RGB channel (green carries the most).
constexpr std::array<double, 3> kPulseStrength{0.33, 0.77, 0.53};
constexpr std::array<double, 3> kRoiTone{1.0, 0.97, 1.05};
constexpr std::array<double, 3> kRoiLagShare{0.0, 0.25, 1.0};

double frac(double x) { return x - std::floor(x); }

double hashed_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return static_cast<double>(derive_seed(derive_seed(seed, a), b) >> 11) * 0x1.0p-53;
}

struct BeatClock {
  double base_phase = 0.0;
  double heart_rate = 70.0;   // BPM
  double rsa_bpm = 2.0;       // respiratory modulation depth
  double rsa_hz = 0.2;
  double rsa_offset = 0.0;

  // Integral of the instantaneous beat frequency.
  double phase(double t) const {
    const double w = 2.0 * std::numbers::pi * rsa_hz;
    return base_phase + heart_rate * t / 60.0 -
           rsa_bpm / (60.0 * w) * (std::cos(w * t + rsa_offset) - std::cos(rsa_offset));
  }
};

BeatClock make_clock(const SyntheticRecord& record) {
  Rng rng(derive_seed(record.seed, 1));
  BeatClock clock;
  clock.base_phase = rng.uniform();
  clock.heart_rate = record.heart_rate;
  clock.rsa_hz = rng.uniform(0.15, 0.3);
  clock.rsa_offset = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return clock;
}

std::vector<double> appearance_basis(std::size_t dim) {
  Rng rng(kAppearanceBasisSeed);
  std::vector<double> basis(dim * 2);
  for (double& w : basis) w = rng.normal();
  return basis;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (!(frame_rate > 0.0)) throw config_error("frame_rate must be positive");
  if (!(duration_seconds >= 5.0)) throw config_error("duration must be at least 5 s");
  if (appearance_dim == 0) throw config_error("appearance_dim must be positive");
  if (noise_sigma < 0.0 || noise_spread < 0.0 || appearance_noise < 0.0 ||
      frame_appearance_jitter < 0.0) {
    throw config_error("noise scales must be non-negative");
  }
  if (!(pulse_amplitude > 0.0)) throw config_error("pulse_amplitude must be positive");
  if (hypertensive_fraction < 0.0 || hypertensive_fraction > 1.0) {
    throw config_error("hypertensive_fraction must lie in [0, 1]");
  }
  if (session_jitter_mmhg < 0.0 || session_jitter_mmhg > 5.0) {
    throw config_error("session jitter must lie in [0, 5] mmHg");
  }
  if (block_rows == 0 || block_cols == 0) throw config_error("block grid must be non-empty");
  if (groups.empty()) throw config_error("at least one subject group is required");
  for (const auto& g : groups) {
    if (!(g.attenuation > 0.0 && g.attenuation <= 1.0)) {
      throw config_error("group '" + g.label + "' attenuation must lie in (0, 1]");
    }
    if (!(g.weight > 0.0)) throw config_error("group weights must be positive");
  }
}

double upstroke_phase(double sbp) {
  const double d = std::clamp(sbp, 80.0, 240.0) - 120.0;
  const double center = 0.28 - 0.0012 * d;
  const double width = 0.10 - 0.0003 * d;
  return center - width;
}

double pulse_shape(double phase, double sbp, double dbp) {
  const double d = std::clamp(sbp, 80.0, 240.0) - 120.0;
  const double c1 = 0.28 - 0.0012 * d;
  const double w1 = 0.10 - 0.0003 * d;
  const double c2 = c1 + 0.28 + 0.0008 * (dbp - 80.0);
  const double w2 = 0.09;
  const double r2 = std::clamp(0.55 - 0.006 * (sbp - dbp - 40.0), 0.15, 0.8);
  double v = 0.0;
  for (int k = -1; k <= 1; ++k) {
    const double p = phase + k;
    const double a = (p - c1) / w1;
    const double b = (p - c2) / w2;
    v += std::exp(-0.5 * a * a) + r2 * std::exp(-0.5 * b * b);
  }
  return v;
}

SyntheticSubject generate_subject(std::uint64_t seed, const GeneratorConfig& config,
                                  int subject_id) {
  Rng rng(seed);
  SyntheticSubject s;
  s.subject_id = subject_id;

  double total_weight = 0.0;
  for (const auto& g : config.groups) total_weight += g.weight;
  double pick = rng.uniform() * total_weight;
  const GroupSpec* group = &config.groups.back();
  for (const auto& g : config.groups) {
    if (pick < g.weight) {
      group = &g;
      break;
    }
    pick -= g.weight;
  }
  s.group_label = group->label;
  s.attenuation = group->attenuation;

  // Two-component mixture: normotensive bulk plus a hypertensive tail.
  const bool hypertensive = rng.bernoulli(config.hypertensive_fraction);
  s.sbp = std::clamp(hypertensive ? rng.normal(155.0, 15.0) : rng.normal(118.0, 12.0),
                     85.0, 230.0);
  s.dbp = std::clamp(0.5 * s.sbp + 18.0 + rng.normal(0.0, 6.0), 45.0, s.sbp - 15.0);
  s.heart_rate = std::clamp(62.0 + 0.15 * (s.sbp - 120.0) + rng.normal(0.0, 7.0), 45.0, 120.0);
  // Faster transit at higher pressure.
  s.ptt_lag = std::clamp(0.11 - 0.0006 * (s.sbp - 120.0) + rng.normal(0.0, 0.008), 0.02, 0.3);
  s.noise_sigma = config.noise_sigma * std::exp(config.noise_spread * rng.normal());
  for (std::size_t c = 0; c < 3; ++c) {
    s.skin_rgb[c] = std::array<double, 3>{170.0, 125.0, 105.0}[c] * (1.0 + 0.08 * rng.normal());
  }

  const auto basis = appearance_basis(config.appearance_dim);
  const double zs = (s.sbp - 125.0) / 20.0;
  const double zd = (s.dbp - 78.0) / 12.0;
  const double appearance_sigma =
      config.appearance_noise * std::exp(config.noise_spread * rng.normal());
  s.appearance.resize(config.appearance_dim);
  for (std::size_t i = 0; i < config.appearance_dim; ++i) {
    s.appearance[i] = basis[2 * i] * zs + basis[2 * i + 1] * zd +
                      appearance_sigma * rng.normal();
  }
  return s;
}

SyntheticRecord render_record(const SyntheticSubject& subject, double duration_seconds,
                              std::uint64_t seed, const GeneratorConfig& config,
                              int session) {
  if (!(duration_seconds >= 5.0)) {
    throw config_error("record duration must be at least 5 s, got " +
                       std::to_string(duration_seconds));
  }
  if (!(config.frame_rate > 0.0)) throw config_error("frame_rate must be positive");

  SyntheticRecord rec;
  rec.subject = subject;
  rec.session = session;
  rec.seed = seed;
  rec.record_id = "s" + std::to_string(subject.subject_id) + "_r" + std::to_string(session);

  Rng rng(seed);
  const double jitter = config.session_jitter_mmhg;
  const double ds = std::clamp(rng.normal(0.0, jitter / 2.0), -jitter, jitter);
  const double dd = std::clamp(rng.normal(0.0, jitter / 2.0), -jitter, jitter);
  rec.sbp = subject.sbp + ds;
  rec.dbp = std::min(subject.dbp + dd, rec.sbp - 10.0);
  rec.heart_rate = std::clamp(subject.heart_rate + rng.normal(0.0, 2.0), 40.0, 180.0);
  rec.ptt_lag = std::max(0.0, subject.ptt_lag - 0.0006 * ds);

  const auto frames = static_cast<std::size_t>(std::llround(duration_seconds * config.frame_rate));
  const double fps = config.frame_rate;
  const BeatClock clock = make_clock(rec);

  rec.ppg_truth.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    rec.ppg_truth[i] = pulse_shape(frac(clock.phase(i / fps)), rec.sbp, rec.dbp);
  }

  Rng noise(derive_seed(seed, 2));
  const double illum_hz = noise.uniform(0.02, 0.08);
  const double illum_offset = noise.uniform(0.0, 2.0 * std::numbers::pi);
  rec.traces = signals::RoiTraceSet(3, frames, fps);
  rec.traces.roi_labels = signals::default_roi_labels();
  const double depth = config.pulse_amplitude * subject.attenuation;
  for (std::size_t r = 0; r < 3; ++r) {
    const double lag = kRoiLagShare[r] * rec.ptt_lag;
    for (std::size_t t = 0; t < frames; ++t) {
      const double time = t / fps;
      const double illum = 1.0 + 0.02 * std::sin(2.0 * std::numbers::pi * illum_hz * time + illum_offset);
      const double pulse = pulse_shape(frac(clock.phase(time - lag)), rec.sbp, rec.dbp) - 0.3;
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = subject.skin_rgb[c] * kRoiTone[r];
        rec.traces.at(r, c, t) = std::max(
            0.0, base * illum * (1.0 + depth * kPulseStrength[c] * pulse) +
                     subject.noise_sigma * noise.normal());
      }
    }
  }
  return rec;
}

signals::RoiTraceSet render_blocks(const SyntheticRecord& record,
                                   const GeneratorConfig& config) {
  const std::size_t rows = config.block_rows;
  const std::size_t cols = config.block_cols;
  const std::size_t blocks = rows * cols;
  const std::size_t frames = record.traces.frames;
  const double fps = record.traces.frame_rate;
  const BeatClock clock = make_clock(record);
  const std::uint64_t block_seed = derive_seed(record.seed, kBlockSalt);
  const double depth = config.pulse_amplitude * record.subject.attenuation;
  const double sigma = record.subject.noise_sigma * config.block_noise_factor;

  signals::RoiTraceSet out(blocks, frames, fps);
  std::vector<double> pulse(frames);
  for (std::size_t b = 0; b < blocks; ++b) {
    const double row_share = rows > 1 ? static_cast<double>(b / cols) / (rows - 1) : 0.0;
    const double lag = 0.2 * row_share * record.ptt_lag;
    const double weight = 0.4 + 0.6 * hashed_uniform(block_seed, b, 0);
    const double tone = 0.9 + 0.2 * hashed_uniform(block_seed, b, 1);
    for (std::size_t t = 0; t < frames; ++t) {
      pulse[t] = pulse_shape(frac(clock.phase(t / fps - lag)), record.sbp, record.dbp) - 0.3;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = record.subject.skin_rgb[c] * tone;
      for (std::size_t t = 0; t < frames; ++t) {
        out.at(b, c, t) = std::max(
            0.0, base * (1.0 + depth * weight * kPulseStrength[c] * pulse[t]) +
                     sigma * hashed_normal(block_seed, b, c, t));
      }
    }
  }
  return out;
}

std::vector<double> appearance_at(const SyntheticRecord& record, std::size_t frame,
                                  const GeneratorConfig& config) {
  std::vector<double> v = record.subject.appearance;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] += config.frame_appearance_jitter *
            hashed_normal(record.seed, kFrameAppearanceSalt, frame, i);
  }
  return v;
}

std::vector<SyntheticRecord> generate_dataset(int n_subjects, int min_sessions,
                                              int max_sessions, std::uint64_t seed,
                                              const GeneratorConfig& config) {
  if (n_subjects < 5) {
    throw config_error("need at least 5 subjects, got " + std::to_string(n_subjects));
  }
  if (min_sessions < 1 || max_sessions < min_sessions) {
    throw config_error("invalid session range");
  }
  config.validate();
  std::vector<SyntheticRecord> records;
  for (int i = 0; i < n_subjects; ++i) {
    const std::uint64_t subject_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    const auto subject = generate_subject(subject_seed, config, i);
    Rng rng(derive_seed(subject_seed, 99));
    const int sessions =
        min_sessions + static_cast<int>(rng.index(static_cast<std::uint64_t>(max_sessions - min_sessions + 1)));
    for (int s = 0; s < sessions; ++s) {
      records.push_back(render_record(subject, config.duration_seconds,
                                      derive_seed(subject_seed, 1000 + static_cast<std::uint64_t>(s)),
                                      config, s));
    }
  }
  return records;
}

}  // namespace ubp::synth
