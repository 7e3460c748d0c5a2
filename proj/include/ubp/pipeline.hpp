#pragma once

// Subject-disjoint fold planning, oversampling, window sampling, label
// scaling and the per-modality training loop.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubp/checkpoint.hpp"
#include "ubp/synth.hpp"
#include "ubp/uncertainty.hpp"

namespace ubp::pipeline {

using uq::Modality;

struct FoldSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

struct FoldPlan {
  int fold_count = 5;
  std::uint64_t seed = 0;
  std::vector<FoldSplit> folds;

  nlohmann::json to_json() const;
  std::string digest() const;
};

/// Subject-level K-fold partition; validation is the given fraction of each
/// fold's training subjects.
FoldPlan make_folds(std::span<const int> subject_ids, int fold_count, std::uint64_t seed,
                    double validation_fraction = 0.2);
FoldPlan make_folds(std::span<const synth::SyntheticRecord> records, int fold_count,
                    std::uint64_t seed, double validation_fraction = 0.2);

struct OversampleThresholds {
  double sbp_low = 110.0;
  double sbp_high = 150.0;
  double dbp_low = 70.0;
  double dbp_high = 100.0;
};

/// 2 when any bound is strictly exceeded, else 1.
int oversample_multiplicity(double sbp, double dbp, const OversampleThresholds& t = {});

/// Indices into `records`, with out-of-range records listed twice.
std::vector<std::size_t> oversample(std::span<const synth::SyntheticRecord> records,
                                    std::span<const std::size_t> selection,
                                    const OversampleThresholds& t = {});

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 128;
  std::array<double, 3> learning_rates{1e-3, 1e-3, 1e-4};
  std::array<double, 3> fine_tune_learning_rates{1e-4, 1e-5, 1e-4};
  std::size_t mc_samples = 10;
  std::size_t window_frames = 150;
  OversampleThresholds thresholds;
  /// Windows drawn per record, per epoch in training and once at test time.
  std::array<std::size_t, 3> samples_per_video{60, 10, 3};
  int lr_decay_every = 10;
  double lr_decay_factor = 0.5;
  nn::PulseWeights pulse_weights;
  std::array<double, 3> dropout{0.2, 0.5, 0.5};
  double validation_fraction = 0.2;

  void validate() const;
  /// Epochs count from 1.
  double learning_rate(Modality m, int epoch, bool fine_tune = false) const;
};

struct LabelScaler {
  std::array<double, 2> mean{};
  std::array<double, 2> stddev{};
  bool fitted = false;

  static LabelScaler fit(std::span<const std::array<double, 2>> labels);
  double scale(double value, uq::Target t) const;
  double unscale(double value, uq::Target t) const;
  std::vector<double> scale(std::span<const double> values, uq::Target t) const;
  std::vector<double> unscale(std::span<const double> values, uq::Target t) const;

  nlohmann::json to_json() const;
  static LabelScaler from_json(const nlohmann::json& j);
  std::string digest() const;
};

/// Uniform start index in [0, frames - F].
std::size_t sample_window_start(std::size_t frames, std::size_t window, std::uint64_t seed);

struct WindowInputs {
  std::size_t start = 0;
  std::vector<double> rppg;        // rois x F, z-scored rows
  std::vector<double> st_map;      // 3*blocks x F, per block/channel z-scored
  std::vector<double> ppg_target;  // F, z-scored
  std::vector<double> appearance;  // middle frame
};

/// One random window of every modality input for a single record.
WindowInputs sample_window(const synth::SyntheticRecord& record,
                           const synth::GeneratorConfig& gen, std::size_t window,
                           std::uint64_t seed);

// Per-record caches (full-record POS pulses and block traces) so windows can
// be cut repeatedly without re-rendering.
class WindowSource {
 public:
  WindowSource(std::span<const synth::SyntheticRecord> records, synth::GeneratorConfig gen,
               std::size_t window);

  /// Builds the caches a modality needs. Not thread-safe.
  void prepare(Modality m);
  /// Builds the caches for the listed records only.
  void prepare(Modality m, std::span<const std::size_t> selection);
  /// Copy over other records of the same count. Cached inputs are kept only
  /// for records equal to the ones they were built from.
  WindowSource rebound(std::span<const synth::SyntheticRecord> records) const;

  std::size_t window() const { return window_; }
  std::size_t record_count() const { return records_.size(); }
  const synth::SyntheticRecord& record(std::size_t i) const { return records_[i]; }
  std::span<const synth::SyntheticRecord> records() const { return records_; }
  const synth::GeneratorConfig& generator() const { return gen_; }
  std::size_t input_size(Modality m) const;
  nn::Shape input_shape(Modality m) const;

  std::size_t draw_start(std::size_t record, std::uint64_t seed) const;
  void append_input(Modality m, std::size_t record, std::size_t start, std::vector<double>& out) const;
  void append_ppg_target(std::size_t record, std::size_t start, std::vector<double>& out) const;

 private:
  std::span<const synth::SyntheticRecord> records_;
  synth::GeneratorConfig gen_;
  std::size_t window_;
  std::vector<std::vector<double>> pos_;    // rois x frames per record
  std::vector<std::vector<float>> blocks_;  // 3*blocks x frames per record
};

nn::NetworkSpec network_for(Modality m, const TrainConfig& config, const WindowSource& source);

struct TrainResult {
  nn::Checkpoint checkpoint;
  LabelScaler scaler;
  std::vector<double> train_losses;
  std::vector<double> validation_losses;
};

struct TrainOptions {
  /// Starting point for fine-tuning instead of fresh initialization.
  const nn::Checkpoint* init_from = nullptr;
  std::function<void(int epoch, double train_loss, double validation_loss)> on_epoch;
};

/// Trains one modality on one fold and returns the lowest-validation-loss
/// epoch. Throws numerical_failure on a non-finite loss.
TrainResult train_modality(Modality m, const FoldSplit& fold, int fold_index,
                           const TrainConfig& config, WindowSource& source, std::uint64_t seed,
                           const TrainOptions& options = {});

/// Record indices whose subject is in `subjects`.
std::vector<std::size_t> records_for(std::span<const synth::SyntheticRecord> records,
                                     std::span<const int> subjects);

LabelScaler fit_scaler(std::span<const synth::SyntheticRecord> records,
                       std::span<const std::size_t> selection);

}  // namespace ubp::pipeline
