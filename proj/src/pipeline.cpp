#include "ubp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ubp/error.hpp"
#include "ubp/rng.hpp"

namespace ubp::pipeline {
namespace {

constexpr std::size_t kEvalChunk = 32;

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

std::vector<int> sorted(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

nlohmann::json FoldPlan::to_json() const {
  nlohmann::json j;
  j["fold_count"] = fold_count;
  j["seed"] = seed;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : folds) {
    j["folds"].push_back({{"train", f.train}, {"validation", f.validation}, {"test", f.test}});
  }
  return j;
}

std::string FoldPlan::digest() const { return nn::sha256_hex(to_json().dump()); }

FoldPlan make_folds(std::span<const int> subject_ids, int fold_count, std::uint64_t seed,
                    double validation_fraction) {
  if (fold_count < 2) throw config_error("fold_count must be at least 2");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw config_error("validation fraction must lie in (0, 1)");
  }
  const std::set<int> unique(subject_ids.begin(), subject_ids.end());
  std::vector<int> ids(unique.begin(), unique.end());
  if (ids.size() < static_cast<std::size_t>(fold_count)) {
    throw config_error("need at least " + std::to_string(fold_count) + " subjects for " +
                       std::to_string(fold_count) + " folds, got " + std::to_string(ids.size()));
  }
  Rng rng(seed);
  shuffle(ids, rng);

  FoldPlan plan;
  plan.fold_count = fold_count;
  plan.seed = seed;
  const std::size_t n = ids.size();
  const auto k = static_cast<std::size_t>(fold_count);
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t lo = f * n / k;
    const std::size_t hi = (f + 1) * n / k;
    FoldSplit split;
    std::vector<int> pool;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= lo && i < hi) {
        split.test.push_back(ids[i]);
      } else {
        pool.push_back(ids[i]);
      }
    }
    Rng fold_rng(derive_seed(seed, f));
    shuffle(pool, fold_rng);
    auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(pool.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, pool.size() - 1);
    split.validation.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
    split.train = sorted(std::move(split.train));
    split.validation = sorted(std::move(split.validation));
    split.test = sorted(std::move(split.test));
    plan.folds.push_back(std::move(split));
  }
  return plan;
}

FoldPlan make_folds(std::span<const synth::SyntheticRecord> records, int fold_count,
                    std::uint64_t seed, double validation_fraction) {
  std::vector<int> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.subject.subject_id);
  return make_folds(ids, fold_count, seed, validation_fraction);
}

int oversample_multiplicity(double sbp, double dbp, const OversampleThresholds& t) {
  const bool extreme = sbp < t.sbp_low || sbp > t.sbp_high || dbp < t.dbp_low || dbp > t.dbp_high;
  return extreme ? 2 : 1;
}

std::vector<std::size_t> oversample(std::span<const synth::SyntheticRecord> records,
                                    std::span<const std::size_t> selection,
                                    const OversampleThresholds& t) {
  std::vector<std::size_t> out;
  out.reserve(selection.size() * 2);
  for (auto i : selection) {
    const int copies = oversample_multiplicity(records[i].sbp, records[i].dbp, t);
    for (int c = 0; c < copies; ++c) out.push_back(i);
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw config_error("epochs must be at least 1");
  if (batch_size == 0) throw config_error("batch_size must be positive");
  for (double lr : learning_rates) {
    if (!(lr > 0.0)) throw config_error("learning rates must be positive");
  }
  for (double lr : fine_tune_learning_rates) {
    if (!(lr > 0.0)) throw config_error("fine-tuning learning rates must be positive");
  }
  if (mc_samples < 2) throw config_error("MC sample count T must be at least 2");
  if (window_frames < 3) throw config_error("window_frames must be at least 3");
  if (!(thresholds.sbp_low < thresholds.sbp_high) || !(thresholds.dbp_low < thresholds.dbp_high)) {
    throw config_error("oversampling thresholds must be ordered");
  }
  for (auto s : samples_per_video) {
    if (s == 0) throw config_error("samples_per_video must be positive");
  }
  if (lr_decay_every < 1) throw config_error("lr_decay_every must be positive");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
    throw config_error("lr_decay_factor must lie in (0, 1]");
  }
  for (double p : dropout) {
    if (p < 0.0 || p >= 1.0) throw config_error("dropout must lie in [0, 1)");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw config_error("validation_fraction must lie in (0, 1)");
  }
}

double TrainConfig::learning_rate(Modality m, int epoch, bool fine_tune) const {
  const int decays = (epoch - 1) / lr_decay_every;
  const auto& base = fine_tune ? fine_tune_learning_rates : learning_rates;
  return base[static_cast<int>(m)] * std::pow(lr_decay_factor, decays);
}

LabelScaler LabelScaler::fit(std::span<const std::array<double, 2>> labels) {
  if (labels.empty()) throw usage_error("cannot fit a label scaler on no data");
  LabelScaler s;
  for (int k = 0; k < 2; ++k) {
    double sum = 0.0;
    for (const auto& l : labels) sum += l[k];
    const double mean = sum / static_cast<double>(labels.size());
    double var = 0.0;
    for (const auto& l : labels) var += (l[k] - mean) * (l[k] - mean);
    const double sd = std::sqrt(var / static_cast<double>(labels.size()));
    if (!(sd > 0.0)) throw degenerate_input("training labels have zero variance");
    s.mean[k] = mean;
    s.stddev[k] = sd;
  }
  s.fitted = true;
  return s;
}

double LabelScaler::scale(double value, uq::Target t) const {
  if (!fitted) throw usage_error("label scaler used before fitting");
  const int k = static_cast<int>(t);
  return (value - mean[k]) / stddev[k];
}

double LabelScaler::unscale(double value, uq::Target t) const {
  if (!fitted) throw usage_error("label scaler used before fitting");
  const int k = static_cast<int>(t);
  return value * stddev[k] + mean[k];
}

std::vector<double> LabelScaler::scale(std::span<const double> values, uq::Target t) const {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(scale(v, t));
  return out;
}

std::vector<double> LabelScaler::unscale(std::span<const double> values, uq::Target t) const {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(unscale(v, t));
  return out;
}

nlohmann::json LabelScaler::to_json() const {
  if (!fitted) throw usage_error("cannot serialize an unfitted label scaler");
  return {{"mean", mean}, {"stddev", stddev}};
}

LabelScaler LabelScaler::from_json(const nlohmann::json& j) {
  LabelScaler s;
  s.mean = j.at("mean").get<std::array<double, 2>>();
  s.stddev = j.at("stddev").get<std::array<double, 2>>();
  if (!(s.stddev[0] > 0.0 && s.stddev[1] > 0.0)) throw integrity_error("label scaler stddev must be positive");
  s.fitted = true;
  return s;
}

std::string LabelScaler::digest() const { return nn::sha256_hex(to_json().dump()); }

std::size_t sample_window_start(std::size_t frames, std::size_t window, std::uint64_t seed) {
  if (frames < window) {
    throw degenerate_input("record has " + std::to_string(frames) + " frames, window needs " +
                           std::to_string(window));
  }
  Rng rng(seed);
  return static_cast<std::size_t>(rng.index(frames - window + 1));
}

WindowSource::WindowSource(std::span<const synth::SyntheticRecord> records,
                           synth::GeneratorConfig gen, std::size_t window)
    : records_(records), gen_(std::move(gen)), window_(window) {}

void WindowSource::prepare(Modality m) {
  std::vector<std::size_t> all(records_.size());
  std::iota(all.begin(), all.end(), 0);
  prepare(m, all);
}

void WindowSource::prepare(Modality m, std::span<const std::size_t> selection) {
  if (m == Modality::kRppg) {
    pos_.resize(records_.size());
    for (auto i : selection) {
      if (!pos_[i].empty()) continue;
      const auto& r = records_[i];
      std::vector<double> rows;
      rows.reserve(r.traces.roi_count * r.traces.frames);
      for (std::size_t k = 0; k < r.traces.roi_count; ++k) {
        const auto pulse = signals::pos_pulse(r.traces, k);
        rows.insert(rows.end(), pulse.begin(), pulse.end());
      }
      pos_[i] = std::move(rows);
    }
  }
  if (m == Modality::kPpg) {
    blocks_.resize(records_.size());
    for (auto i : selection) {
      if (!blocks_[i].empty()) continue;
      const auto traces = synth::render_blocks(records_[i], gen_);
      // Channel-major to match the spatio-temporal map layout.
      std::vector<float> cache(traces.values.size());
      const std::size_t nb = traces.roi_count;
      for (std::size_t c = 0; c < signals::kChannels; ++c) {
        for (std::size_t b = 0; b < nb; ++b) {
          auto src = traces.channel(b, c);
          std::copy(src.begin(), src.end(),
                    cache.begin() + static_cast<std::ptrdiff_t>((c * nb + b) * traces.frames));
        }
      }
      blocks_[i] = std::move(cache);
    }
  }
}

WindowSource WindowSource::rebound(std::span<const synth::SyntheticRecord> records) const {
  if (records.size() != records_.size()) {
    throw usage_error("rebound needs the same number of records");
  }
  WindowSource out = *this;
  out.records_ = records;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i] == records_[i]) continue;
    if (i < out.pos_.size()) out.pos_[i].clear();
    if (i < out.blocks_.size()) out.blocks_[i].clear();
  }
  return out;
}

std::size_t WindowSource::input_size(Modality m) const { return nn::numel(input_shape(m)); }

nn::Shape WindowSource::input_shape(Modality m) const {
  switch (m) {
    case Modality::kRppg: return {records_.empty() ? 3 : records_.front().traces.roi_count, window_};
    case Modality::kPpg: return {signals::kChannels * gen_.block_rows * gen_.block_cols, window_};
    case Modality::kImg: return {gen_.appearance_dim};
  }
  return {};
}

std::size_t WindowSource::draw_start(std::size_t record, std::uint64_t seed) const {
  return sample_window_start(records_[record].traces.frames, window_, seed);
}

void WindowSource::append_input(Modality m, std::size_t record, std::size_t start,
                                std::vector<double>& out) const {
  const auto& rec = records_[record];
  if (start + window_ > rec.traces.frames) throw degenerate_input("window exceeds record");
  switch (m) {
    case Modality::kRppg: {
      if (record >= pos_.size() || pos_[record].empty()) {
        throw usage_error("rPPG cache not prepared for " + rec.record_id);
      }
      const auto& rows = pos_[record];
      const std::size_t frames = rec.traces.frames;
      for (std::size_t k = 0; k < rec.traces.roi_count; ++k) {
        const std::size_t at = out.size();
        out.insert(out.end(), rows.begin() + static_cast<std::ptrdiff_t>(k * frames + start),
                   rows.begin() + static_cast<std::ptrdiff_t>(k * frames + start + window_));
        signals::zscore_inplace(std::span(out).subspan(at, window_));
      }
      break;
    }
    case Modality::kPpg: {
      if (record >= blocks_.size() || blocks_[record].empty()) {
        throw usage_error("block cache not prepared for " + rec.record_id);
      }
      const auto& cache = blocks_[record];
      const std::size_t frames = rec.traces.frames;
      const std::size_t rows = cache.size() / frames;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t at = out.size();
        const float* src = cache.data() + r * frames + start;
        out.insert(out.end(), src, src + window_);
        signals::zscore_inplace(std::span(out).subspan(at, window_));
      }
      break;
    }
    case Modality::kImg: {
      const auto v = synth::appearance_at(rec, start + window_ / 2, gen_);
      out.insert(out.end(), v.begin(), v.end());
      break;
    }
  }
}

void WindowSource::append_ppg_target(std::size_t record, std::size_t start,
                                     std::vector<double>& out) const {
  const auto& truth = records_[record].ppg_truth;
  if (start + window_ > truth.size()) throw degenerate_input("window exceeds PPG record");
  const std::size_t at = out.size();
  out.insert(out.end(), truth.begin() + static_cast<std::ptrdiff_t>(start),
             truth.begin() + static_cast<std::ptrdiff_t>(start + window_));
  signals::zscore_inplace(std::span(out).subspan(at, window_));
}

WindowInputs sample_window(const synth::SyntheticRecord& record,
                           const synth::GeneratorConfig& gen, std::size_t window,
                           std::uint64_t seed) {
  std::span<const synth::SyntheticRecord> one(&record, 1);
  WindowSource source(one, gen, window);
  WindowInputs w;
  w.start = source.draw_start(0, seed);
  source.prepare(Modality::kRppg);
  source.prepare(Modality::kPpg);
  source.append_input(Modality::kRppg, 0, w.start, w.rppg);
  source.append_input(Modality::kPpg, 0, w.start, w.st_map);
  source.append_input(Modality::kImg, 0, w.start, w.appearance);
  source.append_ppg_target(0, w.start, w.ppg_target);
  return w;
}

nn::NetworkSpec network_for(Modality m, const TrainConfig& config, const WindowSource& source) {
  const auto& gen = source.generator();
  const double p = config.dropout[static_cast<int>(m)];
  switch (m) {
    case Modality::kRppg: return nn::rppg_network(source.input_shape(m)[0], config.window_frames, p);
    case Modality::kPpg: return nn::ppg_network(gen.block_rows * gen.block_cols, config.window_frames, p);
    case Modality::kImg: return nn::image_network(gen.appearance_dim, p);
  }
  throw config_error("unknown modality");
}

std::vector<std::size_t> records_for(std::span<const synth::SyntheticRecord> records,
                                     std::span<const int> subjects) {
  const std::set<int> wanted(subjects.begin(), subjects.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (wanted.count(records[i].subject.subject_id)) out.push_back(i);
  }
  return out;
}

LabelScaler fit_scaler(std::span<const synth::SyntheticRecord> records,
                       std::span<const std::size_t> selection) {
  std::vector<std::array<double, 2>> labels;
  labels.reserve(selection.size());
  for (auto i : selection) labels.push_back({records[i].sbp, records[i].dbp});
  return LabelScaler::fit(labels);
}

namespace {

struct Batch {
  std::vector<double> inputs;
  std::vector<double> labels;   // normalized (sbp, dbp) pairs
  std::vector<double> targets;  // PPG windows, pulse network only
  std::size_t size = 0;
};

struct WindowRef {
  std::size_t record;
  std::size_t start;
};

Batch make_batch(Modality m, std::span<const WindowRef> refs, const WindowSource& source,
                 const LabelScaler& scaler) {
  Batch b;
  b.size = refs.size();
  b.inputs.reserve(refs.size() * source.input_size(m));
  for (const auto& r : refs) {
    source.append_input(m, r.record, r.start, b.inputs);
    const auto& rec = source.record(r.record);
    b.labels.push_back(scaler.scale(rec.sbp, uq::Target::kSbp));
    b.labels.push_back(scaler.scale(rec.dbp, uq::Target::kDbp));
    if (m == Modality::kPpg) source.append_ppg_target(r.record, r.start, b.targets);
  }
  return b;
}

double evaluation_loss(Modality m, const nn::NetworkSpec& spec, const nn::ParameterSet& params,
                       std::span<const WindowRef> refs, const WindowSource& source,
                       const LabelScaler& scaler, const nn::PulseWeights& weights) {
  double total = 0.0;
  for (std::size_t at = 0; at < refs.size(); at += kEvalChunk) {
    const auto chunk = refs.subspan(at, std::min(kEvalChunk, refs.size() - at));
    const Batch b = make_batch(m, chunk, source, scaler);
    const auto pred = nn::predict(spec, params, b.inputs, b.size, false, 0);
    std::vector<std::array<double, 2>> labels(b.size);
    for (std::size_t i = 0; i < b.size; ++i) labels[i] = {b.labels[2 * i], b.labels[2 * i + 1]};
    double loss = nn::nll_loss(pred.outputs, labels);
    if (m == Modality::kPpg) {
      const std::size_t len = pred.pulse_length;
      std::vector<signals::PulseTriplet> p, t;
      for (std::size_t i = 0; i < b.size; ++i) {
        p.push_back(signals::derive_triplet(std::span(pred.pulse).subspan(i * len, len)));
        t.push_back(signals::derive_triplet(std::span(b.targets).subspan(i * len, len)));
      }
      loss = nn::joint_ppg_loss(nn::pulse_loss(p, t, weights), loss);
    }
    total += loss * static_cast<double>(b.size);
  }
  return total / static_cast<double>(refs.size());
}

}  // namespace

TrainResult train_modality(Modality m, const FoldSplit& fold, int fold_index,
                           const TrainConfig& config, WindowSource& source, std::uint64_t seed,
                           const TrainOptions& options) {
  config.validate();
  if (source.window() != config.window_frames) {
    throw config_error("window source and training config disagree on window length");
  }
  source.prepare(m);

  const auto records = source.records();
  const auto train_idx = records_for(records, fold.train);
  const auto val_idx = records_for(records, fold.validation);
  if (train_idx.empty() || val_idx.empty()) {
    throw degenerate_input("fold " + std::to_string(fold_index) + " has no training or validation records");
  }

  TrainResult result;
  result.scaler = fit_scaler(records, train_idx);
  const auto items = m == Modality::kImg ? train_idx : oversample(records, train_idx, config.thresholds);

  const nn::NetworkSpec spec = network_for(m, config, source);
  nn::ParameterSet params;
  if (options.init_from) {
    if (nn::to_json(options.init_from->spec) != nn::to_json(spec)) {
      throw config_error("--init-from checkpoint architecture does not match " + uq::to_string(m));
    }
    params = options.init_from->params;
  } else {
    params = nn::init_parameters(spec, derive_seed(seed, 1));
  }
  nn::zero_grad(params);
  nn::AdamState adam;

  const std::size_t windows = config.samples_per_video[static_cast<int>(m)];
  std::vector<WindowRef> val_refs;
  for (auto r : val_idx) {
    for (std::size_t w = 0; w < windows; ++w) {
      val_refs.push_back({r, source.draw_start(r, derive_seed(derive_seed(seed, 2), r * 131 + w))});
    }
  }

  nn::ParameterSet best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.learning_rate(m, epoch, options.init_from != nullptr);
    const std::uint64_t epoch_seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch));
    std::vector<WindowRef> refs;
    refs.reserve(items.size() * windows);
    for (std::size_t i = 0; i < items.size(); ++i) {
      for (std::size_t w = 0; w < windows; ++w) {
        refs.push_back({items[i], source.draw_start(items[i], derive_seed(epoch_seed, i * 7919 + w))});
      }
    }
    Rng order(derive_seed(epoch_seed, 0xfeed));
    shuffle(refs, order);

    double train_total = 0.0;
    for (std::size_t at = 0, step = 0; at < refs.size(); at += config.batch_size, ++step) {
      const auto chunk = std::span(refs).subspan(at, std::min(config.batch_size, refs.size() - at));
      Batch b = make_batch(m, chunk, source, result.scaler);
      nn::Tape tape;
      nn::Shape shape{b.size};
      const auto per = source.input_shape(m);
      shape.insert(shape.end(), per.begin(), per.end());
      nn::Var x = tape.constant(shape, std::move(b.inputs));
      const auto pass = nn::forward(tape, spec, params, x, true, derive_seed(epoch_seed, 0xd0 + step));
      nn::Var loss = nn::nll(pass.head, b.labels);
      if (m == Modality::kPpg) {
        loss = nn::joint_ppg_loss(nn::pulse_loss(*pass.pulse, b.targets, config.pulse_weights), loss);
      }
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw numerical_failure(uq::to_string(m) + " fold " + std::to_string(fold_index) +
                                ": non-finite training loss at epoch " + std::to_string(epoch));
      }
      train_total += value * static_cast<double>(b.size);
      tape.backward(loss);
      nn::optimizer_step(params, adam, lr);
      nn::zero_grad(params);
    }
    const double train_loss = train_total / static_cast<double>(refs.size());
    const double val_loss = evaluation_loss(m, spec, params, val_refs, source, result.scaler,
                                            config.pulse_weights);
    if (!std::isfinite(val_loss)) {
      throw numerical_failure(uq::to_string(m) + " fold " + std::to_string(fold_index) +
                              ": non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.train_losses.push_back(train_loss);
    result.validation_losses.push_back(val_loss);
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best_epoch = epoch;
      best = params;
    }
    if (options.on_epoch) options.on_epoch(epoch, train_loss, val_loss);
  }

  nn::zero_grad(best);
  result.checkpoint.spec = spec;
  result.checkpoint.params = std::move(best);
  result.checkpoint.modality = uq::to_string(m);
  result.checkpoint.fold = fold_index;
  result.checkpoint.seed = seed;
  result.checkpoint.epoch = best_epoch;
  result.checkpoint.validation_loss = best_loss;
  result.checkpoint.extra = {{"scaler", result.scaler.to_json()},
                             {"train_losses", result.train_losses},
                             {"validation_losses", result.validation_losses}};
  return result;
}

}  // namespace ubp::pipeline
