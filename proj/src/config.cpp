#include "ubp/config.hpp"

#include <algorithm>
#include <sstream>

#include "ubp/error.hpp"

namespace ubp {
namespace {

using nlohmann::json;

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(where + "." + key + ": " + e.what());
  }
}

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw config_error(where + " must be a JSON object");
}

}  // namespace

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  require_object(j, where);
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw config_error("unknown key '" + where + "." + key + "'");
    }
  }
}

void ExperimentConfig::validate() const {
  if (subjects < folds) {
    throw config_error("need at least " + std::to_string(folds) + " subjects for " +
                       std::to_string(folds) + " folds, got " + std::to_string(subjects));
  }
  if (subjects < 5) throw config_error("need at least 5 subjects, got " + std::to_string(subjects));
  if (folds < 2) throw config_error("folds must be at least 2");
  if (min_sessions < 1 || max_sessions < min_sessions) throw config_error("invalid session range");
  if (modalities.empty()) throw config_error("no modalities selected");
  if (workers == 0) throw config_error("workers must be positive");
  generator.validate();
  train.validate();
  if (train.window_frames > static_cast<std::size_t>(generator.frame_rate * generator.duration_seconds)) {
    throw config_error("window_frames exceeds the record length");
  }
}

json to_json(const synth::GeneratorConfig& g) {
  json groups = json::array();
  for (const auto& s : g.groups) {
    groups.push_back({{"label", s.label}, {"attenuation", s.attenuation}, {"weight", s.weight}});
  }
  return {{"frame_rate", g.frame_rate},
          {"duration_seconds", g.duration_seconds},
          {"appearance_dim", g.appearance_dim},
          {"noise_sigma", g.noise_sigma},
          {"noise_spread", g.noise_spread},
          {"block_noise_factor", g.block_noise_factor},
          {"pulse_amplitude", g.pulse_amplitude},
          {"appearance_noise", g.appearance_noise},
          {"frame_appearance_jitter", g.frame_appearance_jitter},
          {"hypertensive_fraction", g.hypertensive_fraction},
          {"session_jitter_mmhg", g.session_jitter_mmhg},
          {"block_rows", g.block_rows},
          {"block_cols", g.block_cols},
          {"groups", groups}};
}

synth::GeneratorConfig generator_from_json(const json& j, synth::GeneratorConfig g) {
  const std::string where = "generator";
  check_keys(j,
             {"frame_rate", "duration_seconds", "appearance_dim", "noise_sigma", "noise_spread",
              "block_noise_factor", "pulse_amplitude", "appearance_noise",
              "frame_appearance_jitter", "hypertensive_fraction", "session_jitter_mmhg",
              "block_rows", "block_cols", "groups"},
             where);
  read(j, "frame_rate", g.frame_rate, where);
  read(j, "duration_seconds", g.duration_seconds, where);
  read(j, "appearance_dim", g.appearance_dim, where);
  read(j, "noise_sigma", g.noise_sigma, where);
  read(j, "noise_spread", g.noise_spread, where);
  read(j, "block_noise_factor", g.block_noise_factor, where);
  read(j, "pulse_amplitude", g.pulse_amplitude, where);
  read(j, "appearance_noise", g.appearance_noise, where);
  read(j, "frame_appearance_jitter", g.frame_appearance_jitter, where);
  read(j, "hypertensive_fraction", g.hypertensive_fraction, where);
  read(j, "session_jitter_mmhg", g.session_jitter_mmhg, where);
  read(j, "block_rows", g.block_rows, where);
  read(j, "block_cols", g.block_cols, where);
  if (j.contains("groups")) {
    if (!j["groups"].is_array()) throw config_error("generator.groups must be an array");
    g.groups.clear();
    for (const auto& item : j["groups"]) {
      check_keys(item, {"label", "attenuation", "weight"}, "generator.groups[]");
      synth::GroupSpec s;
      read(item, "label", s.label, "generator.groups[]");
      read(item, "attenuation", s.attenuation, "generator.groups[]");
      read(item, "weight", s.weight, "generator.groups[]");
      if (s.label.empty() || s.label.find(',') != std::string::npos) {
        throw config_error("group labels must be non-empty and free of commas");
      }
      g.groups.push_back(s);
    }
  }
  return g;
}

json to_json(const pipeline::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rates", t.learning_rates},
          {"fine_tune_learning_rates", t.fine_tune_learning_rates},
          {"mc_samples", t.mc_samples},
          {"window_frames", t.window_frames},
          {"oversample",
           {{"sbp_low", t.thresholds.sbp_low},
            {"sbp_high", t.thresholds.sbp_high},
            {"dbp_low", t.thresholds.dbp_low},
            {"dbp_high", t.thresholds.dbp_high}}},
          {"samples_per_video", t.samples_per_video},
          {"lr_decay_every", t.lr_decay_every},
          {"lr_decay_factor", t.lr_decay_factor},
          {"pulse_weights",
           {{"alpha", t.pulse_weights.alpha},
            {"beta", t.pulse_weights.beta},
            {"gamma", t.pulse_weights.gamma}}},
          {"dropout", t.dropout},
          {"validation_fraction", t.validation_fraction}};
}

pipeline::TrainConfig train_from_json(const json& j, pipeline::TrainConfig t) {
  const std::string where = "train";
  check_keys(j,
             {"epochs", "batch_size", "learning_rates", "fine_tune_learning_rates", "mc_samples",
              "window_frames", "oversample", "samples_per_video", "lr_decay_every",
              "lr_decay_factor", "pulse_weights", "dropout", "validation_fraction"},
             where);
  read(j, "epochs", t.epochs, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "learning_rates", t.learning_rates, where);
  read(j, "fine_tune_learning_rates", t.fine_tune_learning_rates, where);
  read(j, "mc_samples", t.mc_samples, where);
  read(j, "window_frames", t.window_frames, where);
  if (j.contains("oversample")) {
    const auto& o = j["oversample"];
    check_keys(o, {"sbp_low", "sbp_high", "dbp_low", "dbp_high"}, "train.oversample");
    read(o, "sbp_low", t.thresholds.sbp_low, "train.oversample");
    read(o, "sbp_high", t.thresholds.sbp_high, "train.oversample");
    read(o, "dbp_low", t.thresholds.dbp_low, "train.oversample");
    read(o, "dbp_high", t.thresholds.dbp_high, "train.oversample");
  }
  read(j, "samples_per_video", t.samples_per_video, where);
  read(j, "lr_decay_every", t.lr_decay_every, where);
  read(j, "lr_decay_factor", t.lr_decay_factor, where);
  if (j.contains("pulse_weights")) {
    const auto& w = j["pulse_weights"];
    check_keys(w, {"alpha", "beta", "gamma"}, "train.pulse_weights");
    read(w, "alpha", t.pulse_weights.alpha, "train.pulse_weights");
    read(w, "beta", t.pulse_weights.beta, "train.pulse_weights");
    read(w, "gamma", t.pulse_weights.gamma, "train.pulse_weights");
  }
  read(j, "dropout", t.dropout, where);
  read(j, "validation_fraction", t.validation_fraction, where);
  return t;
}

json to_json(const ExperimentConfig& c) {
  json modalities = json::array();
  for (auto m : c.modalities) modalities.push_back(uq::to_string(m));
  return {{"seed", c.seed},
          {"subjects", c.subjects},
          {"min_sessions", c.min_sessions},
          {"max_sessions", c.max_sessions},
          {"folds", c.folds},
          {"modalities", modalities},
          {"workers", c.workers},
          {"generator", to_json(c.generator)},
          {"train", to_json(c.train)}};
}

ExperimentConfig experiment_from_json(const json& j, ExperimentConfig c) {
  const std::string where = "config";
  check_keys(j,
             {"seed", "subjects", "min_sessions", "max_sessions", "folds", "modalities", "workers",
              "generator", "train"},
             where);
  read(j, "seed", c.seed, where);
  read(j, "subjects", c.subjects, where);
  read(j, "min_sessions", c.min_sessions, where);
  read(j, "max_sessions", c.max_sessions, where);
  read(j, "folds", c.folds, where);
  read(j, "workers", c.workers, where);
  if (j.contains("modalities")) {
    std::vector<std::string> names;
    read(j, "modalities", names, where);
    std::string joined;
    for (const auto& n : names) joined += (joined.empty() ? "" : ",") + n;
    c.modalities = parse_modalities(joined);
  }
  if (j.contains("generator")) c.generator = generator_from_json(j["generator"], c.generator);
  if (j.contains("train")) c.train = train_from_json(j["train"], c.train);
  return c;
}

std::vector<uq::Modality> parse_modalities(const std::string& list) {
  std::vector<uq::Modality> out;
  std::istringstream in(list);
  std::string name;
  while (std::getline(in, name, ',')) {
    if (name.empty()) continue;
    const auto m = uq::modality_from_string(name);
    if (std::find(out.begin(), out.end(), m) != out.end()) {
      throw config_error("modality '" + name + "' listed twice");
    }
    out.push_back(m);
  }
  if (out.empty()) throw config_error("no modalities selected");
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ubp
