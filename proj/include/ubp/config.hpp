#pragma once

// Experiment configuration and its JSON form. Parsing starts from the
// defaults, overrides only the keys present and rejects unknown keys.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubp/pipeline.hpp"
#include "ubp/synth.hpp"

namespace ubp {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int subjects = 100;
  int min_sessions = 1;
  int max_sessions = 3;
  int folds = 5;
  std::vector<uq::Modality> modalities{uq::kModalities.begin(), uq::kModalities.end()};
  /// Concurrent (fold, modality) training jobs.
  std::size_t workers = 1;
  synth::GeneratorConfig generator;
  pipeline::TrainConfig train;

  void validate() const;
  bool has_all_modalities() const { return modalities.size() == uq::kModalities.size(); }
};

/// Throws config_error naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                const std::string& where);

nlohmann::json to_json(const synth::GeneratorConfig& g);
synth::GeneratorConfig generator_from_json(const nlohmann::json& j,
                                           synth::GeneratorConfig base = {});

nlohmann::json to_json(const pipeline::TrainConfig& t);
pipeline::TrainConfig train_from_json(const nlohmann::json& j, pipeline::TrainConfig base = {});

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = {});

/// Parses "rppg,ppg,img" style lists; duplicates and unknown names are
/// configuration errors.
std::vector<uq::Modality> parse_modalities(const std::string& list);

}  // namespace ubp
