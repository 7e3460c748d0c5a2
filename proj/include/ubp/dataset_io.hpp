#pragma once

// On-disk dataset layout: one directory per record holding the ROI traces
// (CSV plus a JSON sidecar), the reference PPG and the labels, and a
// manifest listing every file with its SHA-256.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubp/config.hpp"
#include "ubp/synth.hpp"

namespace ubp::io {

/// Writes `roi,channel,frame,value` rows and `<path>.json` with the frame
/// rate, shape and ROI labels.
void write_traces_csv(const std::filesystem::path& path, const signals::RoiTraceSet& traces);
signals::RoiTraceSet read_traces_csv(const std::filesystem::path& path);

struct Dataset {
  std::vector<synth::SyntheticRecord> records;
  synth::GeneratorConfig generator;
  nlohmann::json manifest;
};

/// Writes the dataset under `dir` and returns the manifest digest.
std::string save_dataset(const std::filesystem::path& dir,
                         const std::vector<synth::SyntheticRecord>& records,
                         const ExperimentConfig& config);

/// Throws missing_input when the directory or a listed file is absent and
/// integrity_error when a digest does not match.
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json subject_to_json(const synth::SyntheticSubject& s);
synth::SyntheticSubject subject_from_json(const nlohmann::json& j);

}  // namespace ubp::io
