#pragma once

// Checkpoints: a JSON manifest next to a flat little-endian float64 file.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "ubp/layers.hpp"

namespace ubp::nn {

struct Checkpoint {
  NetworkSpec spec;
  ParameterSet params;
  std::string modality;
  int fold = 0;
  std::uint64_t seed = 0;
  int epoch = 0;
  double validation_loss = 0.0;
  nlohmann::json extra = nlohmann::json::object();
};

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

/// Writes `<stem>.json` and `<stem>.bin`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem);

/// Throws missing_input when either file is absent and integrity_error when
/// the binary does not match the manifest.
Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace ubp::nn
