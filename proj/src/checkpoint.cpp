#include "ubp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "ubp/error.hpp"

namespace ubp::nn {
namespace {

constexpr const char* kFormat = "ubp-checkpoint/1";

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return stem.string() + suffix;
}

std::vector<unsigned char> encode_le(const ParameterSet& params) {
  std::vector<unsigned char> bytes;
  for (const auto& p : params) {
    for (double v : p.value) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
  }
  return bytes;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw missing_input("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::kIntegrity, "SHA-256 computation failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return out.str();
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string sha256_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return sha256_hex(bytes);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem) {
  const auto bin_path = with_suffix(stem, ".bin");
  const auto json_path = with_suffix(stem, ".json");
  const auto bytes = encode_le(ckpt.params);

  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["modality"] = ckpt.modality;
  manifest["fold"] = ckpt.fold;
  manifest["seed"] = ckpt.seed;
  manifest["epoch"] = ckpt.epoch;
  manifest["validation_loss"] = ckpt.validation_loss;
  manifest["spec"] = to_json(ckpt.spec);
  manifest["shapes"] = nlohmann::json::array();
  std::size_t count = 0;
  for (const auto& p : ckpt.params) {
    manifest["shapes"].push_back({{"name", p.name}, {"shape", p.shape}});
    count += p.value.size();
  }
  manifest["value_count"] = count;
  manifest["binary"] = bin_path.filename().string();
  manifest["sha256"] = sha256_hex(bytes);
  manifest["extra"] = ckpt.extra;

  std::filesystem::create_directories(stem.parent_path().empty() ? "." : stem.parent_path());
  {
    std::ofstream out(bin_path, std::ios::binary | std::ios::trunc);
    if (!out) throw missing_input("cannot write " + bin_path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw missing_input("cannot write " + json_path.string());
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  const auto json_path = with_suffix(stem, ".json");
  const auto bin_path = with_suffix(stem, ".bin");
  if (!std::filesystem::exists(json_path)) throw missing_input("missing checkpoint " + json_path.string());
  if (!std::filesystem::exists(bin_path)) throw missing_input("missing checkpoint " + bin_path.string());

  nlohmann::json manifest;
  try {
    std::ifstream in(json_path);
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("corrupted checkpoint manifest " + json_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) {
    throw integrity_error("unrecognized checkpoint format in " + json_path.string());
  }

  const auto bytes = read_bytes(bin_path);
  if (sha256_hex(bytes) != manifest.at("sha256").get<std::string>()) {
    throw integrity_error("checkpoint digest mismatch for " + bin_path.string());
  }

  Checkpoint ckpt;
  try {
    ckpt.spec = spec_from_json(manifest.at("spec"));
    ckpt.modality = manifest.at("modality").get<std::string>();
    ckpt.fold = manifest.at("fold").get<int>();
    ckpt.seed = manifest.at("seed").get<std::uint64_t>();
    ckpt.epoch = manifest.at("epoch").get<int>();
    ckpt.validation_loss = manifest.at("validation_loss").get<double>();
    ckpt.extra = manifest.value("extra", nlohmann::json::object());
    for (const auto& s : manifest.at("shapes")) {
      ckpt.params.emplace_back(s.at("name").get<std::string>(), s.at("shape").get<Shape>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("corrupted checkpoint manifest " + json_path.string() + ": " + e.what());
  }

  std::size_t count = 0;
  for (const auto& p : ckpt.params) count += p.value.size();
  if (bytes.size() != 8 * count) {
    throw integrity_error("checkpoint " + bin_path.string() + " holds " +
                          std::to_string(bytes.size()) + " bytes, expected " + std::to_string(8 * count));
  }
  std::size_t offset = 0;
  for (auto& p : ckpt.params) {
    for (double& v : p.value) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[offset + b]) << (8 * b);
      v = std::bit_cast<double>(bits);
      offset += 8;
    }
  }
  // Shapes must agree with what the spec would allocate.
  const auto reference = init_parameters(ckpt.spec, 0);
  if (reference.size() != ckpt.params.size()) {
    throw integrity_error("checkpoint " + json_path.string() + " parameter list does not match its spec");
  }
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i].shape != ckpt.params[i].shape) {
      throw integrity_error("checkpoint " + json_path.string() + " shape mismatch at " +
                            ckpt.params[i].name);
    }
  }
  return ckpt;
}

}  // namespace ubp::nn
