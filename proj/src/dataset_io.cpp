#include "ubp/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "ubp/checkpoint.hpp"
#include "ubp/error.hpp"
#include "ubp/report.hpp"

namespace ubp::io {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kFormat = "ubp-dataset/1";

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw missing_input("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw integrity_error(path.string() + ": " + e.what());
  }
}

void write_series(const fs::path& path, std::span<const double> values) {
  std::ostringstream s;
  s << "frame,value\n";
  for (std::size_t i = 0; i < values.size(); ++i) s << i << ',' << exact(values[i]) << '\n';
  report::write_text(path, s.str());
}

std::vector<double> read_series(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw missing_input("missing file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "frame,value") {
    throw integrity_error(path.string() + ": unexpected header");
  }
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || std::stoul(line.substr(0, comma)) != out.size()) {
      throw integrity_error(path.string() + ": malformed row '" + line + "'");
    }
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

}  // namespace

void write_traces_csv(const fs::path& path, const signals::RoiTraceSet& traces) {
  traces.validate();
  std::ostringstream s;
  s << "roi,channel,frame,value\n";
  for (std::size_t r = 0; r < traces.roi_count; ++r) {
    for (std::size_t c = 0; c < signals::kChannels; ++c) {
      for (std::size_t f = 0; f < traces.frames; ++f) {
        s << r << ',' << c << ',' << f << ',' << exact(traces.at(r, c, f)) << '\n';
      }
    }
  }
  report::write_text(path, s.str());
  const json meta{{"frame_rate", traces.frame_rate},
                  {"roi_count", traces.roi_count},
                  {"frames", traces.frames},
                  {"roi_labels", traces.roi_labels}};
  report::write_text(fs::path(path.string() + ".json"), meta.dump(2) + "\n");
}

signals::RoiTraceSet read_traces_csv(const fs::path& path) {
  const json meta = read_json(fs::path(path.string() + ".json"));
  signals::RoiTraceSet traces;
  try {
    traces = signals::RoiTraceSet(meta.at("roi_count").get<std::size_t>(),
                                  meta.at("frames").get<std::size_t>(),
                                  meta.at("frame_rate").get<double>());
    traces.roi_labels = meta.at("roi_labels").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw integrity_error(path.string() + ".json: " + e.what());
  }
  std::ifstream in(path);
  if (!in) throw missing_input("missing file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "roi,channel,frame,value") {
    throw integrity_error(path.string() + ": unexpected header");
  }
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t r = 0, c = 0, f = 0;
    double v = 0.0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf%c", &r, &c, &f, &v, &tail) != 4 ||
        r >= traces.roi_count || c >= signals::kChannels || f >= traces.frames) {
      throw integrity_error(path.string() + ": malformed row '" + line + "'");
    }
    traces.at(r, c, f) = v;
    ++rows;
  }
  if (rows != traces.values.size()) {
    throw integrity_error(path.string() + ": expected " + std::to_string(traces.values.size()) +
                          " rows, found " + std::to_string(rows));
  }
  traces.validate();
  return traces;
}

json subject_to_json(const synth::SyntheticSubject& s) {
  return {{"subject_id", s.subject_id},   {"sbp", s.sbp},
          {"dbp", s.dbp},                 {"heart_rate", s.heart_rate},
          {"ptt_lag", s.ptt_lag},         {"appearance", s.appearance},
          {"noise_sigma", s.noise_sigma}, {"attenuation", s.attenuation},
          {"group", s.group_label},       {"skin_rgb", s.skin_rgb}};
}

synth::SyntheticSubject subject_from_json(const json& j) {
  synth::SyntheticSubject s;
  s.subject_id = j.at("subject_id").get<int>();
  s.sbp = j.at("sbp").get<double>();
  s.dbp = j.at("dbp").get<double>();
  s.heart_rate = j.at("heart_rate").get<double>();
  s.ptt_lag = j.at("ptt_lag").get<double>();
  s.appearance = j.at("appearance").get<std::vector<double>>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.attenuation = j.at("attenuation").get<double>();
  s.group_label = j.at("group").get<std::string>();
  s.skin_rgb = j.at("skin_rgb").get<std::array<double, 3>>();
  return s;
}

std::string save_dataset(const fs::path& dir, const std::vector<synth::SyntheticRecord>& records,
                         const ExperimentConfig& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw missing_input("cannot create dataset directory " + dir.string() +
                        (ec ? ": " + ec.message() : ""));
  }
  json entries = json::array();
  for (const auto& r : records) {
    const fs::path rdir = dir / r.record_id;
    fs::create_directories(rdir);
    write_traces_csv(rdir / "traces.csv", r.traces);
    write_series(rdir / "ppg.csv", r.ppg_truth);
    const json labels{{"record_id", r.record_id}, {"session", r.session},
                      {"seed", r.seed},           {"sbp", r.sbp},
                      {"dbp", r.dbp},             {"heart_rate", r.heart_rate},
                      {"ptt_lag", r.ptt_lag},     {"subject", subject_to_json(r.subject)}};
    report::write_text(rdir / "labels.json", labels.dump(2) + "\n");
    json files = json::object();
    for (const char* name : {"traces.csv", "traces.csv.json", "ppg.csv", "labels.json"}) {
      files[name] = nn::sha256_file(rdir / name);
    }
    entries.push_back({{"record_id", r.record_id}, {"files", files}});
  }
  const json manifest{{"format", kFormat},
                      {"seed", config.seed},
                      {"subjects", config.subjects},
                      {"min_sessions", config.min_sessions},
                      {"max_sessions", config.max_sessions},
                      {"generator", to_json(config.generator)},
                      {"records", entries}};
  const std::string text = manifest.dump(2) + "\n";
  report::write_text(dir / "manifest.json", text);
  return nn::sha256_hex(text);
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw missing_input("dataset directory " + dir.string() + " not found");
  Dataset ds;
  ds.manifest = read_json(dir / "manifest.json");
  try {
    if (ds.manifest.at("format") != kFormat) {
      throw integrity_error(dir.string() + "/manifest.json: unsupported format");
    }
    ds.generator = generator_from_json(ds.manifest.at("generator"));
    for (const auto& entry : ds.manifest.at("records")) {
      const auto id = entry.at("record_id").get<std::string>();
      const fs::path rdir = dir / id;
      for (const auto& [name, digest] : entry.at("files").items()) {
        const fs::path file = rdir / name;
        if (!fs::exists(file)) throw missing_input("missing file " + file.string());
        if (nn::sha256_file(file) != digest.get<std::string>()) {
          throw integrity_error("digest mismatch for " + file.string());
        }
      }
      const json labels = read_json(rdir / "labels.json");
      synth::SyntheticRecord r;
      r.record_id = labels.at("record_id").get<std::string>();
      r.session = labels.at("session").get<int>();
      r.seed = labels.at("seed").get<std::uint64_t>();
      r.sbp = labels.at("sbp").get<double>();
      r.dbp = labels.at("dbp").get<double>();
      r.heart_rate = labels.at("heart_rate").get<double>();
      r.ptt_lag = labels.at("ptt_lag").get<double>();
      r.subject = subject_from_json(labels.at("subject"));
      r.traces = read_traces_csv(rdir / "traces.csv");
      r.ppg_truth = read_series(rdir / "ppg.csv");
      if (r.ppg_truth.size() != r.traces.frames) {
        throw integrity_error(rdir.string() + ": PPG and trace lengths differ");
      }
      ds.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw integrity_error(dir.string() + "/manifest.json: " + e.what());
  }
  if (ds.records.empty()) throw missing_input("dataset " + dir.string() + " has no records");
  return ds;
}

}  // namespace ubp::io
