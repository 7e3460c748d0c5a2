// ubp: synthetic data generation, cross-validated training, evaluation and
// reporting for camera-based blood pressure estimation with uncertainty.
//
// Exit codes: 0 success, 2 configuration error, 3 missing or invalid input,
// 4 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ubp/checkpoint.hpp"
#include "ubp/config.hpp"
#include "ubp/dataset_io.hpp"
#include "ubp/error.hpp"
#include "ubp/experiment.hpp"
#include "ubp/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kMissing = 3, kNumerical = 4 };

struct Options {
  fs::path workdir = ".";
  std::optional<fs::path> config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> subjects;
  std::optional<std::string> modalities;
  std::optional<fs::path> init_from;
  std::optional<std::size_t> workers;
  bool report_only = false;
  bool quiet = false;
};

fs::path dataset_dir(const Options& o) { return o.workdir / "dataset"; }
fs::path checkpoint_dir(const Options& o) { return o.workdir / "checkpoints"; }
fs::path report_dir(const Options& o) { return o.workdir / "reports"; }
fs::path run_manifest_path(const Options& o) { return o.workdir / "run_manifest.json"; }

fs::path checkpoint_stem(const fs::path& dir, int fold, ubp::uq::Modality m) {
  return dir / ("fold" + std::to_string(fold) + "_" + ubp::uq::to_string(m));
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ubp::missing_input("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ubp::config_error(path.string() + ": " + e.what());
  }
}

// Writes through a temporary file so readers never see a half-written file.
void write_json_atomic(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  ubp::report::write_text(tmp, j.dump(2) + "\n");
  fs::rename(tmp, path);
}

// Defaults, then the config file, then flags; UBP_SEED applies when neither
// the file nor a flag sets the seed.
ubp::ExperimentConfig resolve_config(const Options& o) {
  ubp::ExperimentConfig config;
  bool seed_set = false;
  if (o.config_file) {
    const json j = read_json_file(*o.config_file);
    config = ubp::experiment_from_json(j);
    seed_set = j.is_object() && j.contains("seed");
  }
  if (o.seed) {
    config.seed = *o.seed;
  } else if (!seed_set) {
    if (const char* env = std::getenv("UBP_SEED")) {
      try {
        std::size_t used = 0;
        config.seed = std::stoull(env, &used);
        if (env[used] != '\0') throw std::invalid_argument(env);
      } catch (const std::exception&) {
        throw ubp::config_error(std::string("UBP_SEED is not an unsigned integer: '") + env + "'");
      }
    }
  }
  if (o.subjects) config.subjects = *o.subjects;
  if (o.modalities) config.modalities = ubp::parse_modalities(*o.modalities);
  if (o.workers) config.workers = *o.workers;
  return config;
}

// Train and eval take the data-shaping settings from the dataset on disk.
void adopt_dataset(ubp::ExperimentConfig& config, const ubp::io::Dataset& ds) {
  config.generator = ds.generator;
  config.subjects = ds.manifest.at("subjects").get<int>();
  config.min_sessions = ds.manifest.at("min_sessions").get<int>();
  config.max_sessions = ds.manifest.at("max_sessions").get<int>();
}

void log(const Options& o, const std::string& line) {
  if (!o.quiet) std::cerr << line << '\n';
}

int cmd_synth(const Options& o) {
  auto config = resolve_config(o);
  config.validate();
  const auto records = ubp::synth::generate_dataset(config.subjects, config.min_sessions,
                                                    config.max_sessions, config.seed,
                                                    config.generator);
  const auto digest = ubp::io::save_dataset(dataset_dir(o), records, config);
  write_json_atomic(dataset_dir(o) / "resolved_config.json", ubp::to_json(config));
  log(o, "wrote " + std::to_string(records.size()) + " records for " +
             std::to_string(config.subjects) + " subjects to " + dataset_dir(o).string());
  std::cout << digest << '\n';
  return kOk;
}

int cmd_train(const Options& o) {
  auto config = resolve_config(o);
  const auto ds = ubp::io::load_dataset(dataset_dir(o));
  adopt_dataset(config, ds);
  config.validate();
  const auto plan = ubp::pipeline::make_folds(ds.records, config.folds,
                                              ubp::experiment::fold_seed(config),
                                              config.train.validation_fraction);
  fs::create_directories(checkpoint_dir(o));
  write_json_atomic(checkpoint_dir(o) / "resolved_config.json", ubp::to_json(config));

  std::map<std::pair<int, int>, ubp::nn::Checkpoint> init;
  if (o.init_from) {
    for (int f = 0; f < config.folds; ++f) {
      for (auto m : config.modalities) {
        init[{f, static_cast<int>(m)}] = ubp::nn::load_checkpoint(checkpoint_stem(*o.init_from, f, m));
      }
    }
  }

  json manifest{{"status", "incomplete"},
                {"command", "train"},
                {"config", ubp::to_json(config)},
                {"seeds",
                 {{"experiment", config.seed}, {"folds", ubp::experiment::fold_seed(config)}}},
                {"dataset_digest", ubp::nn::sha256_file(dataset_dir(o) / "manifest.json")},
                {"fold_plan_digest", plan.digest()},
                {"fold_plan", plan.to_json()},
                {"init_from", o.init_from ? json(o.init_from->string()) : json(nullptr)},
                {"jobs", json::object()}};
  for (int f = 0; f < config.folds; ++f) {
    for (auto m : config.modalities) {
      manifest["jobs"][checkpoint_stem("", f, m).string()] = {
          {"fold", f}, {"modality", ubp::uq::to_string(m)}, {"status", "pending"}, {"epochs", json::array()}};
    }
  }
  write_json_atomic(run_manifest_path(o), manifest);

  ubp::pipeline::WindowSource source(ds.records, config.generator, config.train.window_frames);
  ubp::experiment::TrainHooks hooks;
  if (o.init_from) {
    hooks.init_from = [&](int f, ubp::uq::Modality m) { return &init.at({f, static_cast<int>(m)}); };
  }
  hooks.on_epoch = [&](int f, ubp::uq::Modality m, int epoch, double tl, double vl) {
    auto& job = manifest["jobs"][checkpoint_stem("", f, m).string()];
    job["status"] = "running";
    job["epochs"].push_back({{"epoch", epoch}, {"train_loss", tl}, {"validation_loss", vl}});
    write_json_atomic(run_manifest_path(o), manifest);
    log(o, "fold " + std::to_string(f) + " " + ubp::uq::to_string(m) + " epoch " +
               std::to_string(epoch) + " train " + ubp::report::format_number(tl) + " val " +
               ubp::report::format_number(vl));
  };
  hooks.on_done = [&](int f, ubp::uq::Modality m, const ubp::pipeline::TrainResult& r) {
    const auto stem = checkpoint_stem(checkpoint_dir(o), f, m);
    ubp::nn::save_checkpoint(r.checkpoint, stem);
    auto& job = manifest["jobs"][checkpoint_stem("", f, m).string()];
    job["status"] = "done";
    job["best_epoch"] = r.checkpoint.epoch;
    job["best_validation_loss"] = r.checkpoint.validation_loss;
    job["checkpoint"] = fs::relative(stem, o.workdir).string();
    write_json_atomic(run_manifest_path(o), manifest);
  };
  ubp::experiment::train_all(config, source, plan, hooks);
  manifest["status"] = "complete";
  write_json_atomic(run_manifest_path(o), manifest);
  log(o, "training complete; checkpoints in " + checkpoint_dir(o).string());
  return kOk;
}

int regenerate_plots(const Options& o) {
  const fs::path dir = report_dir(o);
  const fs::path predictions = dir / "predictions.csv";
  if (!fs::exists(predictions)) {
    throw ubp::missing_input("no report CSVs in " + dir.string() + "; run eval first");
  }
  const auto rows = ubp::report::read_predictions_csv(predictions);
  std::vector<fs::path> written = ubp::report::write_plots(dir, rows, nullptr);
  for (const char* t : {"sbp", "dbp"}) {
    const fs::path curve_csv = dir / (std::string("confidence_curve_") + t + ".csv");
    if (!fs::exists(curve_csv)) continue;
    const auto curve = ubp::report::read_curve_csv(curve_csv);
    const fs::path svg = dir / (std::string("confidence_curve_") + t + ".svg");
    ubp::report::write_text(svg, ubp::report::curve_svg(curve, std::string("Suc10 of the most certain ") + t + " estimates"));
    written.push_back(svg);
  }
  log(o, "wrote " + std::to_string(written.size()) + " plots to " + dir.string());
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.report_only) return regenerate_plots(o);
  auto config = resolve_config(o);
  const auto ds = ubp::io::load_dataset(dataset_dir(o));
  adopt_dataset(config, ds);
  config.validate();
  const auto plan = ubp::pipeline::make_folds(ds.records, config.folds,
                                              ubp::experiment::fold_seed(config),
                                              config.train.validation_fraction);
  if (fs::exists(run_manifest_path(o))) {
    const json run = read_json_file(run_manifest_path(o));
    if (run.value("fold_plan_digest", "") != plan.digest()) {
      throw ubp::config_error("fold plan differs from the one used for training; check --seed");
    }
  }

  std::map<std::pair<int, int>, ubp::nn::Checkpoint> models;
  for (int f = 0; f < config.folds; ++f) {
    for (auto m : config.modalities) {
      const auto stem = checkpoint_stem(checkpoint_dir(o), f, m);
      if (!fs::exists(stem.string() + ".json")) {
        throw ubp::missing_input("missing checkpoint " + stem.string() + ".json (fold " +
                                 std::to_string(f) + ", " + ubp::uq::to_string(m) + ")");
      }
      models[{f, static_cast<int>(m)}] = ubp::nn::load_checkpoint(stem);
    }
  }

  ubp::pipeline::WindowSource source(ds.records, config.generator, config.train.window_frames);
  ubp::experiment::prepare_source(config, source);
  const auto result = ubp::experiment::evaluate_all(
      config, source, plan, [&](int f, ubp::uq::Modality m) -> const ubp::nn::Checkpoint* {
        const auto it = models.find({f, static_cast<int>(m)});
        return it == models.end() ? nullptr : &it->second;
      });

  const fs::path dir = report_dir(o);
  fs::create_directories(dir);
  write_json_atomic(dir / "resolved_config.json", ubp::to_json(config));
  ubp::report::write_metrics_csv(dir / "metrics.csv", result.metrics);
  if (!result.fusion.empty()) ubp::report::write_fusion_csv(dir / "fusion_report.csv", result.fusion);
  ubp::report::write_predictions_csv(dir / "predictions.csv", result.predictions);
  for (auto t : ubp::uq::kTargets) {
    const auto name = ubp::uq::to_string(t);
    ubp::report::write_curve_csv(dir / ("confidence_curve_" + name + ".csv"),
                                 result.curves[static_cast<int>(t)]);
    ubp::report::write_subgroup_csv(dir / ("subgroup_" + name + ".csv"),
                                    result.subgroups[static_cast<int>(t)]);
  }
  log(o, "wrote metrics and fusion reports to " + dir.string());
  for (const auto& row : result.metrics) {
    if (row.fold != "all") continue;
    log(o, "  " + ubp::uq::to_string(row.target) + " " + row.method + ": MAE " +
               ubp::report::format_number(row.metrics.mae) + " Suc10 " +
               ubp::report::format_number(row.metrics.suc10));
  }
  return regenerate_plots(o);
}

int exit_code_for(ubp::ErrorKind kind) {
  switch (kind) {
    case ubp::ErrorKind::kConfiguration:
    case ubp::ErrorKind::kUsage:
      return kConfig;
    case ubp::ErrorKind::kMissingInput:
    case ubp::ErrorKind::kIntegrity:
    case ubp::ErrorKind::kDegenerateInput:
      return kMissing;
    case ubp::ErrorKind::kNumericalFailure:
      return kNumerical;
  }
  return kConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blood pressure estimation from synthetic face videos with uncertainty-driven fusion"};
  app.require_subcommand(1);
  Options o;
  std::string workdir = ".";
  std::string config_file, init_from;

  const auto common = [&](CLI::App* cmd) {
    cmd->add_option("--workdir", workdir, "Directory holding dataset/, checkpoints/ and reports/");
    cmd->add_option("--config", config_file, "JSON experiment config");
    cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { o.seed = s; },
                                            "Experiment seed (falls back to UBP_SEED)");
    cmd->add_flag("--quiet", o.quiet, "Suppress progress output");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  common(synth);
  synth->add_option_function<int>("--subjects", [&](int n) { o.subjects = n; }, "Number of subjects");

  auto* train = app.add_subcommand("train", "Train every (fold, modality) model");
  common(train);
  train->add_option_function<std::string>("--modalities", [&](const std::string& s) { o.modalities = s; },
                                          "Comma-separated subset of rppg,ppg,img");
  train->add_option("--init-from", init_from, "Checkpoint directory to fine-tune from");
  train->add_option_function<std::size_t>("--workers", [&](std::size_t n) { o.workers = n; },
                                          "Concurrent training jobs");

  auto* evalc = app.add_subcommand("eval", "Evaluate checkpoints and write reports");
  common(evalc);
  evalc->add_option_function<std::string>("--modalities", [&](const std::string& s) { o.modalities = s; },
                                          "Comma-separated subset of rppg,ppg,img");
  evalc->add_flag("--report-only", o.report_only, "Regenerate plots from existing CSVs");

  auto* report = app.add_subcommand("report", "Regenerate plots from existing report CSVs");
  common(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  o.workdir = workdir;
  if (!config_file.empty()) o.config_file = config_file;
  if (!init_from.empty()) o.init_from = init_from;

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (train->parsed()) return cmd_train(o);
    if (evalc->parsed()) return cmd_eval(o);
    if (report->parsed()) return regenerate_plots(o);
  } catch (const ubp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  }
  return kConfig;
}
