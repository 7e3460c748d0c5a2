#include "ubp/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "ubp/error.hpp"
#include "ubp/rng.hpp"

namespace ubp::experiment {
namespace {

constexpr std::uint64_t kFoldStream = 1;
constexpr std::uint64_t kTrainStream = 3;
constexpr std::uint64_t kEvalStream = 4;

int index(Modality m) { return static_cast<int>(m); }

pipeline::LabelScaler scaler_for(std::span<const synth::SyntheticRecord> records,
                                 const pipeline::FoldSplit& split) {
  return pipeline::fit_scaler(records, pipeline::records_for(records, split.train));
}

void check_scaler(const nn::Checkpoint& ckpt, const pipeline::LabelScaler& scaler) {
  if (!ckpt.extra.contains("scaler")) return;
  const auto stored = pipeline::LabelScaler::from_json(ckpt.extra.at("scaler"));
  if (stored.digest() != scaler.digest()) {
    throw integrity_error("checkpoint " + ckpt.modality + " fold " + std::to_string(ckpt.fold) +
                          " was trained on different labels than this dataset's split");
  }
}

}  // namespace

std::uint64_t fold_seed(const ExperimentConfig& config) {
  return derive_seed(config.seed, kFoldStream);
}

std::uint64_t train_seed(const ExperimentConfig& config, int fold, Modality m) {
  return derive_seed(derive_seed(config.seed, kTrainStream),
                     static_cast<std::uint64_t>(fold) * 3 + static_cast<std::uint64_t>(index(m)));
}

std::uint64_t eval_seed(const ExperimentConfig& config) {
  return derive_seed(config.seed, kEvalStream);
}

std::vector<RecordEstimate> estimate_records(const nn::Checkpoint& checkpoint,
                                             const pipeline::LabelScaler& scaler,
                                             const pipeline::WindowSource& source,
                                             std::span<const std::size_t> records,
                                             const pipeline::TrainConfig& config, Modality m,
                                             std::uint64_t seed) {
  const std::size_t windows = config.samples_per_video[index(m)];
  const std::uint64_t stream = derive_seed(seed, static_cast<std::uint64_t>(index(m)));
  std::vector<RecordEstimate> out;
  out.reserve(records.size());
  std::vector<double> inputs;
  for (auto r : records) {
    const std::uint64_t record_seed = derive_seed(stream, source.record(r).seed);
    inputs.clear();
    for (std::size_t w = 0; w < windows; ++w) {
      source.append_input(m, r, source.draw_start(r, derive_seed(record_seed, w)), inputs);
    }
    const auto sets = uq::mc_sample_batch(checkpoint.spec, checkpoint.params, inputs, windows,
                                          config.mc_samples, derive_seed(record_seed, 0x3c), m);
    RecordEstimate e;
    for (auto t : uq::kTargets) {
      const int k = static_cast<int>(t);
      double mu = 0.0, alea = 0.0, epi = 0.0;
      for (const auto& s : sets) {
        const auto u = uq::decompose(s[k]);
        mu += s[k].mean_prediction();
        alea += u.aleatoric;
        epi += u.epistemic;
      }
      const double n = static_cast<double>(windows);
      e.prediction[k] = scaler.unscale(mu / n, t);
      e.uncertainty[k] = {alea / n, epi / n};
    }
    out.push_back(e);
  }
  return out;
}

uq::FusionContext fusion_context(const std::array<std::vector<RecordEstimate>, 3>& validation) {
  uq::FusionContext ctx;
  for (auto m : uq::kModalities) {
    const auto& v = validation[index(m)];
    if (v.empty()) throw usage_error("fusion context needs validation estimates for every modality");
    for (auto t : uq::kTargets) {
      const int k = static_cast<int>(t);
      double a = 0.0, e = 0.0;
      for (const auto& est : v) {
        a += est.uncertainty[k].aleatoric;
        e += est.uncertainty[k].epistemic;
      }
      ctx.mean_aleatoric[index(m)][k] = a / static_cast<double>(v.size());
      ctx.mean_epistemic[index(m)][k] = e / static_cast<double>(v.size());
    }
  }
  ctx.validate();
  return ctx;
}

std::string digest(const uq::FusionContext& ctx) {
  const nlohmann::json j{{"mean_aleatoric", ctx.mean_aleatoric},
                         {"mean_epistemic", ctx.mean_epistemic}};
  return nn::sha256_hex(j.dump());
}

uq::FusionContext fusion_context_for_fold(const ExperimentConfig& config,
                                          const pipeline::WindowSource& source,
                                          const pipeline::FoldSplit& split,
                                          const pipeline::LabelScaler& scaler,
                                          const ModelSet& models) {
  const auto val = pipeline::records_for(source.records(), split.validation);
  std::array<std::vector<RecordEstimate>, 3> estimates;
  for (auto m : uq::kModalities) {
    if (models[index(m)] == nullptr) throw usage_error("fusion context needs all three modalities");
    estimates[index(m)] = estimate_records(*models[index(m)], scaler, source, val, config.train, m,
                                           eval_seed(config));
  }
  return fusion_context(estimates);
}

std::string scored_method(const ExperimentConfig& config) {
  return config.has_all_modalities() ? "uda-fuse" : uq::to_string(config.modalities.front());
}

ErrorUncertainty error_and_uncertainty(const EvaluationResult& result, Target t) {
  ErrorUncertainty out;
  const int k = static_cast<int>(t);
  for (const auto& s : result.samples) {
    double pred = 0.0, unc = 0.0;
    if (s.uda) {
      pred = (*s.uda)[k].fused;
      unc = (*s.uda)[k].total_uncertainty;
    } else {
      const auto it = std::find_if(s.modality.begin(), s.modality.end(),
                                   [](const auto& e) { return e.has_value(); });
      if (it == s.modality.end()) throw usage_error("sample has no estimates");
      pred = (**it).prediction[k];
      unc = (**it).uncertainty[k].total();
    }
    out.abs_error.push_back(std::abs(pred - s.truth[k]));
    out.uncertainty.push_back(unc);
  }
  return out;
}

EvaluationResult evaluate_all(const ExperimentConfig& config, const pipeline::WindowSource& source,
                              const pipeline::FoldPlan& plan, const CheckpointLookup& lookup) {
  const auto records = source.records();
  const bool fuse = config.has_all_modalities();
  EvaluationResult result;

  for (int f = 0; f < static_cast<int>(plan.folds.size()); ++f) {
    const auto& split = plan.folds[f];
    const auto scaler = scaler_for(records, split);
    result.scalers.push_back(scaler);

    ModelSet models{};
    for (auto m : config.modalities) {
      const nn::Checkpoint* ckpt = lookup(f, m);
      if (ckpt == nullptr) {
        throw missing_input("no checkpoint for fold " + std::to_string(f) + " modality " +
                            uq::to_string(m));
      }
      check_scaler(*ckpt, scaler);
      models[index(m)] = ckpt;
    }

    std::optional<uq::FusionContext> ctx;
    if (fuse) {
      ctx = fusion_context_for_fold(config, source, split, scaler, models);
      result.contexts.push_back(*ctx);
    }

    const auto train_idx = pipeline::records_for(records, split.train);
    std::array<eval::MeanRegressor, 2> baseline;
    for (auto t : uq::kTargets) {
      std::vector<double> labels;
      for (auto i : train_idx) labels.push_back(t == Target::kSbp ? records[i].sbp : records[i].dbp);
      baseline[static_cast<int>(t)] = eval::mean_regressor(labels);
    }

    const auto test_idx = pipeline::records_for(records, split.test);
    std::array<std::vector<RecordEstimate>, 3> estimates;
    for (auto m : config.modalities) {
      estimates[index(m)] = estimate_records(*models[index(m)], scaler, source, test_idx,
                                             config.train, m, eval_seed(config));
    }

    for (std::size_t j = 0; j < test_idx.size(); ++j) {
      const auto& rec = records[test_idx[j]];
      SampleResult s;
      s.record_id = rec.record_id;
      s.subject_id = rec.subject.subject_id;
      s.fold = f;
      s.group = rec.subject.group_label;
      s.truth = {rec.sbp, rec.dbp};
      s.baseline = {baseline[0].value, baseline[1].value};
      for (auto m : config.modalities) s.modality[index(m)] = estimates[index(m)][j];
      if (fuse) {
        std::array<uq::FusedEstimate, 2> uda, mean;
        for (auto t : uq::kTargets) {
          const int k = static_cast<int>(t);
          std::array<double, 3> preds;
          std::array<uq::ModalityUncertainty, 3> uncs;
          for (auto m : uq::kModalities) {
            preds[index(m)] = s.modality[index(m)]->prediction[k];
            uncs[index(m)] = s.modality[index(m)]->uncertainty[k];
          }
          uda[k] = uq::uda_fuse(preds, uncs, *ctx, t);
          mean[k] = uq::mean_fuse(preds, uncs);
        }
        s.uda = uda;
        s.mean = mean;
      }
      result.samples.push_back(std::move(s));
    }
  }

  // Per-method predictions, in a fixed method order.
  std::vector<std::string> methods{"mean-regressor"};
  for (auto m : config.modalities) methods.push_back(uq::to_string(m));
  if (fuse) {
    methods.push_back("mean-fuse");
    methods.push_back("uda-fuse");
  }
  const auto value = [&](const SampleResult& s, const std::string& method, int k) {
    if (method == "mean-regressor") return std::pair{s.baseline[k], 0.0};
    if (method == "mean-fuse") return std::pair{(*s.mean)[k].fused, (*s.mean)[k].total_uncertainty};
    if (method == "uda-fuse") return std::pair{(*s.uda)[k].fused, (*s.uda)[k].total_uncertainty};
    const auto& e = *s.modality[index(uq::modality_from_string(method))];
    return std::pair{e.prediction[k], e.uncertainty[k].total()};
  };

  for (auto t : uq::kTargets) {
    const int k = static_cast<int>(t);
    for (const auto& method : methods) {
      for (const auto& s : result.samples) {
        const auto [pred, unc] = value(s, method, k);
        result.predictions.push_back({s.record_id, s.fold, s.group, t, method, s.truth[k], pred, unc});
      }
    }
  }

  const auto metrics_for = [&](const std::string& fold_label, auto&& keep) {
    for (auto t : uq::kTargets) {
      const int k = static_cast<int>(t);
      std::vector<double> truth, base;
      for (const auto& s : result.samples) {
        if (!keep(s)) continue;
        truth.push_back(s.truth[k]);
        base.push_back(s.baseline[k]);
      }
      const double base_mae = eval::mae(base, truth);
      for (const auto& method : methods) {
        std::vector<double> pred;
        for (const auto& s : result.samples) {
          if (keep(s)) pred.push_back(value(s, method, k).first);
        }
        result.metrics.push_back({fold_label, t, method, eval::compute_metrics(pred, truth, base_mae)});
      }
    }
  };
  for (int f = 0; f < static_cast<int>(plan.folds.size()); ++f) {
    metrics_for(std::to_string(f), [f](const SampleResult& s) { return s.fold == f; });
  }
  metrics_for("all", [](const SampleResult&) { return true; });

  if (fuse) {
    for (auto t : uq::kTargets) {
      for (const auto& s : result.samples) {
        result.fusion.push_back({s.record_id, t, (*s.uda)[static_cast<int>(t)]});
      }
    }
  }

  std::vector<std::string> groups;
  for (const auto& g : config.generator.groups) groups.push_back(g.label);
  std::vector<std::string> labels;
  for (const auto& s : result.samples) labels.push_back(s.group);
  const auto grid = eval::default_grid();
  for (auto t : uq::kTargets) {
    const int k = static_cast<int>(t);
    const auto eu = error_and_uncertainty(result, t);
    std::vector<double> zero(eu.abs_error.size(), 0.0);
    result.curves[k] = eval::confidence_curve(eu.abs_error, zero, eu.uncertainty, grid);
    std::vector<std::string> present;
    for (const auto& g : groups) {
      if (std::find(labels.begin(), labels.end(), g) != labels.end()) present.push_back(g);
    }
    result.subgroups[k] = eval::subgroup_report(eu.abs_error, zero, eu.uncertainty, labels, present);
  }
  return result;
}

void prepare_source(const ExperimentConfig& config, pipeline::WindowSource& source) {
  for (auto m : config.modalities) source.prepare(m);
}

TrainedFolds train_all(const ExperimentConfig& config, pipeline::WindowSource& source,
                       const pipeline::FoldPlan& plan, const TrainHooks& hooks) {
  prepare_source(config, source);
  struct Job {
    int fold;
    Modality m;
  };
  std::vector<Job> jobs;
  for (int f = 0; f < static_cast<int>(plan.folds.size()); ++f) {
    for (auto m : config.modalities) jobs.push_back({f, m});
  }
  TrainedFolds trained(plan.folds.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex lock;

  const auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const auto [f, m] = jobs[j];
      try {
        pipeline::TrainOptions options;
        if (hooks.init_from) options.init_from = hooks.init_from(f, m);
        if (hooks.on_epoch) {
          options.on_epoch = [&, f = f, m = m](int epoch, double tl, double vl) {
            std::lock_guard guard(lock);
            hooks.on_epoch(f, m, epoch, tl, vl);
          };
        }
        auto result = pipeline::train_modality(m, plan.folds[f], f, config.train, source,
                                               train_seed(config, f, m), options);
        std::lock_guard guard(lock);
        if (hooks.on_done) hooks.on_done(f, m, result);
        trained[f][index(m)] = std::move(result);
      } catch (...) {
        errors[j] = std::current_exception();
        next = jobs.size();
      }
    }
  };

  const std::size_t n = std::min(config.workers, jobs.size());
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return trained;
}

RunOutputs run_experiment(const ExperimentConfig& config) {
  config.validate();
  RunOutputs out;
  out.records = synth::generate_dataset(config.subjects, config.min_sessions, config.max_sessions,
                                        config.seed, config.generator);
  out.plan = pipeline::make_folds(out.records, config.folds, fold_seed(config),
                                  config.train.validation_fraction);
  auto source = std::make_shared<pipeline::WindowSource>(out.records, config.generator,
                                                         config.train.window_frames);
  out.trained = train_all(config, *source, out.plan);
  out.evaluation = evaluate_all(config, *source, out.plan, [&](int f, Modality m) {
    const auto& slot = out.trained[f][index(m)];
    return slot ? &slot->checkpoint : nullptr;
  });
  out.source = std::move(source);
  return out;
}

LeakageAudit audit_leakage(const ExperimentConfig& config,
                           std::span<const synth::SyntheticRecord> records,
                           const pipeline::FoldPlan& plan, const CheckpointLookup& lookup,
                           const pipeline::WindowSource* prepared) {
  LeakageAudit audit;
  std::vector<int> all_ids;
  for (const auto& r : records) all_ids.push_back(r.subject.subject_id);
  std::sort(all_ids.begin(), all_ids.end());
  all_ids.erase(std::unique(all_ids.begin(), all_ids.end()), all_ids.end());

  ExperimentConfig probe = config;
  probe.train.mc_samples = 2;
  probe.train.samples_per_video = {1, 1, 1};
  std::optional<pipeline::WindowSource> shared;
  std::vector<int> covered;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const auto& split = plan.folds[f];
    for (int id : split.test) {
      const bool in_train = std::binary_search(split.train.begin(), split.train.end(), id);
      const bool in_val = std::binary_search(split.validation.begin(), split.validation.end(), id);
      if (in_train || in_val) {
        audit.subjects_disjoint = false;
        audit.problems.push_back("fold " + std::to_string(f) + ": subject " + std::to_string(id) +
                                 " is in both test and training data");
      }
    }
    covered.insert(covered.end(), split.test.begin(), split.test.end());
  }
  std::sort(covered.begin(), covered.end());
  if (covered != all_ids) {
    audit.test_coverage_exact = false;
    audit.problems.push_back("test sets do not cover every subject exactly once");
  }

  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const auto& split = plan.folds[f];
    std::vector<synth::SyntheticRecord> perturbed(records.begin(), records.end());
    for (auto i : pipeline::records_for(perturbed, split.test)) {
      auto& r = perturbed[i];
      r.sbp += 40.0;
      r.dbp -= 25.0;
      r.subject.sbp += 40.0;
      for (auto& v : r.traces.values) v *= 1.5;
      r.seed = derive_seed(r.seed, 0xbad);
    }
    const auto base_scaler = scaler_for(records, split);
    const auto pert_scaler = scaler_for(perturbed, split);
    if (base_scaler.digest() != pert_scaler.digest()) {
      audit.scaler_independent = false;
      audit.problems.push_back("fold " + std::to_string(f) + ": label scaler depends on test data");
    }
    if (!config.has_all_modalities()) continue;
    ModelSet models{};
    for (auto m : uq::kModalities) {
      models[index(m)] = lookup(static_cast<int>(f), m);
      if (models[index(m)] == nullptr) {
        throw missing_input("leakage audit: no checkpoint for fold " + std::to_string(f) + " " +
                            uq::to_string(m));
      }
    }
    if (!shared) {
      if (prepared && prepared->records().data() == records.data() &&
          prepared->record_count() == records.size()) {
        shared.emplace(*prepared);
      } else {
        shared.emplace(records, config.generator, config.train.window_frames);
      }
    }
    const auto val = pipeline::records_for(records, split.validation);
    for (auto m : uq::kModalities) shared->prepare(m, val);
    auto pert = shared->rebound(perturbed);
    for (auto m : uq::kModalities) pert.prepare(m, val);
    std::optional<uq::FusionContext> a, b;
    try {
      a = fusion_context_for_fold(probe, *shared, split, base_scaler, models);
      b = fusion_context_for_fold(probe, pert, split, pert_scaler, models);
    } catch (const Error& e) {
      audit.context_independent = false;
      audit.problems.push_back("fold " + std::to_string(f) + ": fusion context reads test inputs (" +
                               e.what() + ")");
      continue;
    }
    if (digest(*a) != digest(*b)) {
      audit.context_independent = false;
      audit.problems.push_back("fold " + std::to_string(f) + ": fusion context depends on test data");
    }
  }
  return audit;
}

}  // namespace ubp::experiment
