#pragma once

// Cross-validated experiment driver: trains every (fold, modality) job,
// estimates per-record BP with MC dropout, fuses the modalities and scores
// the results. Shared by the CLI and the acceptance harness.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ubp/config.hpp"
#include "ubp/evaluation.hpp"
#include "ubp/pipeline.hpp"
#include "ubp/report.hpp"

namespace ubp::experiment {

using uq::Modality;
using uq::Target;

/// Seed streams derived from the experiment seed.
std::uint64_t fold_seed(const ExperimentConfig& config);
std::uint64_t train_seed(const ExperimentConfig& config, int fold, Modality m);
std::uint64_t eval_seed(const ExperimentConfig& config);

struct RecordEstimate {
  std::array<double, 2> prediction{};                    // mmHg
  std::array<uq::ModalityUncertainty, 2> uncertainty{};  // normalized units^2
};

/// Draws samples_per_video windows per record and runs T MC-dropout passes
/// on each; prediction, aleatoric and epistemic terms are averaged over the
/// windows. Window positions and dropout masks depend only on the record's
/// own seed, so a record's estimate does not depend on which other records
/// are evaluated alongside it.
std::vector<RecordEstimate> estimate_records(const nn::Checkpoint& checkpoint,
                                             const pipeline::LabelScaler& scaler,
                                             const pipeline::WindowSource& source,
                                             std::span<const std::size_t> records,
                                             const pipeline::TrainConfig& config, Modality m,
                                             std::uint64_t seed);

/// Per-fold models indexed by modality; null where a modality was not run.
using ModelSet = std::array<const nn::Checkpoint*, 3>;

uq::FusionContext fusion_context(const std::array<std::vector<RecordEstimate>, 3>& validation);
std::string digest(const uq::FusionContext& ctx);

/// Context from the fold's validation records only.
uq::FusionContext fusion_context_for_fold(const ExperimentConfig& config,
                                          const pipeline::WindowSource& source,
                                          const pipeline::FoldSplit& split,
                                          const pipeline::LabelScaler& scaler,
                                          const ModelSet& models);

struct SampleResult {
  std::string record_id;
  int subject_id = 0;
  int fold = 0;
  std::string group;
  std::array<double, 2> truth{};
  std::array<double, 2> baseline{};  // mean regressor
  std::array<std::optional<RecordEstimate>, 3> modality;
  std::optional<std::array<uq::FusedEstimate, 2>> uda;
  std::optional<std::array<uq::FusedEstimate, 2>> mean;
};

struct EvaluationResult {
  std::vector<SampleResult> samples;
  std::vector<report::MetricsRow> metrics;
  std::vector<report::FusionRow> fusion;
  std::vector<report::PredictionRow> predictions;
  /// UDA-fused curves (or the first modality when fusion is unavailable).
  std::array<eval::ConfidenceCurve, 2> curves;
  std::array<std::vector<eval::SubgroupRow>, 2> subgroups;
  std::vector<uq::FusionContext> contexts;
  std::vector<pipeline::LabelScaler> scalers;
};

/// Absolute error and total uncertainty of the scored method per sample.
struct ErrorUncertainty {
  std::vector<double> abs_error;
  std::vector<double> uncertainty;
};
ErrorUncertainty error_and_uncertainty(const EvaluationResult& result, Target t);

/// Name of the method used for curves and subgroups: "uda-fuse" when all
/// modalities ran, else the first modality.
std::string scored_method(const ExperimentConfig& config);

using CheckpointLookup = std::function<const nn::Checkpoint*(int fold, Modality m)>;

EvaluationResult evaluate_all(const ExperimentConfig& config, const pipeline::WindowSource& source,
                              const pipeline::FoldPlan& plan, const CheckpointLookup& lookup);

struct TrainHooks {
  CheckpointLookup init_from;
  std::function<void(int fold, Modality m, int epoch, double train_loss, double validation_loss)>
      on_epoch;
  std::function<void(int fold, Modality m, const pipeline::TrainResult& result)> on_done;
};

using TrainedFolds = std::vector<std::array<std::optional<pipeline::TrainResult>, 3>>;

/// Runs every (fold, modality) job across config.workers threads. Hooks are
/// called under a lock.
TrainedFolds train_all(const ExperimentConfig& config, pipeline::WindowSource& source,
                       const pipeline::FoldPlan& plan, const TrainHooks& hooks = {});

/// Builds the caches of every configured modality.
void prepare_source(const ExperimentConfig& config, pipeline::WindowSource& source);

struct RunOutputs {
  std::vector<synth::SyntheticRecord> records;
  pipeline::FoldPlan plan;
  TrainedFolds trained;
  EvaluationResult evaluation;
  /// Inputs prepared during the run, bound to `records`.
  std::shared_ptr<const pipeline::WindowSource> source;
};

/// Generate, split, train and evaluate entirely in memory.
RunOutputs run_experiment(const ExperimentConfig& config);

struct LeakageAudit {
  bool subjects_disjoint = true;
  bool test_coverage_exact = true;
  bool scaler_independent = true;
  bool context_independent = true;
  std::vector<std::string> problems;

  bool ok() const {
    return subjects_disjoint && test_coverage_exact && scaler_independent && context_independent;
  }
};

/// Checks the fold plan for train/test overlap and coverage, then perturbs
/// every test record (labels and traces) and confirms the label scaler and
/// fusion context digests do not change. Contexts are recomputed with two MC
/// passes and one window per record. `prepared`, when bound to `records`,
/// supplies inputs already built during the run.
LeakageAudit audit_leakage(const ExperimentConfig& config,
                           std::span<const synth::SyntheticRecord> records,
                           const pipeline::FoldPlan& plan, const CheckpointLookup& lookup,
                           const pipeline::WindowSource* prepared = nullptr);

}  // namespace ubp::experiment
