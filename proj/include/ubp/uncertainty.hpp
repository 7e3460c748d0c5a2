#pragma once

// MC-dropout sampling, aleatoric/epistemic decomposition, uncertainty-driven
// fusion of the three modalities and triage by total uncertainty.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ubp/layers.hpp"

namespace ubp::uq {

enum class Modality { kRppg = 0, kPpg = 1, kImg = 2 };
enum class Target { kSbp = 0, kDbp = 1 };

inline constexpr std::array<Modality, 3> kModalities{Modality::kRppg, Modality::kPpg,
                                                     Modality::kImg};
inline constexpr std::array<Target, 2> kTargets{Target::kSbp, Target::kDbp};

std::string to_string(Modality m);
std::string to_string(Target t);
Modality modality_from_string(const std::string& name);

/// T draws of (predictive mean, log-variance) in normalized BP units.
struct McSampleSet {
  Modality modality = Modality::kRppg;
  Target target = Target::kSbp;
  std::vector<double> mu;
  std::vector<double> log_var;

  std::size_t size() const { return mu.size(); }
  double mean_prediction() const;
  /// Throws usage_error unless T >= 2, sizes agree and all values finite.
  void validate() const;
};

struct ModalityUncertainty {
  double aleatoric = 0.0;
  double epistemic = 0.0;

  double total() const { return aleatoric + epistemic; }
};

/// Validation-set mean uncertainties per modality and target.
struct FusionContext {
  std::array<std::array<double, 2>, 3> mean_aleatoric{};
  std::array<std::array<double, 2>, 3> mean_epistemic{};

  double normalizer(Modality m, Target t) const {
    return mean_aleatoric[static_cast<int>(m)][static_cast<int>(t)] +
           mean_epistemic[static_cast<int>(m)][static_cast<int>(t)];
  }
  void validate() const;
};

/// Fusion result for one sample and one target.
struct FusedEstimate {
  std::array<double, 3> predictions{};  // mmHg
  std::array<double, 3> weights{};
  double fused = 0.0;
  double aleatoric_total = 0.0;
  double epistemic_total = 0.0;
  double total_uncertainty = 0.0;
};

struct FusedPrediction {
  FusedEstimate sbp;
  FusedEstimate dbp;

  const FusedEstimate& operator[](Target t) const { return t == Target::kSbp ? sbp : dbp; }
};

/// T dropout-active passes on one input, sub-seed t = derive_seed(seed, t).
/// Returns the SBP and DBP sample sets.
std::array<McSampleSet, 2> mc_sample(const nn::NetworkSpec& spec, const nn::ParameterSet& params,
                                     std::span<const double> input, std::size_t T,
                                     std::uint64_t seed, Modality modality);

/// Batched form: pass t runs every sample with sub-seed derive_seed(seed, t).
/// Result [i] holds the SBP and DBP sets of sample i.
std::vector<std::array<McSampleSet, 2>> mc_sample_batch(
    const nn::NetworkSpec& spec, const nn::ParameterSet& params, std::span<const double> inputs,
    std::size_t batch, std::size_t T, std::uint64_t seed, Modality modality);

/// (1/T) sum exp(s_t).
double aleatoric(const McSampleSet& set);
/// Population variance of mu_t.
double epistemic(const McSampleSet& set);
ModalityUncertainty decompose(const McSampleSet& set);

/// Sum over the three modalities of aleatoric + epistemic.
double total_uncertainty(std::span<const ModalityUncertainty> per_modality);

/// Inverse-normalized-uncertainty weights computed as softmax(-log u_m).
/// Zero-uncertainty modalities take all the weight (limiting case); when
/// every u_m is zero the weights are uniform.
std::array<double, 3> uda_weights(std::span<const double, 3> normalized_uncertainty);

FusedEstimate uda_fuse(std::span<const double, 3> predictions,
                       std::span<const ModalityUncertainty, 3> uncertainties,
                       const FusionContext& ctx, Target target);

/// Equal-weight aggregation, the ablation without uncertainty weighting.
FusedEstimate mean_fuse(std::span<const double, 3> predictions,
                        std::span<const ModalityUncertainty, 3> uncertainties);

/// Indices of the ceil(fraction * N) smallest uncertainties, ties in input
/// order.
std::vector<std::size_t> triage_rank(std::span<const double> uncertainties, double fraction);
std::vector<std::size_t> triage_rank(std::span<const FusedEstimate> fused, double fraction);

}  // namespace ubp::uq
