#include "ubp/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ubp/error.hpp"
#include "ubp/rng.hpp"

namespace ubp::uq {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::kRppg: return "rppg";
    case Modality::kPpg: return "ppg";
    case Modality::kImg: return "img";
  }
  return "?";
}

std::string to_string(Target t) { return t == Target::kSbp ? "sbp" : "dbp"; }

Modality modality_from_string(const std::string& name) {
  for (auto m : kModalities) {
    if (to_string(m) == name) return m;
  }
  throw config_error("unknown modality '" + name + "'");
}

double McSampleSet::mean_prediction() const {
  return std::accumulate(mu.begin(), mu.end(), 0.0) / static_cast<double>(mu.size());
}

void McSampleSet::validate() const {
  if (mu.size() < 2) throw usage_error("MC sample set needs T >= 2");
  if (mu.size() != log_var.size()) throw usage_error("MC sample set size mismatch");
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!std::isfinite(mu[i]) || !std::isfinite(log_var[i])) {
      throw usage_error("MC sample set holds non-finite values");
    }
  }
}

void FusionContext::validate() const {
  for (auto m : kModalities) {
    for (auto t : kTargets) {
      const double a = mean_aleatoric[static_cast<int>(m)][static_cast<int>(t)];
      const double e = mean_epistemic[static_cast<int>(m)][static_cast<int>(t)];
      if (!(a > 0.0) || !(e > 0.0) || !std::isfinite(a + e)) {
        throw usage_error("fusion context mean for " + to_string(m) + "/" + to_string(t) +
                          " must be positive");
      }
    }
  }
}

std::vector<std::array<McSampleSet, 2>> mc_sample_batch(
    const nn::NetworkSpec& spec, const nn::ParameterSet& params, std::span<const double> inputs,
    std::size_t batch, std::size_t T, std::uint64_t seed, Modality modality) {
  if (T < 2) throw usage_error("MC dropout needs T >= 2");
  std::vector<std::array<McSampleSet, 2>> out(batch);
  for (auto& pair : out) {
    for (auto t : kTargets) {
      auto& set = pair[static_cast<int>(t)];
      set.modality = modality;
      set.target = t;
      set.mu.reserve(T);
      set.log_var.reserve(T);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    const auto pred = nn::predict(spec, params, inputs, batch, true, derive_seed(seed, t));
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& o = pred.outputs[i];
      out[i][0].mu.push_back(o.mu_sbp);
      out[i][0].log_var.push_back(o.s_sbp);
      out[i][1].mu.push_back(o.mu_dbp);
      out[i][1].log_var.push_back(o.s_dbp);
    }
  }
  return out;
}

std::array<McSampleSet, 2> mc_sample(const nn::NetworkSpec& spec, const nn::ParameterSet& params,
                                     std::span<const double> input, std::size_t T,
                                     std::uint64_t seed, Modality modality) {
  return mc_sample_batch(spec, params, input, 1, T, seed, modality).front();
}

double aleatoric(const McSampleSet& set) {
  set.validate();
  double acc = 0.0;
  for (double s : set.log_var) acc += std::exp(s);
  return acc / static_cast<double>(set.size());
}

double epistemic(const McSampleSet& set) {
  set.validate();
  const double n = static_cast<double>(set.size());
  double sum = 0.0;
  for (double m : set.mu) sum += m;
  const double mean = sum / n;
  // Two-pass form of E[mu^2] - E[mu]^2; exact zero for identical samples.
  double acc = 0.0;
  for (double m : set.mu) acc += (m - mean) * (m - mean);
  return acc / n;
}

ModalityUncertainty decompose(const McSampleSet& set) {
  return {aleatoric(set), epistemic(set)};
}

double total_uncertainty(std::span<const ModalityUncertainty> per_modality) {
  if (per_modality.size() != 3) {
    throw usage_error("total uncertainty needs all three modalities, got " +
                      std::to_string(per_modality.size()));
  }
  double total = 0.0;
  for (const auto& u : per_modality) total += u.aleatoric + u.epistemic;
  return total;
}

std::array<double, 3> uda_weights(std::span<const double, 3> u) {
  std::array<double, 3> w{};
  std::size_t zeros = 0;
  for (double v : u) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw usage_error("normalized uncertainty must be finite and >= 0");
    if (v == 0.0) ++zeros;
  }
  if (zeros == 3) return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  if (zeros > 0) {
    for (std::size_t m = 0; m < 3; ++m) w[m] = u[m] == 0.0 ? 1.0 / static_cast<double>(zeros) : 0.0;
    return w;
  }
  std::array<double, 3> logits{};
  for (std::size_t m = 0; m < 3; ++m) logits[m] = -std::log(u[m]);
  const double top = *std::max_element(logits.begin(), logits.end());
  double norm = 0.0;
  for (std::size_t m = 0; m < 3; ++m) {
    w[m] = std::exp(logits[m] - top);
    norm += w[m];
  }
  for (double& v : w) v /= norm;
  return w;
}

FusedEstimate uda_fuse(std::span<const double, 3> predictions,
                       std::span<const ModalityUncertainty, 3> uncertainties,
                       const FusionContext& ctx, Target target) {
  std::array<double, 3> normalized{};
  FusedEstimate out;
  for (std::size_t m = 0; m < 3; ++m) {
    const double mu = ctx.normalizer(static_cast<Modality>(m), target);
    if (!(mu > 0.0)) throw usage_error("fusion context normalizer must be positive");
    normalized[m] = uncertainties[m].total() / mu;
    out.predictions[m] = predictions[m];
    out.aleatoric_total += uncertainties[m].aleatoric;
    out.epistemic_total += uncertainties[m].epistemic;
  }
  out.weights = uda_weights(normalized);
  for (std::size_t m = 0; m < 3; ++m) out.fused += out.weights[m] * predictions[m];
  out.total_uncertainty = total_uncertainty(uncertainties);
  return out;
}

FusedEstimate mean_fuse(std::span<const double, 3> predictions,
                        std::span<const ModalityUncertainty, 3> uncertainties) {
  FusedEstimate out;
  for (std::size_t m = 0; m < 3; ++m) {
    out.predictions[m] = predictions[m];
    out.weights[m] = 1.0 / 3.0;
    out.fused += predictions[m] / 3.0;
    out.aleatoric_total += uncertainties[m].aleatoric;
    out.epistemic_total += uncertainties[m].epistemic;
  }
  out.total_uncertainty = total_uncertainty(uncertainties);
  return out;
}

std::vector<std::size_t> triage_rank(std::span<const double> uncertainties, double fraction) {
  if (uncertainties.empty()) throw usage_error("triage of an empty prediction list");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw usage_error("triage fraction must lie in (0, 1]");
  std::vector<std::size_t> order(uncertainties.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return uncertainties[a] < uncertainties[b];
  });
  const auto keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(uncertainties.size()) - 1e-9));
  order.resize(std::clamp<std::size_t>(keep, 1, uncertainties.size()));
  return order;
}

std::vector<std::size_t> triage_rank(std::span<const FusedEstimate> fused, double fraction) {
  std::vector<double> u;
  u.reserve(fused.size());
  for (const auto& f : fused) u.push_back(f.total_uncertainty);
  return triage_rank(u, fraction);
}

}  // namespace ubp::uq
