#include "ubp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ubp/error.hpp"
#include "ubp/uncertainty.hpp"

namespace ubp::eval {
namespace {

void require_pairs(std::span<const double> pred, std::span<const double> truth,
                   const char* what) {
  if (pred.size() != truth.size()) {
    throw usage_error(std::string(what) + ": length mismatch (" + std::to_string(pred.size()) +
                      " vs " + std::to_string(truth.size()) + ")");
  }
  if (pred.empty()) throw usage_error(std::string(what) + ": empty input");
}

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  require_pairs(pred, truth, "mae");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]);
  return sum / static_cast<double>(pred.size());
}

Correlation pearson(std::span<const double> pred, std::span<const double> truth) {
  require_pairs(pred, truth, "pearson");
  if (pred.size() < 2) throw usage_error("pearson: need at least two samples");
  const double mp = mean(pred);
  const double mt = mean(truth);
  double spp = 0.0, stt = 0.0, spt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mp;
    const double dt = truth[i] - mt;
    spp += dp * dp;
    stt += dt * dt;
    spt += dp * dt;
  }
  if (!(stt > 0.0)) throw usage_error("pearson: truth has zero variance");
  if (!(spp > 0.0)) return {0.0, true};
  return {std::clamp(spt / std::sqrt(spp * stt), -1.0, 1.0), false};
}

double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb).value;
}

double suc10(std::span<const double> pred, std::span<const double> truth) {
  require_pairs(pred, truth, "suc10");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::abs(pred[i] - truth[i]) < kSuccessThresholdMmHg) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

double mase(double model_mae, double baseline_mae) {
  if (!(baseline_mae > 0.0)) throw usage_error("mase: baseline MAE must be positive");
  return 100.0 * model_mae / baseline_mae;
}

char bhs_grade(double suc10_value) {
  if (suc10_value >= 85.0) return 'A';
  if (suc10_value >= 75.0) return 'B';
  if (suc10_value >= 65.0) return 'C';
  return 'D';
}

MeanRegressor mean_regressor(std::span<const double> train_labels) {
  if (train_labels.empty()) throw usage_error("mean_regressor: no training labels");
  return {mean(train_labels)};
}

TargetMetrics compute_metrics(std::span<const double> pred, std::span<const double> truth,
                              double baseline_mae) {
  TargetMetrics m;
  m.mae = mae(pred, truth);
  const auto c = pearson(pred, truth);
  m.corr = c.value;
  m.corr_degenerate = c.degenerate;
  m.suc10 = suc10(pred, truth);
  m.mase = mase(m.mae, baseline_mae);
  m.bhs = bhs_grade(m.suc10);
  return m;
}

std::vector<double> default_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(0.05 * i);
  grid.back() = 1.0;
  return grid;
}

ConfidenceCurve confidence_curve(std::span<const double> pred, std::span<const double> truth,
                                 std::span<const double> uncertainty,
                                 std::span<const double> grid) {
  require_pairs(pred, truth, "confidence_curve");
  if (uncertainty.size() != pred.size()) throw usage_error("confidence_curve: uncertainty length mismatch");
  ConfidenceCurve curve;
  double previous = 0.0;
  for (double x : grid) {
    if (!(x > previous && x <= 1.0)) {
      throw usage_error("confidence_curve: grid must be strictly increasing in (0, 1]");
    }
    previous = x;
    const auto keep = uq::triage_rank(uncertainty, x);
    std::vector<double> p, t;
    for (auto i : keep) {
      p.push_back(pred[i]);
      t.push_back(truth[i]);
    }
    curve.x.push_back(x);
    curve.suc10.push_back(suc10(p, t));
  }
  return curve;
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  if (window == 0) throw usage_error("moving_average: window must be positive");
  const std::size_t half = window / 2;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(values.size(), i + half + 1);
    double sum = 0.0;
    for (std::size_t k = lo; k < hi; ++k) sum += values[k];
    out[i] = sum / static_cast<double>(hi - lo);
  }
  return out;
}

std::vector<SubgroupRow> subgroup_report(std::span<const double> pred,
                                         std::span<const double> truth,
                                         std::span<const double> uncertainty,
                                         std::span<const std::string> labels,
                                         std::span<const std::string> groups) {
  require_pairs(pred, truth, "subgroup_report");
  if (uncertainty.size() != pred.size() || labels.size() != pred.size()) {
    throw usage_error("subgroup_report: every sample needs an uncertainty and a label");
  }
  if (groups.empty()) throw usage_error("subgroup_report: no groups requested");
  std::vector<SubgroupRow> rows(groups.size());
  std::vector<double> err_sum(groups.size(), 0.0), unc_sum(groups.size(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) rows[g].group = groups[g];
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto it = std::find(groups.begin(), groups.end(), labels[i]);
    if (it == groups.end()) throw usage_error("subgroup_report: unknown group label '" + labels[i] + "'");
    const auto g = static_cast<std::size_t>(it - groups.begin());
    ++rows[g].count;
    err_sum[g] += std::abs(pred[i] - truth[i]);
    unc_sum[g] += uncertainty[i];
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (rows[g].count == 0) throw usage_error("subgroup_report: group '" + groups[g] + "' is empty");
    rows[g].mae = err_sum[g] / static_cast<double>(rows[g].count);
    rows[g].mean_total_uncertainty = unc_sum[g] / static_cast<double>(rows[g].count);
  }
  return rows;
}

}  // namespace ubp::eval
