#pragma once

// Accuracy metrics, BHS grading, the mean-regressor baseline, confidence
// curves and per-group summaries.

#include <span>
#include <string>
#include <vector>

namespace ubp::eval {

inline constexpr double kSuccessThresholdMmHg = 10.0;

double mae(std::span<const double> pred, std::span<const double> truth);

struct Correlation {
  double value = 0.0;
  /// Set when the prediction has zero variance; value is then 0.
  bool degenerate = false;
};

/// Product-moment correlation. Throws usage_error for fewer than two samples
/// or a constant truth vector.
Correlation pearson(std::span<const double> pred, std::span<const double> truth);

/// Rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

/// Percentage of samples with |pred - truth| < 10 mmHg.
double suc10(std::span<const double> pred, std::span<const double> truth);

/// Model MAE as a percentage of the baseline MAE.
double mase(double model_mae, double baseline_mae);

/// 'A' (>= 85), 'B' (>= 75), 'C' (>= 65) or 'D'.
char bhs_grade(double suc10_value);

struct MeanRegressor {
  double value = 0.0;

  std::vector<double> predict(std::size_t n) const { return std::vector<double>(n, value); }
};

MeanRegressor mean_regressor(std::span<const double> train_labels);

struct TargetMetrics {
  double mae = 0.0;
  double corr = 0.0;
  bool corr_degenerate = false;
  double suc10 = 0.0;
  double mase = 0.0;
  char bhs = 'D';
};

TargetMetrics compute_metrics(std::span<const double> pred, std::span<const double> truth,
                              double baseline_mae);

struct ConfidenceCurve {
  std::vector<double> x;
  std::vector<double> suc10;
};

/// 0.05, 0.10, ..., 1.00.
std::vector<double> default_grid();

/// Suc10 of the ceil(x N) samples with the lowest uncertainty, per grid point.
ConfidenceCurve confidence_curve(std::span<const double> pred, std::span<const double> truth,
                                 std::span<const double> uncertainty,
                                 std::span<const double> grid);

/// Centered moving average with the window truncated at the ends.
std::vector<double> moving_average(std::span<const double> values, std::size_t window = 5);

struct SubgroupRow {
  std::string group;
  std::size_t count = 0;
  double mae = 0.0;
  double mean_total_uncertainty = 0.0;
};

/// One row per requested group. Throws usage_error when a sample carries a
/// label outside `groups`, a group has no samples, or `groups` is empty.
std::vector<SubgroupRow> subgroup_report(std::span<const double> pred,
                                         std::span<const double> truth,
                                         std::span<const double> uncertainty,
                                         std::span<const std::string> labels,
                                         std::span<const std::string> groups);

}  // namespace ubp::eval
