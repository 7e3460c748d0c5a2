#pragma once

// CSV and SVG writers for evaluation artifacts. Numbers are printed with a
// fixed format so reruns produce byte-identical files.

#include <filesystem>
#include <string>
#include <vector>

#include "ubp/evaluation.hpp"
#include "ubp/uncertainty.hpp"

namespace ubp::report {

struct MetricsRow {
  std::string fold;  // fold index or "all"
  uq::Target target = uq::Target::kSbp;
  std::string method;
  eval::TargetMetrics metrics;
};

struct FusionRow {
  std::string sample_id;
  uq::Target target = uq::Target::kSbp;
  uq::FusedEstimate estimate;
};

/// One scored sample for plotting: prediction, truth and total uncertainty.
struct PredictionRow {
  std::string sample_id;
  int fold = 0;
  std::string group;
  uq::Target target = uq::Target::kSbp;
  std::string method;
  double truth = 0.0;
  double prediction = 0.0;
  double uncertainty = 0.0;
};

std::string format_number(double value);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

void write_fusion_csv(const std::filesystem::path& path, const std::vector<FusionRow>& rows);

void write_curve_csv(const std::filesystem::path& path, const eval::ConfidenceCurve& curve);
eval::ConfidenceCurve read_curve_csv(const std::filesystem::path& path);

void write_subgroup_csv(const std::filesystem::path& path,
                        const std::vector<eval::SubgroupRow>& rows);

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);

/// Predicted vs true BP, points colored by uncertainty (blue low, red high).
std::string scatter_svg(const std::vector<PredictionRow>& rows, const std::string& title);

/// Raw curve as points, moving-average smoothed curve as a line.
std::string curve_svg(const eval::ConfidenceCurve& curve, const std::string& title);

/// Writes one scatter per (method, target) plus the confidence curve plot.
/// Returns the files written.
std::vector<std::filesystem::path> write_plots(const std::filesystem::path& dir,
                                               const std::vector<PredictionRow>& predictions,
                                               const eval::ConfidenceCurve* curve);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ubp::report
