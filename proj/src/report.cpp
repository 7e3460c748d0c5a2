#include "ubp/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ubp/error.hpp"

namespace ubp::report {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw missing_input("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw integrity_error(path.string() + ": unexpected header, want '" + header + "'");
  }
  const auto columns = split(header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != columns) {
      throw integrity_error(path.string() + ": malformed row '" + line + "'");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double parse_double(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw integrity_error(path.string() + ": not a number '" + s + "'");
  }
}

uq::Target parse_target(const std::string& s, const fs::path& path) {
  if (s == "sbp") return uq::Target::kSbp;
  if (s == "dbp") return uq::Target::kDbp;
  throw integrity_error(path.string() + ": unknown target '" + s + "'");
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw missing_input("cannot write " + path.string());
  return out;
}

constexpr double kWidth = 480.0;
constexpr double kHeight = 400.0;
constexpr double kMargin = 56.0;

std::string color_for(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(40 + 200 * t));
  const int b = static_cast<int>(std::lround(220 - 180 * t));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, 60, b);
  return buf;
}

std::string svg_header(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">"
    << title << "</text>\n";
  return s.str();
}

std::string axes(double x0, double x1, double y0, double y1, const std::string& xlabel,
                 const std::string& ylabel) {
  std::ostringstream s;
  const double left = kMargin, right = kWidth - 16, top = 36, bottom = kHeight - kMargin;
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\""
    << bottom - top << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = left + (right - left) * i / 4.0;
    const double fy = bottom - (bottom - top) * i / 4.0;
    s << "<text x=\"" << format_number(fx) << "\" y=\"" << bottom + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
      << format_number(x0 + (x1 - x0) * i / 4.0) << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << format_number(fy + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << format_number(y0 + (y1 - y0) * i / 4.0) << "</text>\n";
  }
  s << "<text x=\"" << (left + right) / 2 << "\" y=\"" << kHeight - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel
    << "</text>\n";
  s << "<text x=\"14\" y=\"" << (top + bottom) / 2 << "\" transform=\"rotate(-90 14 "
    << (top + bottom) / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << ylabel
    << "</text>\n";
  return s.str();
}

double px(double v, double lo, double hi) {
  const double left = kMargin, right = kWidth - 16;
  return left + (right - left) * (v - lo) / (hi - lo);
}

double py(double v, double lo, double hi) {
  const double top = 36, bottom = kHeight - kMargin;
  return bottom - (bottom - top) * (v - lo) / (hi - lo);
}

}  // namespace

std::string format_number(double value) {
  if (!std::isfinite(value)) return std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
  auto out = open_out(path);
  out << "fold,target,method,mae,corr,suc10,mase,bhs\n";
  for (const auto& r : rows) {
    out << r.fold << ',' << uq::to_string(r.target) << ',' << r.method << ','
        << format_number(r.metrics.mae) << ',' << format_number(r.metrics.corr) << ','
        << format_number(r.metrics.suc10) << ',' << format_number(r.metrics.mase) << ','
        << r.metrics.bhs << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::vector<MetricsRow> rows;
  for (const auto& f : read_csv(path, "fold,target,method,mae,corr,suc10,mase,bhs")) {
    MetricsRow r;
    r.fold = f[0];
    r.target = parse_target(f[1], path);
    r.method = f[2];
    r.metrics.mae = parse_double(f[3], path);
    r.metrics.corr = parse_double(f[4], path);
    r.metrics.suc10 = parse_double(f[5], path);
    r.metrics.mase = parse_double(f[6], path);
    if (f[7].size() != 1) throw integrity_error(path.string() + ": bad grade '" + f[7] + "'");
    r.metrics.bhs = f[7][0];
    rows.push_back(r);
  }
  return rows;
}

void write_fusion_csv(const fs::path& path, const std::vector<FusionRow>& rows) {
  auto out = open_out(path);
  out << "sample_id,target,pred_rppg,pred_ppg,pred_img,w_rppg,w_ppg,w_img,fused,aleatoric_total,"
         "epistemic_total,total\n";
  for (const auto& r : rows) {
    const auto& e = r.estimate;
    out << r.sample_id << ',' << uq::to_string(r.target);
    for (double v : e.predictions) out << ',' << format_number(v);
    for (double v : e.weights) out << ',' << format_number(v);
    out << ',' << format_number(e.fused) << ',' << format_number(e.aleatoric_total) << ','
        << format_number(e.epistemic_total) << ',' << format_number(e.total_uncertainty) << '\n';
  }
}

void write_curve_csv(const fs::path& path, const eval::ConfidenceCurve& curve) {
  auto out = open_out(path);
  out << "x,suc10\n";
  for (std::size_t i = 0; i < curve.x.size(); ++i) {
    out << format_number(curve.x[i]) << ',' << format_number(curve.suc10[i]) << '\n';
  }
}

eval::ConfidenceCurve read_curve_csv(const fs::path& path) {
  eval::ConfidenceCurve curve;
  for (const auto& f : read_csv(path, "x,suc10")) {
    curve.x.push_back(parse_double(f[0], path));
    curve.suc10.push_back(parse_double(f[1], path));
  }
  return curve;
}

void write_subgroup_csv(const fs::path& path, const std::vector<eval::SubgroupRow>& rows) {
  auto out = open_out(path);
  out << "group,mae,mean_total_uncertainty\n";
  for (const auto& r : rows) {
    out << r.group << ',' << format_number(r.mae) << ',' << format_number(r.mean_total_uncertainty)
        << '\n';
  }
}

void write_predictions_csv(const fs::path& path, const std::vector<PredictionRow>& rows) {
  auto out = open_out(path);
  out << "sample_id,fold,group,target,method,truth,prediction,uncertainty\n";
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.fold << ',' << r.group << ',' << uq::to_string(r.target) << ','
        << r.method << ',' << format_number(r.truth) << ',' << format_number(r.prediction) << ','
        << format_number(r.uncertainty) << '\n';
  }
}

std::vector<PredictionRow> read_predictions_csv(const fs::path& path) {
  std::vector<PredictionRow> rows;
  for (const auto& f :
       read_csv(path, "sample_id,fold,group,target,method,truth,prediction,uncertainty")) {
    PredictionRow r;
    r.sample_id = f[0];
    r.fold = static_cast<int>(parse_double(f[1], path));
    r.group = f[2];
    r.target = parse_target(f[3], path);
    r.method = f[4];
    r.truth = parse_double(f[5], path);
    r.prediction = parse_double(f[6], path);
    r.uncertainty = parse_double(f[7], path);
    rows.push_back(r);
  }
  return rows;
}

std::string scatter_svg(const std::vector<PredictionRow>& rows, const std::string& title) {
  double lo = 1e300, hi = -1e300, umin = 1e300, umax = -1e300;
  for (const auto& r : rows) {
    lo = std::min({lo, r.truth, r.prediction});
    hi = std::max({hi, r.truth, r.prediction});
    umin = std::min(umin, r.uncertainty);
    umax = std::max(umax, r.uncertainty);
  }
  if (rows.empty()) {
    lo = 60.0;
    hi = 180.0;
  }
  lo = std::floor(lo / 10.0) * 10.0;
  hi = std::ceil(hi / 10.0) * 10.0;
  if (hi <= lo) hi = lo + 10.0;
  std::ostringstream s;
  s << svg_header(title) << axes(lo, hi, lo, hi, "reference (mmHg)", "estimate (mmHg)");
  s << "<line x1=\"" << format_number(px(lo, lo, hi)) << "\" y1=\"" << format_number(py(lo, lo, hi))
    << "\" x2=\"" << format_number(px(hi, lo, hi)) << "\" y2=\"" << format_number(py(hi, lo, hi))
    << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  const double span = umax > umin ? umax - umin : 1.0;
  for (const auto& r : rows) {
    s << "<circle cx=\"" << format_number(px(r.truth, lo, hi)) << "\" cy=\""
      << format_number(py(r.prediction, lo, hi)) << "\" r=\"3\" fill=\""
      << color_for((r.uncertainty - umin) / span) << "\" fill-opacity=\"0.75\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string curve_svg(const eval::ConfidenceCurve& curve, const std::string& title) {
  const auto smooth = eval::moving_average(curve.suc10, 5);
  double lo = 100.0, hi = 0.0;
  for (double v : curve.suc10) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  lo = std::max(0.0, std::floor(lo / 10.0) * 10.0);
  hi = std::min(100.0, std::ceil(hi / 10.0) * 10.0);
  if (hi <= lo) hi = std::min(100.0, lo + 10.0), lo = hi - 10.0;
  std::ostringstream s;
  s << svg_header(title) << axes(0.0, 1.0, lo, hi, "fraction retained (lowest uncertainty first)", "Suc10 (%)");
  for (std::size_t i = 0; i < curve.x.size(); ++i) {
    s << "<circle cx=\"" << format_number(px(curve.x[i], 0.0, 1.0)) << "\" cy=\""
      << format_number(py(curve.suc10[i], lo, hi)) << "\" r=\"2.5\" fill=\"#888\"/>\n";
  }
  if (!smooth.empty()) {
    s << "<polyline fill=\"none\" stroke=\"#c03030\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < smooth.size(); ++i) {
      s << (i ? " " : "") << format_number(px(curve.x[i], 0.0, 1.0)) << ','
        << format_number(py(smooth[i], lo, hi));
    }
    s << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<fs::path> write_plots(const fs::path& dir, const std::vector<PredictionRow>& predictions,
                                  const eval::ConfidenceCurve* curve) {
  std::map<std::pair<std::string, int>, std::vector<PredictionRow>> groups;
  for (const auto& r : predictions) groups[{r.method, static_cast<int>(r.target)}].push_back(r);
  std::vector<fs::path> written;
  for (const auto& [key, rows] : groups) {
    const auto target = uq::to_string(static_cast<uq::Target>(key.second));
    const auto path = dir / ("scatter_" + key.first + "_" + target + ".svg");
    write_text(path, scatter_svg(rows, key.first + " " + target));
    written.push_back(path);
  }
  if (curve != nullptr) {
    const auto path = dir / "confidence_curve.svg";
    write_text(path, curve_svg(*curve, "Suc10 of the most certain estimates"));
    written.push_back(path);
  }
  return written;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw missing_input("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw missing_input("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace ubp::report
