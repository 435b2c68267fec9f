// SPDX-License-Identifier: Apache-2.0
//
// CSV plot data and SVG rendering.
//
//   ROC data:        method,fpr,tpr
//   threshold sweep: tau,HM,TPR,FPR,mean_threshold
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avood/error.hpp"
#include "avood/metrics.hpp"
#include "avood/pipeline.hpp"

namespace avood::plot {

// Shortest round-trip-safe text for a double.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline void write_csv(const std::filesystem::path& path, const Table& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(ValidationError::Code::kMissingFile, "cannot open " + path.string());
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else if (cells.size() != t.header.size()) {
      throw ValidationError(ValidationError::Code::kMalformed, path.string() + ": ragged CSV row");
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw ValidationError(ValidationError::Code::kMalformed, path.string() + ": empty CSV");
  return t;
}

inline double number(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw ValidationError(ValidationError::Code::kMalformed, "not a number: '" + s + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Plot data

struct RocSeries {
  std::string name;
  metrics::RocCurve curve;
};

inline Table roc_table(const std::vector<RocSeries>& series) {
  Table t{{"method", "fpr", "tpr"}, {}};
  for (const auto& s : series) {
    for (const auto& p : s.curve.points) t.rows.push_back({s.name, fmt(p.fpr), fmt(p.tpr)});
  }
  return t;
}

inline Table sweep_table(const std::vector<pipeline::SweepPoint>& pts) {
  Table t{{"tau", "HM", "TPR", "FPR", "mean_threshold"}, {}};
  for (const auto& p : pts) t.rows.push_back({fmt(p.tau), fmt(p.hm), fmt(p.tpr), fmt(p.fpr), p.is_mean ? "1" : "0"});
  return t;
}

inline std::vector<RocSeries> parse_roc(const Table& t) {
  if (t.header != std::vector<std::string>{"method", "fpr", "tpr"}) {
    throw ValidationError(ValidationError::Code::kMalformed, "ROC data needs columns method,fpr,tpr");
  }
  std::vector<RocSeries> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : t.rows) {
    auto [it, fresh] = index.emplace(r[0], out.size());
    if (fresh) out.push_back({r[0], {}});
    out[it->second].curve.points.push_back({number(r[1]), number(r[2])});
  }
  if (out.empty()) throw ValidationError(ValidationError::Code::kMalformed, "ROC data has no rows");
  return out;
}

inline std::vector<pipeline::SweepPoint> parse_sweep(const Table& t) {
  if (t.header != std::vector<std::string>{"tau", "HM", "TPR", "FPR", "mean_threshold"}) {
    throw ValidationError(ValidationError::Code::kMalformed, "sweep data needs columns tau,HM,TPR,FPR,mean_threshold");
  }
  std::vector<pipeline::SweepPoint> out;
  for (const auto& r : t.rows) {
    out.push_back({number(r[0]), number(r[1]), number(r[2]), number(r[3]), number(r[4]) != 0.0});
  }
  if (out.empty()) throw ValidationError(ValidationError::Code::kMalformed, "sweep data has no rows");
  return out;
}

// ---------------------------------------------------------------------------
// SVG

namespace svg {

inline constexpr double kWidth = 520, kHeight = 420, kLeft = 60, kTop = 20, kPlot = 340;
inline const char* const kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};

inline std::string x_px(double x, double lo, double hi) { return fixed(kLeft + (x - lo) / (hi - lo) * kPlot, 2); }
inline std::string y_px(double y) { return fixed(kTop + (1.0 - y) * kPlot, 2); }

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

inline void frame(std::ostringstream& o, const std::string& x_label, const std::string& y_label, double x_lo,
                  double x_hi) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kPlot << "\" height=\"" << kPlot
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double f = k / 4.0;
    o << "<text x=\"" << x_px(x_lo + f * (x_hi - x_lo), x_lo, x_hi) << "\" y=\"" << kTop + kPlot + 15
      << "\" font-size=\"10\" text-anchor=\"middle\">" << fixed(x_lo + f * (x_hi - x_lo), 2) << "</text>\n";
    o << "<text x=\"" << kLeft - 5 << "\" y=\"" << y_px(f) << "\" font-size=\"10\" text-anchor=\"end\">"
      << fixed(f, 2) << "</text>\n";
  }
  o << "<text x=\"" << kLeft + kPlot / 2 << "\" y=\"" << kTop + kPlot + 32
    << "\" font-size=\"12\" text-anchor=\"middle\">" << x_label << "</text>\n";
  o << "<text x=\"15\" y=\"" << kTop + kPlot / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
    << kTop + kPlot / 2 << ")\">" << y_label << "</text>\n";
}

inline void polyline(std::ostringstream& o, const std::vector<std::pair<double, double>>& pts, double x_lo,
                     double x_hi, const char* color, const char* extra = "") {
  o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"" << extra << " points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    o << (i ? " " : "") << x_px(pts[i].first, x_lo, x_hi) << "," << y_px(pts[i].second);
  }
  o << "\"/>\n";
}

inline void legend(std::ostringstream& o, std::size_t row, const std::string& label, const char* color) {
  const double y = kTop + kPlot - 12.0 * static_cast<double>(row + 1) - 4.0;
  o << "<line x1=\"" << kLeft + kPlot - 150 << "\" y1=\"" << fixed(y - 3, 2) << "\" x2=\"" << kLeft + kPlot - 135
    << "\" y2=\"" << fixed(y - 3, 2) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
  o << "<text x=\"" << kLeft + kPlot - 130 << "\" y=\"" << fixed(y, 2) << "\" font-size=\"10\">" << escape(label)
    << "</text>\n";
}

}  // namespace svg

// ROC curves with the random-guess diagonal; legend entries read "name (AUC = 0.97)".
inline std::string render_roc(const std::vector<RocSeries>& series) {
  std::ostringstream o;
  svg::frame(o, "False positive rate", "True positive rate", 0.0, 1.0);
  o << "<line class=\"diagonal\" x1=\"" << svg::x_px(0, 0, 1) << "\" y1=\"" << svg::y_px(0) << "\" x2=\""
    << svg::x_px(1, 0, 1) << "\" y2=\"" << svg::y_px(1) << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = svg::kColors[k % std::size(svg::kColors)];
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : series[k].curve.points) pts.emplace_back(p.fpr, p.tpr);
    svg::polyline(o, pts, 0.0, 1.0, color);
    svg::legend(o, series.size() - 1 - k, series[k].name + " (AUC = " + fixed(metrics::auc(series[k].curve), 2) + ")",
                color);
  }
  o << "</svg>\n";
  return o.str();
}

// HM / TPR / FPR against tau, with the mean-entropy threshold marked in red.
inline std::string render_sweep(const std::vector<pipeline::SweepPoint>& pts) {
  double lo = pts.front().tau, hi = pts.front().tau;
  for (const auto& p : pts) lo = std::min(lo, p.tau), hi = std::max(hi, p.tau);
  if (hi <= lo) hi = lo + 1.0;
  std::ostringstream o;
  svg::frame(o, "Entropy threshold", "Value", lo, hi);
  const std::pair<const char*, double pipeline::SweepPoint::*> curves[] = {
      {"HM", &pipeline::SweepPoint::hm}, {"TPR", &pipeline::SweepPoint::tpr}, {"FPR", &pipeline::SweepPoint::fpr}};
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& p : pts) xy.emplace_back(p.tau, p.*curves[k].second);
    svg::polyline(o, xy, lo, hi, svg::kColors[k]);
    svg::legend(o, 2 - k, curves[k].first, svg::kColors[k]);
  }
  for (const auto& p : pts) {
    if (!p.is_mean) continue;
    for (double v : {p.hm, p.tpr, p.fpr}) {
      o << "<circle class=\"mean-threshold\" cx=\"" << svg::x_px(p.tau, lo, hi) << "\" cy=\"" << svg::y_px(v)
        << "\" r=\"4\" fill=\"red\"/>\n";
    }
    o << "<text x=\"" << svg::x_px(p.tau, lo, hi) << "\" y=\"" << fixed(svg::kTop + 12, 2)
      << "\" font-size=\"10\" fill=\"red\" text-anchor=\"middle\">mean tau = " << fixed(p.tau, 4) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// Picks the renderer from the CSV header.
inline std::string render_csv(const std::filesystem::path& input) {
  const Table t = read_csv(input);
  if (!t.header.empty() && t.header[0] == "method") return render_roc(parse_roc(t));
  if (!t.header.empty() && t.header[0] == "tau") return render_sweep(parse_sweep(t));
  throw ValidationError(ValidationError::Code::kMalformed, input.string() + ": unrecognized plot data header");
}

}  // namespace avood::plot
