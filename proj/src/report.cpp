// Copyright 2026 The TokenChain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tokenchain/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tokenchain/checkpoint.hpp"
#include "tokenchain/error.hpp"

namespace tokenchain::report {

namespace fs = std::filesystem;

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"wer", "cer", "t2s_wer", "s2a_accuracy"};
  return names;
}

double metric_value(const SplitScores& s, const std::string& metric) {
  if (metric == "wer") return s.wer;
  if (metric == "cer") return s.cer;
  if (metric == "t2s_wer") return s.t2s_wer;
  if (metric == "s2a_accuracy") return s.s2a_accuracy;
  throw ConfigError("unknown metric '" + metric + "'");
}

std::string exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

struct Column {
  std::string split;
  std::string metric;
};

std::vector<Column> grid_columns(std::span<const RunReport> runs) {
  std::set<std::string> splits;
  for (const auto& r : runs)
    for (const auto& [name, _] : r.final_scores) splits.insert(name);
  std::vector<Column> cols;
  for (const auto& split : splits)
    for (const auto& metric : metric_names()) {
      const bool scored = std::any_of(runs.begin(), runs.end(), [&](const RunReport& r) {
        const auto it = r.final_scores.find(split);
        return it != r.final_scores.end() && metric_value(it->second, metric) >= 0.0;
      });
      if (scored) cols.push_back({split, metric});
    }
  return cols;
}

std::string cell(const RunReport& r, const Column& c) {
  const auto it = r.final_scores.find(c.split);
  if (it == r.final_scores.end()) return "";
  const double v = metric_value(it->second, c.metric);
  return v < 0.0 ? "" : exact(v);
}

std::vector<std::string> row_prefix(const RunReport& r) {
  return {r.name,
          trainer::to_string(r.kind),
          r.estimator,
          r.tau,
          std::to_string(r.seed),
          std::to_string(r.epochs.size()),
          std::to_string(r.best_epoch)};
}

const std::vector<std::string> kPrefixHeader = {"run",  "kind",   "estimator", "tau",
                                                "seed", "epochs", "best_epoch"};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return palette[i % 8];
}

constexpr double kWidth = 760, kHeight = 420;
constexpr double kLeft = 70, kRight = 200, kTop = 40, kBottom = 50;
constexpr double kPlotW = kWidth - kLeft - kRight, kPlotH = kHeight - kTop - kBottom;

class Svg {
 public:
  explicit Svg(const std::string& title) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
         << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
         << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    text(kLeft + kPlotW / 2, 22, title, "middle", 15);
  }
  void text(double x, double y, const std::string& s, const char* anchor = "start", int size = 11) {
    out_ << "<text x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y, 1)
         << "\" font-family=\"sans-serif\" font-size=\"" << size << "\" text-anchor=\"" << anchor
         << "\">" << xml(s) << "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, const char* stroke = "#444",
            double width = 1.0) {
    out_ << "<line x1=\"" << fixed(x1, 1) << "\" y1=\"" << fixed(y1, 1) << "\" x2=\""
         << fixed(x2, 1) << "\" y2=\"" << fixed(y2, 1) << "\" stroke=\"" << stroke
         << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const char* fill) {
    out_ << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y, 1) << "\" width=\"" << fixed(w, 1)
         << "\" height=\"" << fixed(h, 1) << "\" fill=\"" << fill << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const char* stroke,
                const std::string& label) {
    out_ << "<polyline data-run=\"" << xml(label) << "\" fill=\"none\" stroke=\"" << stroke
         << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      out_ << (i ? " " : "") << fixed(pts[i].first, 2) << ',' << fixed(pts[i].second, 2);
    out_ << "\"/>\n";
  }
  void legend(std::size_t i, const std::string& label, const char* fill) {
    const double y = kTop + 10 + 18.0 * static_cast<double>(i);
    rect(kLeft + kPlotW + 16, y - 9, 12, 10, fill);
    text(kLeft + kPlotW + 34, y, label);
  }
  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

void y_axis(Svg& svg, double lo, double hi, const std::string& label) {
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    const double y = kTop + kPlotH - kPlotH * i / 4.0;
    svg.line(kLeft - 4, y, kLeft + kPlotW, y, "#ddd");
    svg.text(kLeft - 8, y + 4, fixed(v, hi - lo < 0.2 ? 3 : 2), "end");
  }
  svg.line(kLeft, kTop, kLeft, kTop + kPlotH);
  svg.text(18, kTop + kPlotH / 2, label, "middle");
}

bool is_error_metric(const std::string& metric) { return metric != "s2a_accuracy"; }

}  // namespace

std::string grid_csv(std::span<const RunReport> runs) {
  const auto cols = grid_columns(runs);
  std::ostringstream out;
  for (std::size_t i = 0; i < kPrefixHeader.size(); ++i) out << (i ? "," : "") << kPrefixHeader[i];
  for (const auto& c : cols) out << ',' << c.split << '_' << c.metric;
  out << '\n';
  for (const auto& r : runs) {
    const auto prefix = row_prefix(r);
    for (std::size_t i = 0; i < prefix.size(); ++i) out << (i ? "," : "") << csv_field(prefix[i]);
    for (const auto& c : cols) out << ',' << cell(r, c);
    out << '\n';
  }
  return out.str();
}

std::string grid_markdown(std::span<const RunReport> runs) {
  const auto cols = grid_columns(runs);
  std::ostringstream out;
  out << '|';
  for (const auto& h : kPrefixHeader) out << ' ' << h << " |";
  for (const auto& c : cols) out << ' ' << c.split << ' ' << c.metric << " |";
  out << "\n|";
  for (std::size_t i = 0; i < kPrefixHeader.size() + cols.size(); ++i)
    out << (i < kPrefixHeader.size() ? "---|" : "---:|");
  out << '\n';
  for (const auto& r : runs) {
    out << '|';
    for (const auto& f : row_prefix(r)) out << ' ' << f << " |";
    for (const auto& c : cols) out << ' ' << cell(r, c) << " |";
    out << '\n';
  }
  return out.str();
}

std::string svg_curves(std::span<const RunReport> runs, const std::string& split,
                       const std::string& metric, Axis axis) {
  metric_value(SplitScores{}, metric);
  struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;
  };
  std::vector<Series> series;
  for (const auto& r : runs) {
    Series s{r.name, {}};
    bool ok = !r.epochs.empty();
    for (const auto& e : r.epochs) {
      const auto it = e.dev.find(split);
      const double v = it == e.dev.end() ? -1.0 : metric_value(it->second, metric);
      if (v < 0.0) {
        ok = false;
        break;
      }
      s.pts.emplace_back(axis == Axis::epoch ? e.epoch : static_cast<double>(e.step), v);
    }
    if (ok) series.push_back(std::move(s));
  }
  const std::string xlabel = axis == Axis::epoch ? "epoch" : "optimizer step";
  Svg svg(split + " " + metric + " vs " + xlabel);
  if (series.empty()) {
    svg.text(kLeft + kPlotW / 2, kTop + kPlotH / 2, "no run tracked " + metric + " on " + split,
             "middle", 13);
    return svg.finish();
  }
  double x_lo = 1e300, x_hi = -1e300, y_hi = 0.0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.pts) {
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_hi = std::max(y_hi, y);
    }
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;
  y_hi = y_hi > 0.0 ? y_hi * 1.05 : 1.0;
  const auto px = [&](double x) { return kLeft + kPlotW * (x - x_lo) / (x_hi - x_lo); };
  const auto py = [&](double y) { return kTop + kPlotH - kPlotH * y / y_hi; };
  y_axis(svg, 0.0, y_hi, metric);
  svg.line(kLeft, kTop + kPlotH, kLeft + kPlotW, kTop + kPlotH);
  for (int i = 0; i <= 4; ++i) {
    const double x = x_lo + (x_hi - x_lo) * i / 4.0;
    svg.text(px(x), kTop + kPlotH + 16, fixed(x, axis == Axis::epoch && x_hi - x_lo >= 4 ? 0 : 1),
             "middle");
  }
  svg.text(kLeft + kPlotW / 2, kHeight - 12, xlabel, "middle");
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : series[i].pts) pts.emplace_back(px(x), py(y));
    svg.polyline(pts, color(i), series[i].name);
    svg.legend(i, series[i].name, color(i));
  }
  return svg.finish();
}

std::string svg_gain_loss(std::span<const RunReport> runs, const std::string& metric) {
  metric_value(SplitScores{}, metric);
  std::set<std::string> split_set;
  for (const auto& r : runs)
    for (const auto& [name, init] : r.initial_scores) {
      const auto it = r.final_scores.find(name);
      if (it != r.final_scores.end() && metric_value(init, metric) >= 0.0 &&
          metric_value(it->second, metric) >= 0.0)
        split_set.insert(name);
    }
  const std::vector<std::string> splits(split_set.begin(), split_set.end());
  // value[run][split] in correct-rate points; NaN when absent.
  std::vector<std::vector<double>> value(runs.size(), std::vector<double>(splits.size(), NAN));
  double extent = 0.0;
  for (std::size_t r = 0; r < runs.size(); ++r)
    for (std::size_t s = 0; s < splits.size(); ++s) {
      const auto a = runs[r].initial_scores.find(splits[s]);
      const auto b = runs[r].final_scores.find(splits[s]);
      if (a == runs[r].initial_scores.end() || b == runs[r].final_scores.end()) continue;
      const double before = metric_value(a->second, metric),
                   after = metric_value(b->second, metric);
      if (before < 0.0 || after < 0.0) continue;
      value[r][s] = 100.0 * (is_error_metric(metric) ? before - after : after - before);
      extent = std::max(extent, std::abs(value[r][s]));
    }
  Svg svg("change in " + metric + " correct rate from starting checkpoint (points)");
  if (splits.empty()) {
    svg.text(kLeft + kPlotW / 2, kTop + kPlotH / 2, "no run recorded starting-checkpoint scores",
             "middle", 13);
    return svg.finish();
  }
  extent = extent > 0.0 ? extent * 1.15 : 1.0;
  const auto py = [&](double v) { return kTop + kPlotH / 2 - (kPlotH / 2) * v / extent; };
  y_axis(svg, -extent, extent, "points");
  svg.line(kLeft, py(0.0), kLeft + kPlotW, py(0.0), "#000", 1.5);
  const double group_w = kPlotW / static_cast<double>(splits.size());
  const double bar_w = 0.8 * group_w / static_cast<double>(std::max<std::size_t>(runs.size(), 1));
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const double g0 = kLeft + group_w * static_cast<double>(s) + 0.1 * group_w;
    svg.text(g0 + 0.4 * group_w, kTop + kPlotH + 16, splits[s], "middle");
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const double v = value[r][s];
      if (std::isnan(v)) continue;
      const double x = g0 + bar_w * static_cast<double>(r);
      const double top = std::min(py(v), py(0.0));
      svg.rect(x, top, bar_w * 0.9, std::abs(py(v) - py(0.0)), color(r));
      svg.text(x + bar_w * 0.45, v >= 0 ? top - 3 : top + std::abs(py(v) - py(0.0)) + 11,
               fixed(v, 1), "middle", 9);
    }
  }
  for (std::size_t r = 0; r < runs.size(); ++r) svg.legend(r, runs[r].name, color(r));
  return svg.finish();
}

std::vector<fs::path> write_aggregate(std::span<const RunReport> runs, const fs::path& out) {
  if (runs.empty()) throw InputError("no run reports to aggregate");
  std::set<std::string> names;
  for (const auto& r : runs)
    if (!names.insert(r.name).second) throw InputError("duplicate run name '" + r.name + "'");
  fs::create_directories(out);
  std::vector<fs::path> written;
  const auto put = [&](const std::string& file, const std::string& body) {
    std::ofstream(out / file) << body;
    written.push_back(out / file);
  };
  put("grid.csv", grid_csv(runs));
  put("grid.md", grid_markdown(runs));
  nlohmann::json agg = nlohmann::json::array();
  for (const auto& r : runs) agg.push_back(trainer::report_to_json(r));
  checkpoint::write_json(out / "aggregate.json", agg, 1);
  written.push_back(out / "aggregate.json");

  std::set<std::string> dev_splits;
  for (const auto& r : runs)
    for (const auto& e : r.epochs)
      for (const auto& [name, _] : e.dev) dev_splits.insert(name);
  for (const auto& split : dev_splits)
    for (const std::string metric : {"wer", "cer"})
      for (Axis axis : {Axis::epoch, Axis::step})
        put("curve_" + split + "_" + metric + (axis == Axis::epoch ? "_epoch" : "_step") + ".svg",
            svg_curves(runs, split, metric, axis));
  for (const std::string metric : {"wer", "cer"})
    put("gain_loss_" + metric + ".svg", svg_gain_loss(runs, metric));
  return written;
}

}  // namespace tokenchain::report
