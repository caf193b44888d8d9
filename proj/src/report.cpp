/*
 * Copyright 2026 The segdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "segdiff/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "segdiff/image_io.hpp"
#include "segdiff/pipeline.hpp"

namespace segdiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 90;

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      default:
        out += ch;
    }
  }
  return out;
}

struct Axis {
  double lo, hi;
  double y(double v) const { return kTop + (kHeight - kTop - kBottom) * (1.0 - (v - lo) / (hi - lo)); }
};

Axis make_axis(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {std::min(0.0, lo - pad) < 0.0 && lo >= 0.0 ? 0.0 : lo - pad, hi + pad};
}

void frame(std::ostringstream& out, const std::string& title, const std::string& y_label, const Axis& axis) {
  out << fmt::format(R"svg(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)svg",
                     kWidth, kHeight)
      << "\n";
  out << fmt::format(R"svg(<rect width="{}" height="{}" fill="white"/>)svg", kWidth, kHeight) << "\n";
  out << fmt::format(R"svg(<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>)svg", kWidth / 2, escape(title)) << "\n";
  out << fmt::format(R"svg(<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>)svg",
                     (kHeight - kBottom + kTop) / 2, (kHeight - kBottom + kTop) / 2, escape(y_label))
      << "\n";
  const int x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom;
  out << fmt::format(R"svg(<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>)svg", x0, y0, x1, y0) << "\n";
  out << fmt::format(R"svg(<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>)svg", x0, kTop, x0, y0) << "\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = axis.lo + (axis.hi - axis.lo) * i / 4.0;
    const double y = axis.y(v);
    out << fmt::format(R"svg(<line x1="{}" y1="{:.1f}" x2="{}" y2="{:.1f}" stroke="#ddd"/>)svg", x0, y, x1, y) << "\n";
    out << fmt::format(R"svg(<text x="{}" y="{:.1f}" text-anchor="end">{:.3g}</text>)svg", x0 - 6, y + 4, v) << "\n";
  }
}

void x_labels(std::ostringstream& out, const std::vector<std::string>& labels, const std::vector<double>& xs) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = kHeight - kBottom + 16;
    out << fmt::format(R"svg(<text x="{:.1f}" y="{:.1f}" text-anchor="end" transform="rotate(-35 {:.1f} {:.1f})">{}</text>)svg",
                       xs[i], y, xs[i], y, escape(labels[i]))
        << "\n";
  }
}

std::vector<double> x_positions(std::size_t n) {
  std::vector<double> xs;
  const double span = kWidth - kLeft - kRight;
  for (std::size_t i = 0; i < n; ++i) xs.push_back(kLeft + span * (i + 0.5) / static_cast<double>(n));
  return xs;
}

std::pair<double, double> value_range(const std::vector<double>& y, const std::vector<double>& err) {
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = i < err.size() ? err[i] : 0.0;
    lo = std::min(lo, y[i] - e);
    hi = std::max(hi, y[i] + e);
  }
  return {lo, hi};
}

ReportRow row_from(const std::string& label, const MetricsReport& report) {
  ReportRow row{label, {}};
  for (const auto& m : metric_names(report.set())) row.metrics.push_back(report.summary(m));
  return row;
}

std::string markdown_table(const std::vector<ReportRow>& rows, MetricSet set, const std::string& first) {
  std::string out = "| " + first;
  for (const auto& m : metric_names(set)) out += " | " + m;
  out += " |\n|---";
  for (std::size_t i = 0; i < metric_names(set).size(); ++i) out += "|---";
  out += "|\n";
  for (const auto& r : rows) {
    out += "| " + r.label;
    for (const auto& s : r.metrics) out += " | " + mean_pm_std(s);
    out += " |\n";
  }
  return out;
}

void write_table_csv(const fs::path& path, const std::vector<ReportRow>& rows, MetricSet set, const std::string& first) {
  CsvTable t{{first}, {}};
  for (const auto& m : metric_names(set)) {
    t.header.push_back(m + "_mean");
    t.header.push_back(m + "_std");
  }
  t.header.push_back("cases");
  for (const auto& r : rows) {
    std::vector<std::string> cells{r.label};
    for (const auto& s : r.metrics) {
      cells.push_back(format_double(s.mean));
      cells.push_back(format_double(s.std));
    }
    cells.push_back(std::to_string(r.metrics.empty() ? 0 : r.metrics.front().count));
    t.rows.push_back(std::move(cells));
  }
  write_csv(path, t);
}

}  // namespace

std::string mean_pm_std(const MetricSummary& s, int decimals) {
  return fmt::format("{:.{}f} ± {:.{}f}", s.mean, decimals, s.std, decimals);
}

std::string svg_line_plot(const std::string& title, const std::vector<std::string>& x_labels_in, const std::string& y_label,
                          const std::vector<PlotSeries>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::vector<double> all, errs;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      all.push_back(s.y[i]);
      errs.push_back(i < s.err.size() ? s.err[i] : 0.0);
    }
  }
  const auto [lo, hi] = value_range(all, errs);
  const Axis axis = make_axis(lo, hi);
  std::ostringstream out;
  frame(out, title, y_label, axis);
  const auto xs = x_positions(x_labels_in.size());
  x_labels(out, x_labels_in, xs);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % 5];
    std::string points;
    for (std::size_t i = 0; i < s.y.size() && i < xs.size(); ++i) {
      points += fmt::format("{:.1f},{:.1f} ", xs[i], axis.y(s.y[i]));
      if (i < s.err.size() && s.err[i] > 0.0) {
        out << fmt::format(R"svg(<line x1="{:.1f}" y1="{:.1f}" x2="{:.1f}" y2="{:.1f}" stroke="{}"/>)svg", xs[i],
                           axis.y(s.y[i] - s.err[i]), xs[i], axis.y(s.y[i] + s.err[i]), color)
            << "\n";
      }
      out << fmt::format(R"svg(<circle cx="{:.1f}" cy="{:.1f}" r="3" fill="{}"/>)svg", xs[i], axis.y(s.y[i]), color) << "\n";
    }
    out << fmt::format(R"svg(<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>)svg", points, color) << "\n";
    out << fmt::format(R"svg(<text x="{}" y="{}" fill="{}">{}</text>)svg", kWidth - kRight - 120, kTop + 14 + 16 * k, color,
                       escape(s.name))
        << "\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels, const std::string& y_label,
                          const std::vector<double>& values, const std::vector<double>& errors) {
  auto [lo, hi] = value_range(values, errors);
  lo = std::min(lo, 0.0);
  const Axis axis = make_axis(lo, hi);
  std::ostringstream out;
  frame(out, title, y_label, axis);
  const auto xs = x_positions(labels.size());
  x_labels(out, labels, xs);
  const double bar = 0.6 * (kWidth - kLeft - kRight) / std::max<std::size_t>(1, labels.size());
  for (std::size_t i = 0; i < values.size() && i < xs.size(); ++i) {
    const double top = axis.y(std::max(values[i], 0.0)), base = axis.y(std::min(values[i], 0.0));
    out << fmt::format(R"svg(<rect x="{:.1f}" y="{:.1f}" width="{:.1f}" height="{:.1f}" fill="#4c72b0"/>)svg", xs[i] - bar / 2,
                       top, bar, base - top)
        << "\n";
    if (i < errors.size() && errors[i] > 0.0) {
      out << fmt::format(R"svg(<line x1="{:.1f}" y1="{:.1f}" x2="{:.1f}" y2="{:.1f}" stroke="black"/>)svg", xs[i],
                         axis.y(values[i] - errors[i]), xs[i], axis.y(values[i] + errors[i]))
          << "\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

ReportTables write_report(const fs::path& run_dir) {
  ReportTables tables;
  const fs::path seg_dir = run_dir / "eval-seg";
  const fs::path gen_dir = run_dir / "eval-gen";
  const fs::path out_dir = run_dir / "report";

  if (fs::exists(seg_dir / "DONE") && fs::exists(seg_dir / "methods.json")) {
    const json methods = json::parse(read_text(seg_dir / "methods.json"));
    for (const auto& m : methods.at("methods")) {
      const auto report = MetricsReport::read_csv(seg_dir / m.at("key").get<std::string>() / "cases.csv");
      tables.segmentation.push_back(row_from(m.at("label").get<std::string>(), report));
    }
  }
  std::optional<json> pairing;
  if (fs::exists(gen_dir / "DONE") && fs::exists(gen_dir / "cases.csv")) {
    tables.generation.push_back(row_from("Generated vs held-out", MetricsReport::read_csv(gen_dir / "cases.csv")));
    const CsvTable p = read_csv(gen_dir / "pairing.csv");
    std::vector<double> paired, random;
    for (const auto& v : p.values("paired_mae")) paired.push_back(std::stod(v));
    for (const auto& v : p.values("random_mae")) random.push_back(std::stod(v));
    pairing = json{{"paired", summarize(paired).mean}, {"random", summarize(random).mean}};
  }

  std::vector<std::pair<std::string, std::vector<AblationRow>>> ablations;
  if (fs::exists(run_dir / "ablation")) {
    std::vector<fs::path> sweeps;
    for (const auto& e : fs::directory_iterator(run_dir / "ablation")) {
      if (e.is_directory() && fs::exists(e.path() / "DONE") && fs::exists(e.path() / "table.csv")) sweeps.push_back(e.path());
    }
    std::sort(sweeps.begin(), sweeps.end());
    for (const auto& s : sweeps) {
      const std::string parameter = s.filename().string();
      const auto values = read_csv(s / "table.csv").values(parameter);
      ablations.emplace_back(parameter, ablation_rows_from_cases(s, parameter, values));
    }
  }

  if (tables.segmentation.empty() && tables.generation.empty()) {
    throw EmptyReportError("no evaluation results under " + run_dir.string() + "; run eval-seg or eval-gen first");
  }

  fs::create_directories(out_dir);
  std::string md = "# Results\n\n";
  if (!tables.segmentation.empty()) {
    write_table_csv(out_dir / "segmentation.csv", tables.segmentation, MetricSet::kSegmentation, "method");
    md += "## Segmentation (mean ± std over validation cases)\n\n" +
          markdown_table(tables.segmentation, MetricSet::kSegmentation, "Method") + "\n";
    std::vector<std::string> labels;
    std::vector<double> dice, dice_err, hd, hd_err;
    for (const auto& r : tables.segmentation) {
      labels.push_back(r.label);
      dice.push_back(r.metrics[0].mean);
      dice_err.push_back(r.metrics[0].std);
      hd.push_back(r.metrics[3].mean);
      hd_err.push_back(r.metrics[3].std);
    }
    write_text(out_dir / "segmentation_dice.svg", svg_bar_chart("Dice by method", labels, "Dice", dice, dice_err));
    write_text(out_dir / "segmentation_hd95.svg", svg_bar_chart("HD95 by method", labels, "HD95", hd, hd_err));
  }
  if (!tables.generation.empty()) {
    write_table_csv(out_dir / "generation.csv", tables.generation, MetricSet::kGeneration, "comparison");
    md += "## Generation (mean ± std over held-out cases)\n\n" +
          markdown_table(tables.generation, MetricSet::kGeneration, "Comparison") + "\n";
    md += fmt::format("Edge fidelity: MAE to the conditioning original {:.4f}, to a random original {:.4f}.\n\n",
                      (*pairing)["paired"].get<double>(), (*pairing)["random"].get<double>());
    std::vector<std::string> labels;
    std::vector<double> values, errors;
    for (std::size_t i = 0; i < metric_names(MetricSet::kGeneration).size(); ++i) {
      labels.push_back(metric_names(MetricSet::kGeneration)[i]);
      values.push_back(tables.generation[0].metrics[i].mean);
      errors.push_back(tables.generation[0].metrics[i].std);
    }
    write_text(out_dir / "generation.svg", svg_bar_chart("Generation metrics", labels, "value", values, errors));
  }
  for (const auto& [parameter, rows] : ablations) {
    md += "## Ablation: " + parameter + "\n\n| " + parameter + " | Dice | HD95 | ASSD | plateau candidate |\n|---|---|---|---|---|\n";
    for (const auto& r : rows) {
      md += "| " + r.value + " | " + mean_pm_std(r.dice) + " | " + mean_pm_std(r.hd95, 3) + " | " + mean_pm_std(r.assd, 3) +
            " | " + (r.plateau_candidate ? "yes" : "") + " |\n";
    }
    md += "\nPlot: ablation/" + parameter + "/plot.svg\n\n";
  }
  write_text(out_dir / "summary.md", md);
  return tables;
}

}  // namespace segdiff
