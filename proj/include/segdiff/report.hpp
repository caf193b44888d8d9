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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "segdiff/metrics.hpp"

namespace segdiff {

struct ReportRow {
  std::string label;
  std::vector<MetricSummary> metrics;  // metric_names(set) order
};

struct ReportTables {
  std::vector<ReportRow> segmentation;
  std::vector<ReportRow> generation;  // single row when present
};

/// Aggregates every persisted per-case file under `run_dir` into report/: segmentation.csv,
/// generation.csv, summary.md and SVG plots. Throws EmptyReportError when no evaluation
/// stage has produced results.
ReportTables write_report(const std::filesystem::path& run_dir);

/// "0.0873 ± 0.0363" with the given number of decimals.
std::string mean_pm_std(const MetricSummary& s, int decimals = 4);

// ---------------------------------------------------------------- plots

struct PlotSeries {
  std::string name;
  std::vector<double> y;
  std::vector<double> err;  // optional; same length as y
};

/// Line plot over categorical x labels with optional error bars.
std::string svg_line_plot(const std::string& title, const std::vector<std::string>& x_labels, const std::string& y_label,
                          const std::vector<PlotSeries>& series);
/// Bar chart with optional error bars.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels, const std::string& y_label,
                          const std::vector<double>& values, const std::vector<double>& errors = {});

}  // namespace segdiff
