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

// Segmentation and image-similarity metrics.
//
// Empty-set conventions:
//   dice(empty, empty) = 1
//   precision, recall with a zero denominator = 1 when both masks are empty, else 0
//   surface metrics with exactly one empty mask = image diagonal (in spacing units), flagged
//   surface metrics with both masks empty = 0
//
// Surface points are the boundary pixels of edges_from_mask. A mask that fills the whole
// image has no such pixels; its foreground pixels are used instead.

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdiff/common.hpp"

namespace segdiff {


struct RegionMetrics {
  double dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct SurfaceMetrics {
  double hd95 = 0.0;
  double assd = 0.0;
  bool empty_warning = false;
};

struct PixelMetrics {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
};

struct StructuralMetrics {
  double ssim = 0.0;
  double ms_ssim = 0.0;
};

RegionMetrics region_metrics(const Mask& pred, const Mask& gt);
SurfaceMetrics surface_metrics(const Mask& pred, const Mask& gt, Spacing spacing = {1.0, 1.0});
PixelMetrics pixel_metrics(const Image& a, const Image& b);
StructuralMetrics structural_metrics(const Image& a, const Image& b);

/// Surface points of a binary mask as (row, col) pairs.
std::vector<std::array<int, 2>> surface_points(const Mask& mask);

/// Distance from each surface point of `from` to the nearest surface point of `to`,
/// via an exact Euclidean distance transform.
std::vector<double> directed_surface_distances(const Mask& from, const Mask& to, Spacing spacing);

/// Linear interpolation between order statistics at rank q/100 * (n - 1).
double percentile(std::vector<double> values, double q);

/// Mean SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5), data range 1.
double ssim(const Image& a, const Image& b);
/// Five-scale MS-SSIM; coarse scales are dropped while the smallest side is below 22 pixels.
double ms_ssim(const Image& a, const Image& b);
/// Number of MS-SSIM scales used for an image of this size.
int ms_ssim_scales(std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------- reports

enum class MetricSet { kGeneration, kSegmentation };
std::string_view metric_set_name(MetricSet s);
const std::vector<std::string>& metric_names(MetricSet s);

struct CaseMetrics {
  std::string case_id;
  std::vector<double> values;  // in metric_names(set) order
  bool warning = false;
  int fold = -1;
  int seed_index = -1;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single case
  std::size_t count = 0;
};

MetricSummary summarize(const std::vector<double>& values);

/// Per-case rows plus aggregates that are always derived from those rows.
class MetricsReport {
 public:
  MetricsReport() = default;
  MetricsReport(MetricSet set, Spacing spacing) : set_(set), spacing_(spacing) {}

  void add(CaseMetrics row);
  void append(const MetricsReport& other);

  MetricSet set() const noexcept { return set_; }
  Spacing spacing() const noexcept { return spacing_; }
  const std::vector<CaseMetrics>& cases() const noexcept { return cases_; }
  std::vector<double> column(std::string_view metric) const;
  MetricSummary summary(std::string_view metric) const;
  std::size_t warnings() const;

  void write_csv(const std::filesystem::path& path) const;
  static MetricsReport read_csv(const std::filesystem::path& path);
  nlohmann::json summary_json() const;

 private:
  MetricSet set_ = MetricSet::kSegmentation;
  Spacing spacing_{1.0, 1.0};
  std::vector<CaseMetrics> cases_;
};

/// One segmentation row: dice, precision, recall, hd95, assd.
CaseMetrics segmentation_case(std::string case_id, const Mask& pred, const Mask& gt, Spacing spacing);
/// One generation row: mae, mse, rmse, ssim, ms_ssim.
CaseMetrics generation_case(std::string case_id, const Image& generated, const Image& reference);

}  // namespace segdiff
