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

#include "segdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "segdiff/conditioning.hpp"
#include "segdiff/image_io.hpp"

namespace segdiff {

namespace {
void require_binary(const Mask& m, const char* what) {
  for (auto v : m.data) {
    if (v > 1) throw ValidationError(std::string(what) + " mask is not binary");
  }
}

void require_unit_range(const Image& m, const char* what) {
  for (float v : m.data) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError(std::string(what) + " image has values outside [0,1]");
  }
}

bool is_empty(const Mask& m) {
  return std::none_of(m.data.begin(), m.data.end(), [](auto v) { return v != 0; });
}

// Squared distance transform along one line: out[q] = min_p (x_q - x_p)^2 + f[p], with
// x = index * step (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, double step, std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double xq = q * step;
    while (k >= 0) {
      const double xv = v[k] * step;
      const double s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : ((f[q] + xq * xq) - (f[v[k - 1]] + (v[k - 1] * step) * (v[k - 1] * step))) /
                                 (2.0 * (xq - v[k - 1] * step));
    z[k + 1] = kInf;
  }
  out.assign(n, kInf);
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * step;
    while (z[j + 1] < xq) ++j;
    const double d = xq - v[j] * step;
    out[q] = d * d + f[v[j]];
  }
}

// Exact squared Euclidean distance to the nearest target point, in spacing units.
std::vector<double> squared_distance_field(std::size_t rows, std::size_t cols,
                                           const std::vector<std::array<int, 2>>& targets, Spacing spacing) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(rows * cols, kInf);
  for (const auto& p : targets) grid[p[0] * cols + p[1]] = 0.0;
  std::vector<double> line, out;
  for (std::size_t c = 0; c < cols; ++c) {
    line.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) line[r] = grid[r * cols + c];
    edt_1d(line, spacing[0], out);
    for (std::size_t r = 0; r < rows; ++r) grid[r * cols + c] = out[r];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    line.assign(grid.begin() + r * cols, grid.begin() + (r + 1) * cols);
    edt_1d(line, spacing[1], out);
    std::copy(out.begin(), out.end(), grid.begin() + r * cols);
  }
  return grid;
}
}  // namespace

RegionMetrics region_metrics(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "region_metrics");
  require_binary(pred, "prediction");
  require_binary(gt, "ground-truth");
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    np += pred.data[i];
    ng += gt.data[i];
    tp += pred.data[i] & gt.data[i];
  }
  const bool both_empty = np == 0 && ng == 0;
  RegionMetrics m;
  m.dice = both_empty ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(np + ng);
  m.precision = np == 0 ? (both_empty ? 1.0 : 0.0) : static_cast<double>(tp) / static_cast<double>(np);
  m.recall = ng == 0 ? (both_empty ? 1.0 : 0.0) : static_cast<double>(tp) / static_cast<double>(ng);
  return m;
}

std::vector<std::array<int, 2>> surface_points(const Mask& mask) {
  const EdgeMap edges = edges_from_mask(mask);
  std::vector<std::array<int, 2>> pts;
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (edges(r, c) > 0.0f) pts.push_back({static_cast<int>(r), static_cast<int>(c)});
    }
  }
  if (pts.empty()) {
    for (std::size_t r = 0; r < mask.rows; ++r) {
      for (std::size_t c = 0; c < mask.cols; ++c) {
        if (mask(r, c)) pts.push_back({static_cast<int>(r), static_cast<int>(c)});
      }
    }
  }
  return pts;
}

std::vector<double> directed_surface_distances(const Mask& from, const Mask& to, Spacing spacing) {
  require_same_shape(from, to, "directed_surface_distances");
  const auto src = surface_points(from);
  const auto dst = surface_points(to);
  if (dst.empty()) throw ArgumentError("directed_surface_distances: target mask is empty");
  const auto field = squared_distance_field(to.rows, to.cols, dst, spacing);
  std::vector<double> d;
  d.reserve(src.size());
  for (const auto& p : src) d.push_back(std::sqrt(field[p[0] * to.cols + p[1]]));
  return d;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile of an empty set");
  if (q < 0.0 || q > 100.0) throw ArgumentError("percentile rank must be in [0,100]");
  std::sort(values.begin(), values.end());
  const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceMetrics surface_metrics(const Mask& pred, const Mask& gt, Spacing spacing) {
  require_same_shape(pred, gt, "surface_metrics");
  require_binary(pred, "prediction");
  require_binary(gt, "ground-truth");
  if (!(spacing[0] > 0.0 && spacing[1] > 0.0)) throw ArgumentError("surface_metrics: spacing must be positive");
  const bool pe = is_empty(pred), ge = is_empty(gt);
  SurfaceMetrics m;
  if (pe && ge) return m;
  if (pe || ge) {
    const double diag = std::hypot(static_cast<double>(pred.rows) * spacing[0], static_cast<double>(pred.cols) * spacing[1]);
    return {diag, diag, true};
  }
  const auto a = directed_surface_distances(pred, gt, spacing);
  const auto b = directed_surface_distances(gt, pred, spacing);
  m.hd95 = std::max(percentile(a, 95.0), percentile(b, 95.0));
  const double sum = std::accumulate(a.begin(), a.end(), 0.0) + std::accumulate(b.begin(), b.end(), 0.0);
  m.assd = sum / static_cast<double>(a.size() + b.size());
  return m;
}

PixelMetrics pixel_metrics(const Image& a, const Image& b) {
  require_same_shape(a, b, "pixel_metrics");
  if (a.empty()) throw ArgumentError("pixel_metrics: empty images");
  require_unit_range(a, "first");
  require_unit_range(b, "second");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const auto n = static_cast<double>(a.size());
  PixelMetrics m{abs_sum / n, sq_sum / n, 0.0};
  m.rmse = std::sqrt(m.mse);
  return m;
}

// ---------------------------------------------------------------- SSIM

namespace {
constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 5> kMsWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    w[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

using Plane = Grid<double>;

// Separable valid-mode filtering.
Plane filter_valid(const Plane& in) {
  static const auto taps = gaussian_taps();
  const std::size_t oh = in.rows - kWindow + 1, ow = in.cols - kWindow + 1;
  Plane tmp(in.rows, ow), out(oh, ow);
  for (std::size_t r = 0; r < in.rows; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * in(r, c + k);
      tmp(r, c) = s;
    }
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * tmp(r + k, c);
      out(r, c) = s;
    }
  return out;
}

struct SsimParts {
  double ssim;
  double cs;
};

SsimParts ssim_parts(const Plane& x, const Plane& y) {
  if (x.rows < kWindow || x.cols < kWindow) {
    throw ArgumentError("ssim: images must be at least " + std::to_string(kWindow) + "x" + std::to_string(kWindow));
  }
  Plane xx(x.rows, x.cols), yy(x.rows, x.cols), xy(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx.data[i] = x.data[i] * x.data[i];
    yy.data[i] = y.data[i] * y.data[i];
    xy.data[i] = x.data[i] * y.data[i];
  }
  const Plane mx = filter_valid(x), my = filter_valid(y);
  const Plane sxx = filter_valid(xx), syy = filter_valid(yy), sxy = filter_valid(xy);
  double ssim_sum = 0.0, cs_sum = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx.data[i] - mx.data[i] * mx.data[i];
    const double vy = syy.data[i] - my.data[i] * my.data[i];
    const double cov = sxy.data[i] - mx.data[i] * my.data[i];
    const double cs = (2.0 * cov + kC2) / (vx + vy + kC2);
    const double l = (2.0 * mx.data[i] * my.data[i] + kC1) / (mx.data[i] * mx.data[i] + my.data[i] * my.data[i] + kC1);
    ssim_sum += l * cs;
    cs_sum += cs;
  }
  const auto n = static_cast<double>(mx.size());
  return {ssim_sum / n, cs_sum / n};
}

Plane to_plane(const Image& a) {
  Plane p(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) p.data[i] = a.data[i];
  return p;
}

Plane downsample2(const Plane& in) {
  Plane out(in.rows / 2, in.cols / 2);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c)
      out(r, c) = 0.25 * (in(2 * r, 2 * c) + in(2 * r + 1, 2 * c) + in(2 * r, 2 * c + 1) + in(2 * r + 1, 2 * c + 1));
  return out;
}
}  // namespace

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  return ssim_parts(to_plane(a), to_plane(b)).ssim;
}

int ms_ssim_scales(std::size_t rows, std::size_t cols) {
  const std::size_t side = std::min(rows, cols);
  int scales = static_cast<int>(kMsWeights.size());
  while (scales > 1 && (side >> (scales - 1)) < 2 * kWindow) --scales;
  return scales;
}

double ms_ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ms_ssim");
  const int scales = ms_ssim_scales(a.rows, a.cols);
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += kMsWeights[s];
  Plane x = to_plane(a), y = to_plane(b);
  double result = 1.0;
  for (int s = 0; s < scales; ++s) {
    const auto parts = ssim_parts(x, y);
    const double w = kMsWeights[s] / wsum;
    // Negative structure terms would make the fractional power undefined.
    const double term = s + 1 == scales ? parts.ssim : parts.cs;
    result *= std::pow(std::max(term, 0.0), w);
    if (s + 1 < scales) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  return result;
}

StructuralMetrics structural_metrics(const Image& a, const Image& b) {
  require_same_shape(a, b, "structural_metrics");
  require_unit_range(a, "first");
  require_unit_range(b, "second");
  return {ssim(a, b), ms_ssim(a, b)};
}

// ---------------------------------------------------------------- reports

std::string_view metric_set_name(MetricSet s) { return s == MetricSet::kGeneration ? "generation" : "segmentation"; }

const std::vector<std::string>& metric_names(MetricSet s) {
  static const std::vector<std::string> gen = {"mae", "mse", "rmse", "ssim", "ms_ssim"};
  static const std::vector<std::string> seg = {"dice", "precision", "recall", "hd95", "assd"};
  return s == MetricSet::kGeneration ? gen : seg;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

void MetricsReport::add(CaseMetrics row) {
  if (row.values.size() != metric_names(set_).size()) throw ArgumentError("metrics row has the wrong width");
  cases_.push_back(std::move(row));
}

void MetricsReport::append(const MetricsReport& other) {
  if (other.set_ != set_) throw ArgumentError("cannot merge reports of different metric sets");
  for (const auto& c : other.cases_) add(c);
}

std::vector<double> MetricsReport::column(std::string_view metric) const {
  const auto& names = metric_names(set_);
  const auto it = std::find(names.begin(), names.end(), metric);
  if (it == names.end()) throw ArgumentError("unknown metric \"" + std::string(metric) + "\"");
  const auto idx = static_cast<std::size_t>(it - names.begin());
  std::vector<double> out;
  out.reserve(cases_.size());
  for (const auto& c : cases_) out.push_back(c.values[idx]);
  return out;
}

MetricSummary MetricsReport::summary(std::string_view metric) const { return summarize(column(metric)); }

std::size_t MetricsReport::warnings() const {
  return static_cast<std::size_t>(std::count_if(cases_.begin(), cases_.end(), [](const auto& c) { return c.warning; }));
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  CsvTable t;
  t.header = {"case_id", "fold", "seed_index", "warning"};
  for (const auto& n : metric_names(set_)) t.header.push_back(n);
  for (const auto& c : cases_) {
    std::vector<std::string> row = {c.case_id, std::to_string(c.fold), std::to_string(c.seed_index),
                                    c.warning ? "1" : "0"};
    for (double v : c.values) row.push_back(format_double(v));
    t.rows.push_back(std::move(row));
  }
  segdiff::write_csv(path, t);
}

MetricsReport MetricsReport::read_csv(const std::filesystem::path& path) {
  const CsvTable t = segdiff::read_csv(path);
  const bool gen = std::find(t.header.begin(), t.header.end(), "mae") != t.header.end();
  MetricsReport r(gen ? MetricSet::kGeneration : MetricSet::kSegmentation, {1.0, 1.0});
  std::vector<std::size_t> cols;
  for (const auto& n : metric_names(r.set_)) cols.push_back(t.column(n));
  for (const auto& row : t.rows) {
    CaseMetrics c;
    c.case_id = row[t.column("case_id")];
    c.fold = std::stoi(row[t.column("fold")]);
    c.seed_index = std::stoi(row[t.column("seed_index")]);
    c.warning = row[t.column("warning")] == "1";
    for (auto k : cols) c.values.push_back(std::stod(row[k]));
    r.cases_.push_back(std::move(c));
  }
  return r;
}

nlohmann::json MetricsReport::summary_json() const {
  nlohmann::json j;
  j["metric_set"] = metric_set_name(set_);
  j["cases"] = cases_.size();
  j["warnings"] = warnings();
  j["spacing"] = spacing_;
  for (const auto& n : metric_names(set_)) {
    const auto s = summary(n);
    j["metrics"][n] = {{"mean", s.mean}, {"std", s.std}};
  }
  return j;
}

CaseMetrics segmentation_case(std::string case_id, const Mask& pred, const Mask& gt, Spacing spacing) {
  const auto r = region_metrics(pred, gt);
  const auto s = surface_metrics(pred, gt, spacing);
  return {std::move(case_id), {r.dice, r.precision, r.recall, s.hd95, s.assd}, s.empty_warning};
}

CaseMetrics generation_case(std::string case_id, const Image& generated, const Image& reference) {
  const auto p = pixel_metrics(generated, reference);
  const auto s = structural_metrics(generated, reference);
  return {std::move(case_id), {p.mae, p.mse, p.rmse, s.ssim, s.ms_ssim}};
}

}  // namespace segdiff
