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

#include "segdiff/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "segdiff/denoiser.hpp"
#include "segdiff/image_io.hpp"

namespace segdiff {

PatchMask generate_random_patch(double alpha, int patch_size, std::size_t rows, std::size_t cols, Rng& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("generate_random_patch: alpha must be in [0,1]");
  if (rows == 0 || cols == 0) throw ArgumentError("generate_random_patch: empty image shape");
  if (patch_size < 1 || static_cast<std::size_t>(patch_size) > std::max(rows, cols)) {
    throw ArgumentError("generate_random_patch: patch_size must be in [1, max(H, W)]");
  }
  const auto ps = static_cast<std::size_t>(patch_size);
  const std::size_t gh = (rows + ps - 1) / ps, gw = (cols + ps - 1) / ps;
  std::vector<std::uint8_t> cells(gh * gw);
  for (auto& c : cells) c = rng.uniform() < alpha ? 1 : 0;
  PatchMask m{Mask(rows, cols), alpha, patch_size, {static_cast<int>(gh), static_cast<int>(gw)}};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m.grid(r, c) = cells[(r / ps) * gw + c / ps];
  return m;
}

Image mix(const Image& x0, const Image& xi, const Mask& m) {
  require_same_shape(x0, xi, "mix");
  require_same_shape(x0, m, "mix");
  Image out(x0.rows, x0.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float w = m.data[i];
    out.data[i] = w * x0.data[i] + (1.0f - w) * xi.data[i];
  }
  return out;
}

// ---------------------------------------------------------------- cache

const CacheEntry& AugmentationCache::entry(const std::string& case_id) const {
  for (const auto& e : entries) {
    if (e.original.case_id == case_id) return e;
  }
  throw ValidationError("augmentation cache has no entry for " + case_id);
}

AugmentationCache AugmentationCache::prefix(int k) const {
  if (k < 1 || k > n) throw ArgumentError(fmt::format("cache prefix {} outside [1, {}]", k, n));
  AugmentationCache out{checkpoint_fingerprint, k, {}};
  for (const auto& e : entries) out.entries.push_back({e.original, {e.variants.begin(), e.variants.begin() + k}});
  return out;
}

void AugmentationCache::check_covers(const std::vector<SampleRecord>& records) const {
  for (const auto& r : records) {
    const CacheEntry& e = entry(r.case_id);
    if (static_cast<int>(e.variants.size()) != n) throw ValidationError("cache entry " + r.case_id + " has the wrong variant count");
    if (!(e.original.image == r.image) || e.original.mask != r.mask) {
      throw ValidationError("cache entry " + r.case_id + " was built from a different image");
    }
    for (const auto& v : e.variants) {
      if (!v.image.same_shape(r.image)) throw ValidationError("cache variant shape differs for " + r.case_id);
    }
  }
}

std::uint64_t variant_seed(std::uint64_t seed, const std::string& case_id, int index) {
  return derive_seed(derive_seed(seed, case_id), static_cast<std::uint64_t>(index));
}

AugmentationCache build_augmentation_cache(const std::vector<SampleRecord>& records, const Checkpoint& ckpt,
                                           const Vocabulary& vocab, const CacheBuildOptions& options) {
  if (ckpt.kind != "denoiser" || ckpt.stage != "finetuned") {
    throw StageError("augmentation cache needs a finetuned denoiser checkpoint, got " + ckpt.kind + "/" + ckpt.stage);
  }
  if (options.n < 1) throw ArgumentError("augmentation cache: n must be at least 1");
  if (!ckpt.schedule) throw CheckpointError("checkpoint carries no noise schedule");
  const auto model = denoiser_from_checkpoint(ckpt, vocab);

  std::vector<GenerationRequest> requests;
  for (const auto& r : records) {
    r.validate();
    if (!r.mask) throw ValidationError("augmentation cache: record " + r.case_id + " has no mask");
    const EdgeMap edge = edges_from_mask(*r.mask);
    for (int i = 0; i < options.n; ++i) {
      PromptTriplet p = r.triplet;
      p.aug_texts.clear();
      if (!options.aug_texts.empty()) p.aug_texts.push_back(options.aug_texts[i % options.aug_texts.size()]);
      requests.push_back({std::move(p), edge, variant_seed(options.seed, r.case_id, i)});
    }
  }
  const auto images = generate_images(model, *ckpt.schedule, requests, options.batch_size);

  AugmentationCache cache{ckpt.fingerprint(), options.n, {}};
  std::size_t k = 0;
  for (const auto& r : records) {
    CacheEntry e{r, {}};
    for (int i = 0; i < options.n; ++i, ++k) {
      e.variants.push_back({dequantize(quantize(images[k])), requests[k].prompt.aug_texts, requests[k].seed});
    }
    cache.entries.push_back(std::move(e));
  }
  return cache;
}

void save_cache(const AugmentationCache& cache, const std::filesystem::path& dir) {
  nlohmann::json top{{"checkpoint", cache.checkpoint_fingerprint}, {"n", cache.n}, {"cases", nlohmann::json::array()}};
  for (const auto& e : cache.entries) {
    const auto& r = e.original;
    const auto sub = dir / r.case_id;
    save_image(sub / "original.png", r.image);
    if (r.mask) save_mask(sub / "mask.png", *r.mask);
    nlohmann::json variants = nlohmann::json::array();
    for (std::size_t i = 0; i < e.variants.size(); ++i) {
      const auto name = fmt::format("variant_{:03d}.png", i);
      save_image(sub / name, e.variants[i].image);
      variants.push_back({{"file", name}, {"seed", e.variants[i].seed}, {"aug_texts", e.variants[i].aug_texts}});
    }
    const nlohmann::json manifest{{"case_id", r.case_id},
                                  {"checkpoint", cache.checkpoint_fingerprint},
                                  {"triplet",
                                   {{"modality", r.triplet.modality},
                                    {"organ", r.triplet.organ},
                                    {"category", r.triplet.category},
                                    {"aug_texts", r.triplet.aug_texts}}},
                                  {"split", split_name(r.split)},
                                  {"source_volume_id", r.source_volume_id ? nlohmann::json(*r.source_volume_id) : nlohmann::json(nullptr)},
                                  {"spacing", r.spacing},
                                  {"variants", variants}};
    write_text(sub / "manifest.json", manifest.dump(2) + "\n");
    top["cases"].push_back(r.case_id);
  }
  write_text(dir / "cache.json", top.dump(2) + "\n");
}

AugmentationCache load_cache(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "cache.json")) throw IoError("no augmentation cache at " + dir.string());
  AugmentationCache cache;
  try {
    const auto top = nlohmann::json::parse(read_text(dir / "cache.json"));
    cache.checkpoint_fingerprint = top.at("checkpoint").get<std::string>();
    cache.n = top.at("n").get<int>();
    for (const auto& id : top.at("cases")) {
      const auto sub = dir / id.get<std::string>();
      const auto m = nlohmann::json::parse(read_text(sub / "manifest.json"));
      CacheEntry e;
      auto& r = e.original;
      r.case_id = m.at("case_id").get<std::string>();
      r.image = load_image(sub / "original.png");
      if (std::filesystem::exists(sub / "mask.png")) r.mask = load_mask(sub / "mask.png");
      const auto& t = m.at("triplet");
      r.triplet = {t.at("modality").get<std::string>(), t.at("organ").get<std::string>(),
                   t.at("category").get<std::string>(), t.at("aug_texts").get<std::vector<std::string>>()};
      r.split = parse_split(m.at("split").get<std::string>());
      if (!m.at("source_volume_id").is_null()) r.source_volume_id = m.at("source_volume_id").get<std::string>();
      r.spacing = m.at("spacing").get<Spacing>();
      r.edge = r.mask ? edges_from_mask(*r.mask) : extract_edges(r.image);
      for (const auto& v : m.at("variants")) {
        e.variants.push_back({load_image(sub / v.at("file").get<std::string>()),
                              v.at("aug_texts").get<std::vector<std::string>>(), v.at("seed").get<std::uint64_t>()});
      }
      if (static_cast<int>(e.variants.size()) != cache.n) throw IoError("cache entry " + r.case_id + " is incomplete");
      cache.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed augmentation cache in " + dir.string() + ": " + e.what());
  }
  return cache;
}

// ---------------------------------------------------------------- classic transforms

namespace {
constexpr std::array<std::string_view, 9> kKindNames = {"contrast", "gamma",  "brightness", "noise",     "resolution",
                                                        "mirror",   "rotate", "scale",      "deep-stack"};

void clamp_unit(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

SampleRecord with_image(const SampleRecord& r, Image img) {
  SampleRecord out = r;
  clamp_unit(img);
  out.image = std::move(img);
  if (!out.mask) out.edge = extract_edges(out.image);
  return out;
}

SampleRecord with_spatial(const SampleRecord& r, Image img, std::optional<Mask> mask) {
  SampleRecord out = r;
  clamp_unit(img);
  out.image = std::move(img);
  out.mask = std::move(mask);
  out.edge = out.mask ? edges_from_mask(*out.mask) : extract_edges(out.image);
  return out;
}

float bilinear(const Image& img, double y, double x) {
  const long R = static_cast<long>(img.rows), C = static_cast<long>(img.cols);
  y = std::clamp(y, 0.0, static_cast<double>(R - 1));
  x = std::clamp(x, 0.0, static_cast<double>(C - 1));
  const long y0 = static_cast<long>(std::floor(y)), x0 = static_cast<long>(std::floor(x));
  const long y1 = std::min(y0 + 1, R - 1), x1 = std::min(x0 + 1, C - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = img(y0, x0) * (1.0 - fx) + img(y0, x1) * fx;
  const double bot = img(y1, x0) * (1.0 - fx) + img(y1, x1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

// Resamples image (bilinear, edge clamp) and mask (nearest, zero outside) through an
// output-to-source coordinate map.
template <class Map>
SampleRecord warp(const SampleRecord& r, Map&& to_source) {
  Image img(r.image.rows, r.image.cols);
  std::optional<Mask> mask;
  if (r.mask) mask = Mask(r.image.rows, r.image.cols, 0);
  const long R = static_cast<long>(img.rows), C = static_cast<long>(img.cols);
  for (long i = 0; i < R; ++i)
    for (long j = 0; j < C; ++j) {
      const auto [y, x] = to_source(static_cast<double>(i), static_cast<double>(j));
      img(i, j) = bilinear(r.image, y, x);
      if (mask) {
        const long yi = std::lround(y), xi = std::lround(x);
        (*mask)(i, j) = (yi >= 0 && yi < R && xi >= 0 && xi < C) ? (*r.mask)(yi, xi) : 0;
      }
    }
  return with_spatial(r, std::move(img), std::move(mask));
}
}  // namespace

std::string_view classic_kind_name(ClassicKind k) { return kKindNames[static_cast<int>(k)]; }

ClassicKind parse_classic_kind(std::string_view name) {
  const auto it = std::find(kKindNames.begin(), kKindNames.end(), name);
  if (it == kKindNames.end()) throw ConfigError("unknown classic transform \"" + std::string(name) + "\"");
  return static_cast<ClassicKind>(it - kKindNames.begin());
}

const std::vector<ClassicKind>& all_classic_kinds() {
  static const std::vector<ClassicKind> kinds = {ClassicKind::kContrast,  ClassicKind::kGamma,  ClassicKind::kBrightness,
                                                 ClassicKind::kNoise,     ClassicKind::kResolution, ClassicKind::kMirror,
                                                 ClassicKind::kRotate,    ClassicKind::kScale,  ClassicKind::kDeepStack};
  return kinds;
}

bool is_spatial(ClassicKind k) {
  return k == ClassicKind::kMirror || k == ClassicKind::kRotate || k == ClassicKind::kScale ||
         k == ClassicKind::kResolution;
}

namespace classic {

SampleRecord contrast(const SampleRecord& r, double factor) {
  double mean = 0.0;
  for (float v : r.image.data) mean += v;
  mean /= static_cast<double>(r.image.size());
  Image img = r.image;
  for (auto& v : img.data) v = static_cast<float>(mean + factor * (v - mean));
  return with_image(r, std::move(img));
}

SampleRecord brightness(const SampleRecord& r, double delta) {
  Image img = r.image;
  for (auto& v : img.data) v = static_cast<float>(v + delta);
  return with_image(r, std::move(img));
}

SampleRecord gamma(const SampleRecord& r, double exponent) {
  if (exponent <= 0.0) throw ArgumentError("gamma exponent must be positive");
  Image img = r.image;
  for (auto& v : img.data) v = static_cast<float>(std::pow(static_cast<double>(v), exponent));
  return with_image(r, std::move(img));
}

SampleRecord noise(const SampleRecord& r, double sigma, Rng& rng) {
  Image img = r.image;
  for (auto& v : img.data) v = static_cast<float>(v + sigma * rng.normal());
  return with_image(r, std::move(img));
}

SampleRecord resolution(const SampleRecord& r, double factor) {
  if (!(factor > 0.0 && factor <= 1.0)) throw ArgumentError("resolution factor must be in (0,1]");
  const std::size_t R = r.image.rows, C = r.image.cols;
  const std::size_t h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(R * factor)));
  const std::size_t w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(C * factor)));
  if (h == R && w == C) return r;
  // Down: area-style bilinear at cell centers. Up: bilinear back to full size.
  Image small(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      small(i, j) = bilinear(r.image, (i + 0.5) * R / static_cast<double>(h) - 0.5, (j + 0.5) * C / static_cast<double>(w) - 0.5);
  Image img(R, C);
  std::optional<Mask> mask;
  if (r.mask) mask = Mask(R, C);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      const double sy = (i + 0.5) * h / static_cast<double>(R) - 0.5, sx = (j + 0.5) * w / static_cast<double>(C) - 0.5;
      img(i, j) = bilinear(small, sy, sx);
      if (mask) {
        // Nearest low-resolution cell, then the source pixel nearest to that cell's center.
        const auto ci = std::min<std::size_t>(h - 1, static_cast<std::size_t>(std::max(0.0, std::round(sy))));
        const auto cj = std::min<std::size_t>(w - 1, static_cast<std::size_t>(std::max(0.0, std::round(sx))));
        const auto si = std::min<std::size_t>(R - 1, static_cast<std::size_t>((ci + 0.5) * R / h));
        const auto sj = std::min<std::size_t>(C - 1, static_cast<std::size_t>((cj + 0.5) * C / w));
        (*mask)(i, j) = (*r.mask)(si, sj);
      }
    }
  return with_spatial(r, std::move(img), std::move(mask));
}

SampleRecord mirror(const SampleRecord& r, int axis) {
  if (axis != 0 && axis != 1) throw ArgumentError("mirror axis must be 0 or 1");
  const std::size_t R = r.image.rows, C = r.image.cols;
  Image img(R, C);
  std::optional<Mask> mask;
  if (r.mask) mask = Mask(R, C);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      const std::size_t si = axis == 0 ? R - 1 - i : i, sj = axis == 1 ? C - 1 - j : j;
      img(i, j) = r.image(si, sj);
      if (mask) (*mask)(i, j) = (*r.mask)(si, sj);
    }
  return with_spatial(r, std::move(img), std::move(mask));
}

SampleRecord rotate(const SampleRecord& r, double degrees) {
  if (degrees == 0.0) return r;
  const double th = degrees * std::numbers::pi / 180.0, cs = std::cos(th), sn = std::sin(th);
  const double cy = (r.image.rows - 1) / 2.0, cx = (r.image.cols - 1) / 2.0;
  return warp(r, [&](double i, double j) {
    const double dy = i - cy, dx = j - cx;
    return std::pair{cy + cs * dy - sn * dx, cx + sn * dy + cs * dx};
  });
}

SampleRecord scale(const SampleRecord& r, double factor) {
  if (factor <= 0.0) throw ArgumentError("scale factor must be positive");
  if (factor == 1.0) return r;
  const double cy = (r.image.rows - 1) / 2.0, cx = (r.image.cols - 1) / 2.0;
  return warp(r, [&](double i, double j) { return std::pair{cy + (i - cy) / factor, cx + (j - cx) / factor}; });
}

}  // namespace classic

SampleRecord apply_classic(const SampleRecord& record, const ClassicTransformSpec& spec, Rng& rng) {
  record.validate();
  const auto& g = spec.ranges;
  auto one = [&](ClassicKind k, const SampleRecord& r) -> SampleRecord {
    switch (k) {
      case ClassicKind::kContrast: return classic::contrast(r, rng.uniform(1.0 - g.contrast, 1.0 + g.contrast));
      case ClassicKind::kGamma: return classic::gamma(r, rng.uniform(g.gamma_min, g.gamma_max));
      case ClassicKind::kBrightness: return classic::brightness(r, rng.uniform(-g.brightness, g.brightness));
      case ClassicKind::kNoise: {
        const double sigma = rng.uniform(0.0, g.noise_sigma_max);
        return classic::noise(r, sigma, rng);
      }
      case ClassicKind::kResolution: return classic::resolution(r, rng.uniform(g.resolution_min, g.resolution_max));
      case ClassicKind::kMirror: return classic::mirror(r, spec.mirror_axis ? *spec.mirror_axis : static_cast<int>(rng.index(2)));
      case ClassicKind::kRotate: return classic::rotate(r, rng.uniform(-g.rotate_degrees, g.rotate_degrees));
      case ClassicKind::kScale: return classic::scale(r, rng.uniform(g.scale_min, g.scale_max));
      case ClassicKind::kDeepStack: break;
    }
    throw ConfigError("deep-stack cannot nest");
  };
  if (spec.kind != ClassicKind::kDeepStack) return one(spec.kind, record);
  static constexpr std::array<ClassicKind, 8> kOrder = {ClassicKind::kRotate,     ClassicKind::kScale,
                                                        ClassicKind::kNoise,      ClassicKind::kBrightness,
                                                        ClassicKind::kContrast,   ClassicKind::kResolution,
                                                        ClassicKind::kGamma,      ClassicKind::kMirror};
  SampleRecord out = record;
  for (ClassicKind k : kOrder) {
    if (rng.bernoulli(0.5)) out = one(k, out);
  }
  return out;
}

}  // namespace segdiff
