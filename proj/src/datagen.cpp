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

#include "segdiff/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "segdiff/image_io.hpp"

namespace segdiff {

// ---------------------------------------------------------------- manifest

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  std::map<std::string, Split> volume_split;
  for (const auto& r : records) {
    if (!ids.insert(r.case_id).second) throw ValidationError("duplicate case id " + r.case_id);
    r.validate();
    if (r.source_volume_id) {
      const auto [it, fresh] = volume_split.emplace(*r.source_volume_id, r.split);
      if (!fresh && it->second != r.split) {
        throw ValidationError("volume " + *r.source_volume_id + " appears in more than one split");
      }
    }
  }
}

std::vector<SampleRecord> DatasetManifest::split(Split s) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

namespace {
nlohmann::json triplet_json(const PromptTriplet& t) {
  return {{"modality", t.modality}, {"organ", t.organ}, {"category", t.category}, {"aug_texts", t.aug_texts}};
}

PromptTriplet triplet_from_json(const nlohmann::json& j) {
  return {j.at("modality").get<std::string>(), j.at("organ").get<std::string>(), j.at("category").get<std::string>(),
          j.at("aug_texts").get<std::vector<std::string>>()};
}
}  // namespace

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& r : records) {
    cases.push_back({{"case_id", r.case_id},
                     {"image", "images/" + r.case_id + ".png"},
                     {"mask", r.mask ? nlohmann::json("masks/" + r.case_id + ".png") : nlohmann::json(nullptr)},
                     {"triplet", triplet_json(r.triplet)},
                     {"split", split_name(r.split)},
                     {"source_volume_id", r.source_volume_id ? nlohmann::json(*r.source_volume_id) : nlohmann::json(nullptr)},
                     {"spacing", r.spacing},
                     {"shape", {r.image.rows, r.image.cols}}});
  }
  return {{"name", name}, {"seed", seed}, {"warnings", warnings}, {"cases", cases}};
}

EdgeMap record_edge(const SampleRecord& record) {
  return record.mask ? edges_from_mask(*record.mask) : extract_edges(record.image);
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir) {
  manifest.validate();
  for (const auto& r : manifest.records) {
    save_image(dir / "images" / (r.case_id + ".png"), r.image);
    if (r.mask) save_mask(dir / "masks" / (r.case_id + ".png"), *r.mask);
  }
  write_text(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.name = j.value("name", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.warnings = j.value("warnings", std::vector<std::string>{});
  for (const auto& c : j.at("cases")) {
    SampleRecord r;
    r.case_id = c.at("case_id").get<std::string>();
    r.image = load_image(dir / c.at("image").get<std::string>());
    if (!c.at("mask").is_null()) r.mask = load_mask(dir / c.at("mask").get<std::string>());
    r.triplet = triplet_from_json(c.at("triplet"));
    r.split = parse_split(c.at("split").get<std::string>());
    if (!c.at("source_volume_id").is_null()) r.source_volume_id = c.at("source_volume_id").get<std::string>();
    r.spacing = c.at("spacing").get<std::array<double, 2>>();
    r.edge = record_edge(r);
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------- rendering helpers

namespace {
using Sdf = std::function<double(double, double)>;  // (row, col) in pixels; negative inside

Image render_coverage(int size, const Sdf& sdf) {
  Image cov(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) cov(r, c) = static_cast<float>(std::clamp(0.5 - sdf(r + 0.5, c + 0.5), 0.0, 1.0));
  return cov;
}

Sdf ellipse_sdf(double cy, double cx, double a, double b, double theta) {
  return [=](double y, double x) {
    const double dy = y - cy, dx = x - cx;
    const double u = std::cos(theta) * dx + std::sin(theta) * dy;
    const double v = -std::sin(theta) * dx + std::cos(theta) * dy;
    return (std::sqrt((u / a) * (u / a) + (v / b) * (v / b)) - 1.0) * std::min(a, b);
  };
}

Sdf blob_sdf(double cy, double cx, double radius, Rng& rng) {
  std::array<double, 3> amp{}, phase{};
  for (int k = 0; k < 3; ++k) {
    amp[k] = rng.uniform(0.0, 0.15);
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return [=](double y, double x) {
    const double dy = y - cy, dx = x - cx;
    const double phi = std::atan2(dy, dx);
    double rad = radius;
    for (int k = 0; k < 3; ++k) rad *= 1.0 + amp[k] * std::cos((k + 2) * phi + phase[k]);
    return std::hypot(dy, dx) - rad;
  };
}

Sdf ring_sdf(double cy, double cx, double radius, double width) {
  return [=](double y, double x) { return std::abs(std::hypot(y - cy, x - cx) - radius) - width / 2.0; };
}

Sdf polygon_sdf(double cy, double cx, double radius, int sides, double rotation) {
  const double apothem = radius * std::cos(std::numbers::pi / sides);
  return [=](double y, double x) {
    double d = -1e9;
    for (int k = 0; k < sides; ++k) {
      const double a = rotation + 2.0 * std::numbers::pi * (k + 0.5) / sides;
      d = std::max(d, std::cos(a) * (x - cx) + std::sin(a) * (y - cy) - apothem);
    }
    return d;
  };
}

Image blur_once(const Image& in) {
  const long R = static_cast<long>(in.rows), C = static_cast<long>(in.cols);
  auto at = [&](const Image& g, long r, long c) {
    return g(std::clamp(r, 0L, R - 1), std::clamp(c, 0L, C - 1));
  };
  Image tmp(in.rows, in.cols), out(in.rows, in.cols);
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) tmp(r, c) = 0.25f * at(in, r, c - 1) + 0.5f * at(in, r, c) + 0.25f * at(in, r, c + 1);
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) out(r, c) = 0.25f * at(tmp, r - 1, c) + 0.5f * at(tmp, r, c) + 0.25f * at(tmp, r + 1, c);
  return out;
}

// Smooth low-frequency texture in roughly [-1, 1].
Image smooth_texture(int size, Rng& rng) {
  Image t(size, size, 0.0f);
  for (int k = 0; k < 3; ++k) {
    const double fy = rng.uniform(0.5, 2.5), fx = rng.uniform(0.5, 2.5), ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        t(r, c) += static_cast<float>(std::sin(2.0 * std::numbers::pi * (fy * r + fx * c) / size + ph) / 3.0);
  }
  return t;
}

void finalize(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  img = dequantize(quantize(img));
}

// ---------------------------------------------------------------- corpus

struct ModalityProfile {
  double background, organ, noise, texture, inclusion_delta, rim_delta;
  bool speckle;
};

ModalityProfile profile_for(int modality_index, Rng& rng) {
  switch (modality_index % 3) {
    case 0:  // CT-like: dark background, bright organ, low noise
      return {0.12 + rng.uniform(-0.02, 0.02), 0.57 + rng.uniform(-0.05, 0.05), 0.02, 0.0, 0.25, 0.2, false};
    case 1:  // MR-like: mid-gray textured background, bright organ
      return {0.40 + rng.uniform(-0.03, 0.03), 0.72 + rng.uniform(-0.05, 0.05), 0.03, 0.06, -0.3, 0.15, false};
    default:  // US-like: speckled background, dark organ
      return {0.35 + rng.uniform(-0.03, 0.03), 0.15 + rng.uniform(-0.03, 0.03), 0.0, 0.0, 0.35, 0.3, true};
  }
}

Image render_corpus_item(int size, int modality, int organ, int category, int aug, Rng& rng) {
  const ModalityProfile p = profile_for(modality, rng);
  const double S = size;
  const double radius = S * rng.uniform(0.15, 0.3);
  const double cy = S / 2 + rng.uniform(-0.15, 0.15) * S, cx = S / 2 + rng.uniform(-0.15, 0.15) * S;
  Sdf shape;
  switch (organ % 4) {
    case 0: shape = ellipse_sdf(cy, cx, radius, radius * rng.uniform(0.55, 0.9), rng.uniform(0.0, std::numbers::pi)); break;
    case 1: shape = blob_sdf(cy, cx, radius, rng); break;
    case 2: shape = ring_sdf(cy, cx, radius, std::max(2.0, radius * rng.uniform(0.3, 0.5))); break;
    default: shape = polygon_sdf(cy, cx, radius, 3 + static_cast<int>(rng.index(4)), rng.uniform(0.0, std::numbers::pi)); break;
  }
  const Image organ_cov = render_coverage(size, shape);

  Image img(size, size);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.data[i] = static_cast<float>(p.background + (p.organ - p.background) * organ_cov.data[i]);
  }

  switch (category % 3) {
    case 1: {  // focal inclusion near the organ center
      const double ir = std::max(1.5, S * rng.uniform(0.05, 0.08));
      const Image inc = render_coverage(size, ellipse_sdf(cy + rng.uniform(-0.2, 0.2) * radius,
                                                          cx + rng.uniform(-0.2, 0.2) * radius, ir, ir, 0.0));
      for (std::size_t i = 0; i < img.size(); ++i) img.data[i] += static_cast<float>(p.inclusion_delta * inc.data[i]);
      break;
    }
    case 2: {  // band just inside the organ boundary
      const double w = rng.uniform(1.5, 2.5);
      const Image band = render_coverage(size, [&](double y, double x) {
        const double d = shape(y, x);
        return std::max(d, -d - w);
      });
      for (std::size_t i = 0; i < img.size(); ++i) img.data[i] += static_cast<float>(p.rim_delta * band.data[i]);
      break;
    }
    default: break;
  }

  if (p.texture > 0.0) {
    const Image tex = smooth_texture(size, rng);
    const double gy = rng.uniform(-0.15, 0.15), gx = rng.uniform(-0.15, 0.15);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const double bias = 1.0 + gy * (r / S - 0.5) + gx * (c / S - 0.5);
        img(r, c) = static_cast<float>((img(r, c) + p.texture * tex(r, c)) * bias);
      }
  }
  if (p.speckle) {
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) img(r, c) = static_cast<float>(img(r, c) * (1.0 - 0.3 * r / S));
  }

  const bool high_res = aug == 1, low_noise = aug == 2;
  if (!high_res) img = blur_once(img);
  const double noise_scale = low_noise ? 0.25 : 1.0;
  for (auto& v : img.data) {
    const double n = rng.normal();
    if (p.speckle) {
      v = static_cast<float>(v * (1.0 + 0.4 * noise_scale * std::clamp(n, -2.5, 2.5)));
    } else {
      v = static_cast<float>(v + p.noise * noise_scale * n);
    }
  }
  if (aug == 0) {  // enhanced contrast
    double mean = 0.0;
    for (float v : img.data) mean += v;
    mean /= static_cast<double>(img.size());
    for (auto& v : img.data) v = static_cast<float>(mean + 1.5 * (v - mean));
  } else if (aug == 3) {  // sharp detail
    const Image b = blur_once(img);
    for (std::size_t i = 0; i < img.size(); ++i) img.data[i] += img.data[i] - b.data[i];
  }
  finalize(img);
  return img;
}

void assign_splits(std::vector<SampleRecord>& records, double train_fraction, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order.begin(), order.end());
  const auto n = static_cast<double>(records.size());
  const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * train_fraction)));
  const auto n_val = static_cast<std::size_t>(std::llround(n * val_fraction));
  for (std::size_t k = 0; k < order.size(); ++k) {
    records[order[k]].split = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
  }
}
}  // namespace

DatasetManifest synth_corpus(const CorpusSpec& spec, const Vocabulary& vocab) {
  if (spec.count < 1 || spec.size < 8) throw ArgumentError("synth_corpus: count >= 1 and size >= 8 required");
  if (spec.train_fraction <= 0.0 || spec.val_fraction < 0.0 || spec.train_fraction + spec.val_fraction > 1.0) {
    throw ArgumentError("synth_corpus: invalid split fractions");
  }
  if (spec.aug_fraction < 0.0 || spec.aug_fraction > 1.0) throw ArgumentError("synth_corpus: aug_fraction outside [0,1]");
  const auto& mods = vocab.tokens(TokenRole::kModality);
  const auto& organs = vocab.tokens(TokenRole::kOrgan);
  const auto& cats = vocab.tokens(TokenRole::kCategory);
  const auto& augs = vocab.tokens(TokenRole::kAugmentation);
  if (mods.empty() || organs.empty() || cats.empty()) throw ArgumentError("synth_corpus: vocabulary role is empty");

  DatasetManifest m;
  m.name = "synthetic-corpus";
  m.seed = spec.seed;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    const int mi = static_cast<int>(rng.index(mods.size()));
    const int oi = static_cast<int>(rng.index(organs.size()));
    const int ci = static_cast<int>(rng.index(cats.size()));
    int ai = -1;
    if (!augs.empty() && rng.bernoulli(spec.aug_fraction)) ai = static_cast<int>(rng.index(augs.size()));
    SampleRecord r;
    r.case_id = fmt::format("corpus_{:05d}", i);
    r.image = render_corpus_item(spec.size, mi, oi, ci, ai < 0 ? -1 : ai % 4, rng);
    r.triplet = {mods[mi], organs[oi], cats[ci], {}};
    if (ai >= 0) r.triplet.aug_texts.push_back(augs[ai]);
    r.edge = extract_edges(r.image);
    m.records.push_back(std::move(r));
  }
  assign_splits(m.records, spec.train_fraction, spec.val_fraction, spec.seed);
  m.validate();
  return m;
}

DatasetManifest synth_seg_task(const SegTaskSpec& spec, const Vocabulary& vocab) {
  if (spec.count < 1 || spec.size < 8) throw ArgumentError("synth_seg_task: count >= 1 and size >= 8 required");
  if (!(spec.min_foreground > 0.0 && spec.min_foreground < spec.max_foreground && spec.max_foreground < 1.0)) {
    throw ArgumentError("synth_seg_task: invalid foreground range");
  }
  const PromptTriplet triplet{spec.modality, spec.organ, spec.category, {}};
  (void)token_ids(triplet, vocab);  // rejects tokens outside the vocabulary

  const int S = spec.size;
  DatasetManifest m;
  m.name = "synthetic-segmentation";
  m.seed = spec.seed;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(derive_seed(derive_seed(spec.seed, "seg-task"), static_cast<std::uint64_t>(i)));
    Sdf shape;
    Mask mask;
    Image cov;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 200) throw ArgumentError("synth_seg_task: cannot satisfy the foreground range");
      const double frac = rng.uniform(spec.min_foreground, spec.max_foreground);
      const double radius = std::sqrt(frac * S * S / std::numbers::pi);
      const double margin = radius + 1.0;
      if (2.0 * margin >= S) continue;
      const double cy = rng.uniform(margin, S - margin), cx = rng.uniform(margin, S - margin);
      shape = blob_sdf(cy, cx, radius, rng);
      cov = render_coverage(S, shape);
      mask = Mask(S, S);
      std::size_t fg = 0;
      for (std::size_t k = 0; k < cov.size(); ++k) {
        mask.data[k] = cov.data[k] >= 0.5f ? 1 : 0;
        fg += mask.data[k];
      }
      const double f = static_cast<double>(fg) / (S * S);
      if (f >= spec.min_foreground && f <= spec.max_foreground) break;
    }

    const double bg = rng.uniform(0.3, 0.5);
    const double contrast = rng.uniform(spec.min_contrast, spec.max_contrast);
    const double noise = rng.uniform(0.02, std::max(0.02, spec.max_noise));
    Image img(S, S);
    for (std::size_t k = 0; k < img.size(); ++k) img.data[k] = static_cast<float>(bg + contrast * cov.data[k]);

    const int distractors = static_cast<int>(rng.index(static_cast<std::size_t>(spec.max_distractors) + 1));
    for (int d = 0; d < distractors; ++d) {
      const double rr = rng.uniform(1.5, 3.0);
      double y = 0, x = 0;
      bool placed = false;
      for (int t = 0; t < 50 && !placed; ++t) {
        y = rng.uniform(rr, S - rr);
        x = rng.uniform(rr, S - rr);
        placed = shape(y, x) > rr + 2.0;
      }
      if (!placed) continue;
      const Image dc = render_coverage(S, ellipse_sdf(y, x, rr, rr * rng.uniform(0.5, 1.0), rng.uniform(0.0, 3.14)));
      const double level = contrast * rng.uniform(0.6, 1.0);
      for (std::size_t k = 0; k < img.size(); ++k) img.data[k] += static_cast<float>(level * dc.data[k]);
    }

    const Image tex = smooth_texture(S, rng);
    const double gy = rng.uniform(-0.2, 0.2), gx = rng.uniform(-0.2, 0.2);
    for (int r = 0; r < S; ++r)
      for (int c = 0; c < S; ++c) {
        const double bias = 1.0 + gy * (static_cast<double>(r) / S - 0.5) + gx * (static_cast<double>(c) / S - 0.5);
        img(r, c) = static_cast<float>((img(r, c) + 0.04 * tex(r, c)) * bias);
      }
    img = blur_once(img);
    for (auto& v : img.data) v = static_cast<float>(v + noise * rng.normal());
    finalize(img);

    SampleRecord r;
    r.case_id = fmt::format("seg_{:03d}", i);
    r.image = std::move(img);
    r.mask = std::move(mask);
    r.triplet = triplet;
    r.edge = edges_from_mask(*r.mask);
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------- ingestion

namespace {
std::map<std::string, std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".pgm") out[e.path().stem().string()] = e.path();
  }
  return out;
}

std::map<std::string, Spacing> read_spacing(const std::filesystem::path& path) {
  std::map<std::string, Spacing> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw IngestionError("spacing file line without ':' : " + line);
    std::string key = line.substr(0, colon);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    std::istringstream vals(line.substr(colon + 1));
    Spacing s{};
    if (!(vals >> s[0] >> s[1]) || s[0] <= 0.0 || s[1] <= 0.0) {
      throw IngestionError("spacing file entry for " + key + " needs two positive numbers");
    }
    out[key] = s;
  }
  return out;
}

std::string join_limited(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size() && i < 20; ++i) s += (i ? ", " : "") + items[i];
  if (items.size() > 20) s += fmt::format(" (+{} more)", items.size() - 20);
  return s;
}
}  // namespace

DatasetManifest ingest_external(const std::filesystem::path& root, const IngestLayout& layout) {
  DatasetManifest m;
  m.name = root.filename().string();
  const auto images = list_images(root / layout.images_dir);
  const auto masks = list_images(root / layout.masks_dir);
  if (images.empty() && masks.empty()) {
    m.warnings.push_back("no image/mask pairs found under " + root.string());
    spdlog::warn("{}", m.warnings.back());
    return m;
  }

  std::vector<std::string> problems;
  for (const auto& [stem, path] : images) {
    if (!masks.count(stem)) problems.push_back("orphan image " + path.filename().string());
  }
  for (const auto& [stem, path] : masks) {
    if (!images.count(stem)) problems.push_back("orphan mask " + path.filename().string());
  }
  const auto spacing = read_spacing(root / layout.spacing_file);

  std::size_t skipped = 0;
  for (const auto& [stem, ipath] : images) {
    const auto mit = masks.find(stem);
    if (mit == masks.end()) continue;
    SampleRecord r;
    r.case_id = stem;
    Gray8 raw_mask;
    try {
      r.image = load_image(ipath);
      raw_mask = read_gray8(mit->second);
    } catch (const Error& e) {
      problems.push_back("undecodable " + stem + " (" + e.what() + ")");
      continue;
    }
    if (!raw_mask.same_shape(r.image)) {
      problems.push_back("shape mismatch " + stem);
      continue;
    }
    Mask mask(raw_mask.rows, raw_mask.cols);
    bool binary = true;
    for (std::size_t k = 0; k < raw_mask.size(); ++k) {
      const int v = raw_mask.data[k];
      if (layout.binarize_threshold) {
        mask.data[k] = v >= *layout.binarize_threshold ? 1 : 0;
      } else if (v == 0 || v == 1 || v == 255) {
        mask.data[k] = v ? 1 : 0;
      } else {
        binary = false;
      }
    }
    if (!binary) {
      problems.push_back("non-binary mask " + mit->second.filename().string());
      continue;
    }
    if (layout.foreground_slices_only && std::all_of(mask.data.begin(), mask.data.end(), [](auto v) { return v == 0; })) {
      ++skipped;
      continue;
    }
    r.mask = std::move(mask);
    if (!layout.slice_separator.empty()) {
      const auto pos = stem.rfind(layout.slice_separator);
      if (pos != std::string::npos && pos > 0) r.source_volume_id = stem.substr(0, pos);
    }
    const std::string key = r.source_volume_id ? *r.source_volume_id : stem;
    if (auto it = spacing.find(key); it != spacing.end()) {
      r.spacing = it->second;
    } else if (auto d = spacing.find("default"); d != spacing.end()) {
      r.spacing = d->second;
    }
    r.triplet = layout.triplet;
    r.edge = edges_from_mask(*r.mask);
    m.records.push_back(std::move(r));
  }
  if (!problems.empty()) {
    throw IngestionError(fmt::format("{} problem(s) ingesting {}: {}", problems.size(), root.string(), join_limited(problems)));
  }
  if (skipped > 0) m.warnings.push_back(fmt::format("skipped {} slice(s) without foreground", skipped));
  m.validate();
  return m;
}

}  // namespace segdiff
