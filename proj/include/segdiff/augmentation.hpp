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

// Generated-variant cache, random patch masks, patch mixing and classic transforms.

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segdiff/checkpoint.hpp"
#include "segdiff/dataset.hpp"

namespace segdiff {

// ---------------------------------------------------------------- patch masks

struct PatchMask {
  Mask grid;
  double alpha = 0.0;
  int patch_size = 1;
  std::array<int, 2> grid_dims{0, 0};  // ceil(H / ps), ceil(W / ps)
};

/// Cells with a uniform draw strictly below alpha become 1; the cell grid is upsampled by
/// nearest neighbor and cropped to the image shape.
PatchMask generate_random_patch(double alpha, int patch_size, std::size_t rows, std::size_t cols, Rng& rng);

/// m * x0 + (1 - m) * xi, elementwise.
Image mix(const Image& x0, const Image& xi, const Mask& m);
inline Image mix(const Image& x0, const Image& xi, const PatchMask& m) { return mix(x0, xi, m.grid); }

// ---------------------------------------------------------------- cache

struct CacheVariant {
  Image image;
  std::vector<std::string> aug_texts;
  std::uint64_t seed = 0;
};

struct CacheEntry {
  SampleRecord original;
  std::vector<CacheVariant> variants;
};

struct AugmentationCache {
  std::string checkpoint_fingerprint;
  int n = 0;
  std::vector<CacheEntry> entries;

  /// Throws ValidationError when absent.
  const CacheEntry& entry(const std::string& case_id) const;
  /// The first k variants of every entry.
  AugmentationCache prefix(int k) const;
  /// Every record has an entry with n variants of its shape whose original matches it.
  void check_covers(const std::vector<SampleRecord>& records) const;
};

struct CacheBuildOptions {
  int n = 10;
  std::vector<std::string> aug_texts = {"enhanced contrast", "high resolution", "low noise", "sharp detail"};
  std::uint64_t seed = 0;
  int batch_size = 16;
};

/// Per-variant seed; variant i of a case does not depend on n.
std::uint64_t variant_seed(std::uint64_t seed, const std::string& case_id, int index);

/// Samples n variants per record conditioned on edges_from_mask(mask) and the record's
/// triplet with aug token (index mod |aug_texts|). Requires a finetuned checkpoint.
AugmentationCache build_augmentation_cache(const std::vector<SampleRecord>& records, const Checkpoint& ckpt,
                                           const Vocabulary& vocab, const CacheBuildOptions& options);

/// One directory per case: original.png, mask.png, variant_NNN.png, manifest.json; plus cache.json.
void save_cache(const AugmentationCache& cache, const std::filesystem::path& dir);
AugmentationCache load_cache(const std::filesystem::path& dir);

// ---------------------------------------------------------------- classic transforms

enum class ClassicKind { kContrast, kGamma, kBrightness, kNoise, kResolution, kMirror, kRotate, kScale, kDeepStack };

std::string_view classic_kind_name(ClassicKind k);
/// Throws ConfigError for unknown names.
ClassicKind parse_classic_kind(std::string_view name);
const std::vector<ClassicKind>& all_classic_kinds();
bool is_spatial(ClassicKind k);

struct ClassicRanges {
  double rotate_degrees = 15.0;
  double scale_min = 0.85, scale_max = 1.15;
  double contrast = 0.2;
  double brightness = 0.2;
  double gamma_min = 0.7, gamma_max = 1.5;
  double noise_sigma_max = 0.05;
  double resolution_min = 0.5, resolution_max = 1.0;
};

struct ClassicTransformSpec {
  ClassicKind kind = ClassicKind::kContrast;
  ClassicRanges ranges;
  std::optional<int> mirror_axis;  // 0 flips rows, 1 flips columns; random when unset
};

/// Applies one transform with parameters drawn from the ranges. Deep-stack applies, in
/// order, rotate, scale, noise, brightness, contrast, resolution, gamma, mirror, each
/// with probability 0.5.
SampleRecord apply_classic(const SampleRecord& record, const ClassicTransformSpec& spec, Rng& rng);

namespace classic {
SampleRecord contrast(const SampleRecord& r, double factor);
SampleRecord brightness(const SampleRecord& r, double delta);
SampleRecord gamma(const SampleRecord& r, double exponent);
SampleRecord noise(const SampleRecord& r, double sigma, Rng& rng);
SampleRecord resolution(const SampleRecord& r, double factor);
SampleRecord mirror(const SampleRecord& r, int axis);
SampleRecord rotate(const SampleRecord& r, double degrees);
SampleRecord scale(const SampleRecord& r, double factor);
}  // namespace classic

}  // namespace segdiff
