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

// Text and edge conditioning inputs for the denoiser.

#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "segdiff/common.hpp"

namespace segdiff {

enum class TokenRole { kModality = 0, kOrgan = 1, kCategory = 2, kAugmentation = 3 };

std::string_view role_name(TokenRole role);

/// Closed vocabulary grouped by role. Token ids are assigned in role order
/// (modality, organ, category, augmentation), then file order within a role.
///
/// File format: plain text, one token per line, with `[modality]`, `[organ]`,
/// `[category]` and `[augmentation]` section headers. Blank lines and lines
/// starting with `#` are ignored.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> modalities, std::vector<std::string> organs, std::vector<std::string> categories,
             std::vector<std::string> augmentations);

  static Vocabulary default_vocabulary();
  static Vocabulary parse(std::string_view text);
  static Vocabulary load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  const std::vector<std::string>& tokens(TokenRole role) const { return roles_[static_cast<int>(role)]; }
  bool contains(TokenRole role, std::string_view token) const;
  /// Global token id; throws VocabularyError naming the token when absent.
  int id(TokenRole role, std::string_view token) const;
  int size() const;
  std::uint64_t hash() const { return fnv1a64(serialize()); }

  bool operator==(const Vocabulary&) const = default;

 private:
  std::array<std::vector<std::string>, 4> roles_;
};

struct PromptTriplet {
  std::string modality;
  std::string organ;
  std::string category;
  std::vector<std::string> aug_texts;

  std::string to_string() const;
  bool operator==(const PromptTriplet&) const = default;
};

/// Token ids in conditioning order: modality, organ, category, then each aug text.
std::vector<int> token_ids(const PromptTriplet& triplet, const Vocabulary& vocab);

/// Row-major [vocab.size(), dim] table of token vectors.
struct EmbeddingTable {
  Vocabulary vocab;
  int dim = 0;
  std::vector<float> values;
};

EmbeddingTable make_embedding_table(const Vocabulary& vocab, int dim, Rng& rng);
/// Throws ValidationError if any two token vectors coincide.
void check_distinct_rows(const EmbeddingTable& table);

/// One vector per token, in token_ids order.
struct TextEmbedding {
  int dim = 0;
  std::vector<std::vector<float>> vectors;
  bool operator==(const TextEmbedding&) const = default;
};

TextEmbedding encode_prompt(const PromptTriplet& triplet, const EmbeddingTable& table);

/// Soft edge strengths in [0,1], same shape as the source image.
using EdgeMap = Image;

struct EdgeExtractorConfig {
  /// Number of 3x3 binomial blur passes per scale. Scale responses are combined by max.
  std::vector<int> blur_passes = {0, 1};
};

/// Pluggable edge extractor; the default is a multi-scale gradient-magnitude detector.
class EdgeExtractor {
 public:
  virtual ~EdgeExtractor() = default;
  virtual EdgeMap extract(const Image& image) const = 0;
};

class GradientEdgeExtractor final : public EdgeExtractor {
 public:
  explicit GradientEdgeExtractor(EdgeExtractorConfig config = {}) : config_(std::move(config)) {}
  EdgeMap extract(const Image& image) const override;

 private:
  EdgeExtractorConfig config_;
};

EdgeMap extract_edges(const Image& image, const EdgeExtractorConfig& config = {});

/// 1 on labelled (nonzero) pixels whose label differs from any existing 4-neighbour, else 0.
template <class Label>
EdgeMap edges_from_mask(const Grid<Label>& mask) {
  static_assert(std::is_integral_v<Label>);
  if (mask.rows == 0 || mask.cols == 0) throw ArgumentError("edges_from_mask: empty mask");
  EdgeMap out(mask.rows, mask.cols, 0.0f);
  const auto R = static_cast<long>(mask.rows), C = static_cast<long>(mask.cols);
  for (long r = 0; r < R; ++r) {
    for (long c = 0; c < C; ++c) {
      const Label v = mask(r, c);
      if constexpr (std::is_signed_v<Label>) {
        if (v < 0) throw ArgumentError("edges_from_mask: negative label");
      }
      if (v == 0) continue;
      const bool boundary = (r > 0 && mask(r - 1, c) != v) || (r + 1 < R && mask(r + 1, c) != v) ||
                            (c > 0 && mask(r, c - 1) != v) || (c + 1 < C && mask(r, c + 1) != v);
      if (boundary) out(r, c) = 1.0f;
    }
  }
  return out;
}

}  // namespace segdiff
