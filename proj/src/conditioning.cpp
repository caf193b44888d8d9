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

#include "segdiff/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace segdiff {

namespace {
constexpr std::array<std::string_view, 4> kRoleNames = {"modality", "organ", "category", "augmentation"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}
}  // namespace

std::string_view role_name(TokenRole role) { return kRoleNames[static_cast<int>(role)]; }

Vocabulary::Vocabulary(std::vector<std::string> modalities, std::vector<std::string> organs,
                       std::vector<std::string> categories, std::vector<std::string> augmentations)
    : roles_{std::move(modalities), std::move(organs), std::move(categories), std::move(augmentations)} {
  std::vector<std::string> all;
  for (const auto& r : roles_) all.insert(all.end(), r.begin(), r.end());
  for (const auto& t : all) {
    if (t.empty()) throw VocabularyError("empty token in vocabulary");
  }
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
    throw VocabularyError("duplicate token in vocabulary");
  }
}

Vocabulary Vocabulary::default_vocabulary() {
  return Vocabulary({"CT", "MR", "US"}, {"Ellipse", "Blob", "Ring", "Polygon"},
                    {"Normal", "Inclusion", "Rim Thickening"},
                    {"enhanced contrast", "high resolution", "low noise", "sharp detail"});
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::array<std::vector<std::string>, 4> roles;
  int current = -1;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      const std::string name = trim(std::string_view(t).substr(1, t.size() - 2));
      const auto it = std::find(kRoleNames.begin(), kRoleNames.end(), name);
      if (it == kRoleNames.end()) throw VocabularyError("unknown vocabulary section [" + name + "]");
      current = static_cast<int>(it - kRoleNames.begin());
      continue;
    }
    if (current < 0) throw VocabularyError("token before any section header at line " + std::to_string(lineno));
    roles[current].push_back(t);
  }
  return Vocabulary(roles[0], roles[1], roles[2], roles[3]);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (int r = 0; r < 4; ++r) {
    out += "[" + std::string(kRoleNames[r]) + "]\n";
    for (const auto& t : roles_[r]) out += t + "\n";
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  out << serialize();
}

bool Vocabulary::contains(TokenRole role, std::string_view token) const {
  const auto& r = tokens(role);
  return std::find(r.begin(), r.end(), token) != r.end();
}

int Vocabulary::id(TokenRole role, std::string_view token) const {
  int offset = 0;
  for (int r = 0; r < static_cast<int>(role); ++r) offset += static_cast<int>(roles_[r].size());
  const auto& list = tokens(role);
  const auto it = std::find(list.begin(), list.end(), token);
  if (it == list.end()) {
    throw VocabularyError("unknown " + std::string(role_name(role)) + " token \"" + std::string(token) + "\"");
  }
  return offset + static_cast<int>(it - list.begin());
}

int Vocabulary::size() const {
  int n = 0;
  for (const auto& r : roles_) n += static_cast<int>(r.size());
  return n;
}

std::string PromptTriplet::to_string() const {
  std::string s = modality + ", " + organ + ", " + category;
  for (const auto& a : aug_texts) s += ", " + a;
  return s;
}

std::vector<int> token_ids(const PromptTriplet& triplet, const Vocabulary& vocab) {
  std::vector<int> ids{vocab.id(TokenRole::kModality, triplet.modality), vocab.id(TokenRole::kOrgan, triplet.organ),
                       vocab.id(TokenRole::kCategory, triplet.category)};
  for (const auto& a : triplet.aug_texts) ids.push_back(vocab.id(TokenRole::kAugmentation, a));
  return ids;
}

EmbeddingTable make_embedding_table(const Vocabulary& vocab, int dim, Rng& rng) {
  if (dim <= 0) throw ConfigError("embedding dimension must be positive");
  EmbeddingTable t{vocab, dim, std::vector<float>(static_cast<std::size_t>(vocab.size()) * dim)};
  for (auto& v : t.values) v = static_cast<float>(rng.normal());
  check_distinct_rows(t);
  return t;
}

void check_distinct_rows(const EmbeddingTable& table) {
  const int n = table.vocab.size();
  const auto d = static_cast<std::size_t>(table.dim);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (std::equal(table.values.begin() + i * d, table.values.begin() + (i + 1) * d, table.values.begin() + j * d)) {
        throw ValidationError("embedding rows " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
      }
    }
  }
}

TextEmbedding encode_prompt(const PromptTriplet& triplet, const EmbeddingTable& table) {
  TextEmbedding e{table.dim, {}};
  const auto d = static_cast<std::size_t>(table.dim);
  for (int id : token_ids(triplet, table.vocab)) {
    e.vectors.emplace_back(table.values.begin() + id * d, table.values.begin() + (id + 1) * d);
  }
  return e;
}

namespace {
Image binomial_blur(const Image& in) {
  // Separable [1 2 1]/4 with replicated borders.
  const long R = static_cast<long>(in.rows), C = static_cast<long>(in.cols);
  Image tmp(in.rows, in.cols), out(in.rows, in.cols);
  auto at = [](const Image& g, long r, long c) {
    r = std::clamp(r, 0L, static_cast<long>(g.rows) - 1);
    c = std::clamp(c, 0L, static_cast<long>(g.cols) - 1);
    return g(r, c);
  };
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) tmp(r, c) = 0.25f * at(in, r, c - 1) + 0.5f * at(in, r, c) + 0.25f * at(in, r, c + 1);
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) out(r, c) = 0.25f * at(tmp, r - 1, c) + 0.5f * at(tmp, r, c) + 0.25f * at(tmp, r + 1, c);
  return out;
}

Image gradient_magnitude(const Image& in) {
  const long R = static_cast<long>(in.rows), C = static_cast<long>(in.cols);
  Image out(in.rows, in.cols);
  for (long r = 0; r < R; ++r) {
    for (long c = 0; c < C; ++c) {
      const float gx = 0.5f * (in(r, std::min(c + 1, C - 1)) - in(r, std::max(c - 1, 0L)));
      const float gy = 0.5f * (in(std::min(r + 1, R - 1), c) - in(std::max(r - 1, 0L), c));
      out(r, c) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}
}  // namespace

EdgeMap GradientEdgeExtractor::extract(const Image& image) const {
  if (image.rows == 0 || image.cols == 0 || image.data.size() != image.rows * image.cols) {
    throw ArgumentError("extract_edges: expected a non-empty 2D single-channel image");
  }
  if (config_.blur_passes.empty()) throw ConfigError("extract_edges: at least one scale is required");
  EdgeMap combined(image.rows, image.cols, 0.0f);
  for (int passes : config_.blur_passes) {
    Image blurred = image;
    for (int p = 0; p < passes; ++p) blurred = binomial_blur(blurred);
    const Image mag = gradient_magnitude(blurred);
    for (std::size_t i = 0; i < mag.size(); ++i) combined.data[i] = std::max(combined.data[i], mag.data[i]);
  }
  const float peak = *std::max_element(combined.data.begin(), combined.data.end());
  if (peak > 1e-12f) {
    for (auto& v : combined.data) v = std::clamp(v / peak, 0.0f, 1.0f);
  } else {
    std::fill(combined.data.begin(), combined.data.end(), 0.0f);
  }
  return combined;
}

EdgeMap extract_edges(const Image& image, const EdgeExtractorConfig& config) {
  return GradientEdgeExtractor(config).extract(image);
}

}  // namespace segdiff
