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

// Segmentation backbones. Each maps [N,1,H,W] to per-pixel foreground logits [N,1,H,W].

#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdiff/nn/layers.hpp"

namespace segdiff {

enum class BackboneKind { kBasicUnet, kResidualUnet, kAttentionUnet, kResnetEncoderUnet, kWindowedTransformerUnet };

std::string_view backbone_name(BackboneKind k);
/// Throws ConfigError for unknown names.
BackboneKind parse_backbone(std::string_view name);
const std::vector<BackboneKind>& all_backbones();

struct SegBackboneSpec {
  BackboneKind kind = BackboneKind::kAttentionUnet;
  int width = 8;  // channels at the finest level; doubled per level
  int depth = 3;  // resolution levels
  int window = 4;  // windowed-transformer only
  int heads = 2;   // windowed-transformer only

  void validate() const;
  bool operator==(const SegBackboneSpec&) const = default;
};

nlohmann::json to_json(const SegBackboneSpec& s);
SegBackboneSpec backbone_spec_from_json(const nlohmann::json& j);

class SegModel {
 public:
  virtual ~SegModel() = default;
  virtual nn::Tensor<float> logits(const nn::Tensor<float>& x) const = 0;

  nn::ParameterStore<float>& parameters() noexcept { return store_; }
  const nn::ParameterStore<float>& parameters() const noexcept { return store_; }
  const SegBackboneSpec& spec() const noexcept { return spec_; }

  /// Training resolution (rows, cols) when known; inference rejects other shapes.
  std::optional<std::array<std::size_t, 2>> input_shape;

 protected:
  explicit SegModel(SegBackboneSpec spec) : spec_(spec) {}
  nn::ParameterStore<float> store_;
  SegBackboneSpec spec_;
};

std::unique_ptr<SegModel> make_backbone(const SegBackboneSpec& spec, Rng& rng);

}  // namespace segdiff
