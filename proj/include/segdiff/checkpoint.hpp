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

// Binary checkpoint container shared by denoiser and segmentation models.
//
// Layout (all integers little-endian):
//   8 bytes   magic "SEGDCKPT"
//   u32       format version
//   u64       header length L
//   L bytes   canonical JSON header: kind, stage, config, schedule, vocab hash,
//             seed, step, and a manifest of {name, shape, offset} per block
//   ...       float32 parameter blocks, in manifest order

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdiff/diffusion.hpp"
#include "segdiff/nn/layers.hpp"

namespace segdiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParameterBlock {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
  bool operator==(const ParameterBlock&) const = default;
};

struct Checkpoint {
  std::string kind;   // "denoiser" or "segmentation"
  std::string stage;  // "pretrained", "finetuned" or "trained"
  nlohmann::json config = nlohmann::json::object();
  std::optional<NoiseSchedule> schedule;
  std::uint64_t vocab_hash = 0;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::vector<ParameterBlock> params;

  /// Identity string for provenance: hash of the header and parameter bytes.
  std::string fingerprint() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on a corrupt file, schedule inconsistency, or vocabulary hash mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

template <class T>
std::vector<ParameterBlock> export_parameters(const nn::ParameterStore<T>& store) {
  std::vector<ParameterBlock> out;
  for (const auto& p : store.entries()) {
    ParameterBlock b{p.name, p.tensor.shape(), {}};
    b.values.reserve(p.tensor.numel());
    for (T v : p.tensor.data()) b.values.push_back(static_cast<float>(v));
    out.push_back(std::move(b));
  }
  return out;
}

template <class T>
void import_parameters(nn::ParameterStore<T>& store, const std::vector<ParameterBlock>& blocks) {
  if (blocks.size() != store.entries().size()) {
    throw CheckpointError("checkpoint has " + std::to_string(blocks.size()) + " parameter blocks, model expects " +
                          std::to_string(store.entries().size()));
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& p = store.entries()[i];
    if (blocks[i].name != p.name || blocks[i].shape != p.tensor.shape()) {
      throw CheckpointError("checkpoint block " + blocks[i].name + " does not match model parameter " + p.name);
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(blocks[i].values[k]);
  }
}

nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace segdiff
