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

// Conditional noise predictor eps(x_t, text, edge, t).
//
// Main branch: a time-conditioned encoder-decoder over x_t with one text
// cross-attention block at the bottleneck. Edge branch: a light encoder over
// the edge map whose per-level features enter the main encoder through 1x1
// projections that start at exactly zero. The head predicts `head_channels`
// maps and averages them into the single grayscale output.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdiff/checkpoint.hpp"
#include "segdiff/conditioning.hpp"
#include "segdiff/dataset.hpp"
#include "segdiff/diffusion.hpp"
#include "segdiff/nn/layers.hpp"

namespace segdiff {

struct DenoiserConfig {
  int base_channels = 16;
  int depth = 3;  // resolution levels; width at level i is base_channels * 2^i
  int time_embed_dim = 64;
  int text_embed_dim = 64;
  std::vector<int> edge_branch_channels = {8, 16, 32};
  bool attention_at_bottleneck = true;
  int head_channels = 3;

  int level_channels(int level) const { return base_channels << level; }
  /// Throws ConfigError when invariants fail.
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

/// Closed-form parameter count of DualBranchDenoiser for a config and vocabulary size.
std::size_t denoiser_parameter_count(const DenoiserConfig& config, int vocab_size);

template <class T>
class DualBranchDenoiser {
 public:
  DualBranchDenoiser(DenoiserConfig config, Vocabulary vocab, Rng& rng);

  /// xt, edge: [N,1,H,W]; steps: N values in [1,T]; tokens: per-sample token ids.
  /// Gradients flow into the embedding table.
  nn::Tensor<T> forward(const nn::Tensor<T>& xt, const std::vector<int>& steps,
                        const std::vector<std::vector<int>>& tokens, const nn::Tensor<T>& edge) const;

  /// Same, with precomputed text embeddings treated as constants.
  nn::Tensor<T> forward(const nn::Tensor<T>& xt, const std::vector<int>& steps,
                        const std::vector<TextEmbedding>& text, const nn::Tensor<T>& edge) const;

  /// Single-image prediction without graph recording.
  Grid<T> predict(const Grid<T>& xt, int step, const TextEmbedding& text, const EdgeMap& edge) const;

  nn::ParameterStore<T>& parameters() noexcept { return store_; }
  const nn::ParameterStore<T>& parameters() const noexcept { return store_; }
  /// All parameters, or only the edge branch and fusion projections when `edge_only`.
  std::vector<nn::Tensor<T>> trainable(bool edge_only) const;
  std::vector<nn::Tensor<T>> fusion_parameters() const;

  EmbeddingTable embedding_table() const;
  const DenoiserConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }

 private:
  struct ResBlock {
    nn::GroupNorm<T> norm1;
    nn::Conv2d<T> conv1;
    nn::Linear<T> time_proj;
    nn::GroupNorm<T> norm2;
    nn::Conv2d<T> conv2;
    std::optional<nn::Conv2d<T>> skip;
    nn::Tensor<T> operator()(const nn::Tensor<T>& x, const nn::Tensor<T>& temb) const;
  };
  struct CrossAttention {
    nn::GroupNorm<T> norm;
    nn::Linear<T> q, k, v, out;
  };

  ResBlock make_block(const std::string& name, int in, int out, Rng& rng);
  nn::Tensor<T> time_embedding(const std::vector<int>& steps) const;
  nn::Tensor<T> run(const nn::Tensor<T>& xt, const std::vector<int>& steps, const nn::Tensor<T>& text,
                    const std::vector<int>& text_lengths, const nn::Tensor<T>& edge) const;

  DenoiserConfig config_;
  Vocabulary vocab_;
  nn::ParameterStore<T> store_;

  nn::Tensor<T> text_table_;
  nn::Linear<T> time_fc1_, time_fc2_;
  nn::Conv2d<T> conv_in_;
  std::vector<ResBlock> down_;
  ResBlock mid1_, mid2_;
  std::optional<CrossAttention> attn_;
  std::vector<ResBlock> up_;
  nn::GroupNorm<T> head_norm_;
  nn::Conv2d<T> head_conv_;
  nn::Conv2d<T> edge_in_;
  std::vector<nn::Conv2d<T>> edge_convs_;
  std::vector<nn::Conv2d<T>> fuse_;
};

extern template class DualBranchDenoiser<float>;
extern template class DualBranchDenoiser<double>;

/// Builds a batch input tensor [N,1,H,W] from grids.
template <class T, class U>
nn::Tensor<T> stack_grids(const std::vector<Grid<U>>& grids) {
  if (grids.empty()) throw ArgumentError("stack_grids: empty batch");
  const int h = static_cast<int>(grids[0].rows), w = static_cast<int>(grids[0].cols);
  std::vector<T> v;
  v.reserve(grids.size() * grids[0].size());
  for (const auto& g : grids) {
    require_same_shape(g, grids[0], "stack_grids");
    for (auto x : g.data) v.push_back(static_cast<T>(x));
  }
  return nn::Tensor<T>({static_cast<int>(grids.size()), 1, h, w}, std::move(v));
}

template <class T>
std::vector<Grid<T>> unstack_grids(const nn::Tensor<T>& t) {
  const int n = t.dim(0), h = t.dim(2), w = t.dim(3);
  std::vector<Grid<T>> out;
  for (int i = 0; i < n; ++i) {
    out.emplace_back(h, w, std::vector<T>(t.data().begin() + static_cast<std::ptrdiff_t>(i) * h * w,
                                          t.data().begin() + static_cast<std::ptrdiff_t>(i + 1) * h * w));
  }
  return out;
}

// ---------------------------------------------------------------- training

enum class TrainingStage { kPretrain, kFinetune };
std::string_view stage_tag(TrainingStage s);  // "pretrained" / "finetuned"

struct DiffusionTrainConfig {
  TrainingStage stage = TrainingStage::kPretrain;
  double learning_rate = 1e-5;
  double weight_decay = 1e-2;
  int batch_size = 16;
  int epochs = 100;
  long long max_iterations = 0;  // 0 = no cap
  double grad_clip = 1.0;        // global norm; 0 disables
  bool freeze_main = false;      // train only the edge branch and fusion projections
  bool keep_aug_tokens = false;  // finetune: keep aug texts from records in the prompt
  EdgeExtractorConfig edges;
  std::uint64_t seed = 0;

  /// Defaults for each stage; finetuning uses a 1e-6 learning rate over 100 epochs.
  static DiffusionTrainConfig pretrain_defaults();
  static DiffusionTrainConfig finetune_defaults();
};

struct DiffusionTrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_history;  // one entry per optimizer step
};

using ProgressFn = std::function<void(long long step, double loss)>;

/// Minimizes the simple loss. Pretraining conditions on extract_edges(image); finetuning on
/// edges_from_mask(mask) and requires `init` to be a pretrained denoiser checkpoint.
DiffusionTrainResult train_diffusion(const std::vector<SampleRecord>& dataset, const DenoiserConfig& model_config,
                                     const Vocabulary& vocab, const NoiseSchedule& schedule,
                                     const DiffusionTrainConfig& train_config, const Checkpoint* init = nullptr,
                                     const ProgressFn& progress = {});

Checkpoint make_denoiser_checkpoint(const DualBranchDenoiser<float>& model, const NoiseSchedule& schedule,
                                    std::string_view stage, std::uint64_t seed, std::int64_t step);
/// Rebuilds the model; the vocabulary must hash to the checkpoint's stored hash.
DualBranchDenoiser<float> denoiser_from_checkpoint(const Checkpoint& ckpt, const Vocabulary& vocab);

/// Batched ancestral sampling with the model; one independent random source per request.
struct GenerationRequest {
  PromptTriplet prompt;
  EdgeMap edge;
  std::uint64_t seed = 0;
};
std::vector<Image> generate_images(const DualBranchDenoiser<float>& model, const NoiseSchedule& schedule,
                                   const std::vector<GenerationRequest>& requests, int batch_size = 16);

}  // namespace segdiff
