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

// Segmentation training on patch-mixed real/generated inputs, prediction, and k-fold
// cross-validation.
//
// Random streams are split by purpose (initialization, data order, augmentation), so
// alpha = 1 consumes augmentation draws without perturbing anything else and reproduces
// plain training exactly.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segdiff/augmentation.hpp"
#include "segdiff/checkpoint.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/seg_models.hpp"

namespace segdiff {

struct SegTrainConfig {
  bool use_diffboost = true;  // false: plain training on originals
  double alpha = 0.5;
  int patch_size = 0;  // 0: round(image side / 6)
  int n = 10;          // variants drawn from (a prefix of) the cache
  int epochs = 100;
  long long max_iterations = 0;  // 0 = no cap
  int batch_size = 8;
  double learning_rate = 2e-3;
  double weight_decay = 1e-4;
  double dice_weight = 0.5;
  double bce_weight = 0.5;
  int folds = 3;
  std::uint64_t seed = 0;
  std::optional<ClassicKind> classic;  // classic transform baseline
  double classic_probability = 0.5;    // per sample and iteration; deep-stack ignores this
  bool classic_with_diffboost = false; // apply the classic transform on top of mixing
  ClassicRanges classic_ranges;

  void validate() const;
  /// Effective patch size for a square side.
  int effective_patch_size(int side) const;
};

nlohmann::json to_json(const SegTrainConfig& c);
SegTrainConfig seg_train_config_from_json(const nlohmann::json& j);

struct SegTrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_history;  // one entry per optimizer step
};

/// Trains one model on `train`. With use_diffboost the cache must cover every record.
SegTrainResult train_segmentation(const std::vector<SampleRecord>& train, const AugmentationCache* cache,
                                  const SegBackboneSpec& spec, const SegTrainConfig& config);

std::unique_ptr<SegModel> segmentation_from_checkpoint(const Checkpoint& ckpt);

/// Foreground probabilities in [0,1].
Image predict_probability(const SegModel& model, const Image& image);
/// probability >= 0.5 is foreground.
Mask binarize(const Image& probability);
Mask predict(const SegModel& model, const Image& image);

/// Volume-aware greedy partition into `folds` groups of record indices.
std::vector<std::vector<std::size_t>> partition_folds(const std::vector<SampleRecord>& records, int folds,
                                                      std::uint64_t seed);

struct FoldRun {
  int fold = 0;
  int seed_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<double> loss_history;
  MetricsReport report;
};

struct CrossValResult {
  MetricsReport report;  // all validation cases, pooled over folds and seeds
  std::vector<FoldRun> runs;
};

using FoldProgressFn = std::function<void(const FoldRun&)>;

/// One model per (seed, fold), trained on the other folds. Folds depend on config.seed only,
/// so every seed repetition sees the same partition. Seed repetition s trains with
/// derive_seed(config.seed, s).
CrossValResult cross_validate(const std::vector<SampleRecord>& dataset, const AugmentationCache* cache,
                              const SegBackboneSpec& spec, const SegTrainConfig& config, int seeds = 1,
                              const FoldProgressFn& progress = {});

}  // namespace segdiff
