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

// Declarative run configuration, loaded from and saved to YAML.
//
// Unknown keys are rejected so that typos fail loudly. Every sub-seed is derived from the
// master seed, which makes a persisted config plus the code version a complete recipe.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdiff/augmentation.hpp"
#include "segdiff/datagen.hpp"
#include "segdiff/denoiser.hpp"
#include "segdiff/seg_models.hpp"
#include "segdiff/seg_trainer.hpp"

namespace segdiff {

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  NoiseSchedule build() const;
};

struct TaskDataConfig {
  std::string source = "synthetic";  // "synthetic" or "ingest"
  SegTaskSpec synthetic;
  std::filesystem::path ingest_dir;
  IngestLayout layout;
};

struct SegmentationStageConfig {
  SegBackboneSpec backbone;
  SegTrainConfig train;
  int seeds = 1;
  std::vector<ClassicKind> classic_baselines;
};

struct GenerationEvalConfig {
  int count = 32;
  int batch_size = 16;
};

struct AblationConfig {
  int seeds = 1;
  int epochs = 0;  // 0 keeps segmentation.train.epochs
  std::map<std::string, std::vector<nlohmann::json>> sweeps;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path run_dir = "runs/default";
  bool resume = false;
  std::vector<std::string> stages = {"pretrain", "finetune", "generate", "train-seg", "eval-seg", "eval-gen"};

  ScheduleConfig schedule;
  std::filesystem::path vocabulary;  // empty: built-in vocabulary
  DenoiserConfig denoiser;
  EdgeExtractorConfig edges;
  DiffusionTrainConfig pretrain = DiffusionTrainConfig::pretrain_defaults();
  DiffusionTrainConfig finetune = DiffusionTrainConfig::finetune_defaults();
  CorpusSpec corpus;
  TaskDataConfig task;
  CacheBuildOptions cache;
  SegmentationStageConfig segmentation;
  GenerationEvalConfig generation_eval;
  AblationConfig ablation;

  /// Throws ConfigError on any invalid field.
  void validate() const;
  Vocabulary load_vocabulary() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys or wrongly typed values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& c, const std::filesystem::path& path);

/// YAML text <-> JSON value. Plain scalars become numbers, booleans or null when they parse
/// as such; quoted scalars stay strings.
nlohmann::json yaml_to_json(std::string_view text);
std::string json_to_yaml(const nlohmann::json& j);

}  // namespace segdiff
