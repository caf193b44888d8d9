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

// Staged experiment runner.
//
// Stage graph: pretrain -> finetune -> generate -> train-seg -> eval-seg, and
// finetune -> eval-gen. Each stage writes into <run_dir>/<stage>/ and finishes by writing
// a DONE marker holding its input hash. The hash covers the stage's own settings, the
// master seed and the hashes of its dependencies, so artifacts from a different config
// are never picked up.

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segdiff/config.hpp"
#include "segdiff/metrics.hpp"

namespace segdiff {

enum class Stage { kPretrain, kFinetune, kGenerate, kTrainSeg, kEvalSeg, kEvalGen };

std::string_view stage_name(Stage s);
/// Throws ArgumentError for unknown names.
Stage parse_stage(std::string_view name);
const std::vector<Stage>& all_stages();
const std::vector<Stage>& stage_dependencies(Stage s);

/// Input hash of a stage for this config (16 hex digits).
std::string stage_hash(const RunConfig& config, Stage s);
std::filesystem::path stage_dir(const RunConfig& config, Stage s);
/// True when the stage's DONE marker exists and matches the current input hash.
bool stage_complete(const RunConfig& config, Stage s);

/// Wall-clock seconds stored in a complete stage's marker.
std::optional<double> recorded_stage_seconds(const RunConfig& config, Stage s);

struct StageOutcome {
  Stage stage;
  bool executed = false;
  double seconds = 0.0;
};

/// Runs the selected stages in dependency order. With config.resume, a stage whose marker
/// matches is skipped unless one of its dependencies ran in this invocation. A dependency
/// that is not selected must already be complete, otherwise DependencyError names it.
std::vector<StageOutcome> run_pipeline(const RunConfig& config, const std::vector<Stage>& stages);
/// Runs config.stages.
std::vector<StageOutcome> run_pipeline(const RunConfig& config);

/// Segmentation methods trained by train-seg: Baseline, classic baselines, DiffBoost.
struct SegMethod {
  std::string label;  // report row label
  std::string key;    // directory name
  SegTrainConfig train;
};
std::vector<SegMethod> segmentation_methods(const RunConfig& config);

/// The segmentation task records (synthetic or ingested) and the held-out generation set.
std::vector<SampleRecord> load_task_records(const RunConfig& config, const Vocabulary& vocab);
std::vector<SampleRecord> heldout_generation_records(const RunConfig& config, const Vocabulary& vocab);

// ---------------------------------------------------------------- ablation

struct AblationRow {
  std::string value;
  MetricSummary dice, hd95, assd;
  bool plateau_candidate = false;
};

struct AblationResult {
  std::string parameter;
  std::vector<AblationRow> rows;
  std::filesystem::path table_path;
  std::filesystem::path plot_path;
};

/// Sweeps one of n, alpha, patch_size or backbone through cross-validated DiffBoost training,
/// reusing the pipeline's upstream artifacts (running them when missing). Writes
/// ablation/<parameter>/{<value>/cases.csv, table.csv, plot.svg}.
AblationResult run_ablation(const RunConfig& config, const std::string& parameter,
                            const std::vector<nlohmann::json>& values);

/// Recomputes an ablation table from its per-point case files.
std::vector<AblationRow> ablation_rows_from_cases(const std::filesystem::path& sweep_dir, const std::string& parameter,
                                                  const std::vector<std::string>& values);

}  // namespace segdiff
