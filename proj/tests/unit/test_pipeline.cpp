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

#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "segdiff/image_io.hpp"
#include "segdiff/pipeline.hpp"
#include "segdiff/report.hpp"
#include "test_util.hpp"

namespace segdiff {
namespace {

namespace fs = std::filesystem;

RunConfig mini_config(const std::string& dir_name) {
  RunConfig c = load_run_config(fs::path(SEGDIFF_SOURCE_DIR) / "configs" / "mini.yaml");
  c.run_dir = testing::scratch_dir(dir_name);
  return c;
}

std::set<Stage> executed(const std::vector<StageOutcome>& outcomes) {
  std::set<Stage> out;
  for (const auto& o : outcomes)
    if (o.executed) out.insert(o.stage);
  return out;
}

TEST(RunConfigYaml, RoundTripAndStrictness) {
  const RunConfig c = load_run_config(fs::path(SEGDIFF_SOURCE_DIR) / "configs" / "mini.yaml");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.schedule.steps, 20);
  EXPECT_EQ(c.segmentation.classic_baselines, std::vector<ClassicKind>{ClassicKind::kContrast});
  const auto dir = testing::scratch_dir("config_roundtrip");
  save_run_config(c, dir / "c.yaml");
  EXPECT_EQ(to_json(load_run_config(dir / "c.yaml")), to_json(c));

  auto j = to_json(c);
  j["segmentation"]["train"]["alpah"] = 0.3;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  j = to_json(c);
  j["schedule"]["steps"] = 2.5;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  j = to_json(c);
  j["seed"] = -1;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  j = to_json(c);
  j["ablation"]["sweeps"]["depth"] = nlohmann::json::array({1, 2});
  EXPECT_THROW(run_config_from_json(j).validate(), ConfigError);
  j = to_json(c);
  j["segmentation"]["train"]["n"] = 5;  // more variants than the cache holds
  EXPECT_THROW(run_config_from_json(j).validate(), ConfigError);
  EXPECT_THROW(load_run_config(dir / "missing.yaml"), Error);
}

TEST(RunConfigYaml, ScalarTyping) {
  const auto j = yaml_to_json("a: 1\nb: 1.5\nc: true\nd: \"7\"\ne: text\nf: [1, 2]\ng: ~\n");
  EXPECT_TRUE(j["a"].is_number_integer());
  EXPECT_TRUE(j["b"].is_number_float());
  EXPECT_TRUE(j["c"].is_boolean());
  EXPECT_TRUE(j["d"].is_string());
  EXPECT_EQ(j["e"], "text");
  EXPECT_EQ(j["f"], nlohmann::json::array({1, 2}));
  EXPECT_TRUE(j["g"].is_null());
  EXPECT_EQ(yaml_to_json(json_to_yaml(j)), j);
}

TEST(RunConfigYaml, ShippedConfigsLoad) {
  for (const auto& e : fs::directory_iterator(fs::path(SEGDIFF_SOURCE_DIR) / "configs")) {
    SCOPED_TRACE(e.path().string());
    EXPECT_NO_THROW(load_run_config(e.path()));
  }
  const auto full = load_run_config(fs::path(SEGDIFF_SOURCE_DIR) / "configs" / "default.yaml");
  EXPECT_EQ(full.segmentation.classic_baselines.size(), all_classic_kinds().size());
}

TEST(Stages, NamesAndGraph) {
  for (Stage s : all_stages()) EXPECT_EQ(parse_stage(stage_name(s)), s);
  EXPECT_THROW(parse_stage("deploy"), ArgumentError);
  EXPECT_EQ(stage_dependencies(Stage::kEvalGen), std::vector<Stage>{Stage::kFinetune});
  EXPECT_EQ(stage_dependencies(Stage::kGenerate), std::vector<Stage>{Stage::kFinetune});
  EXPECT_TRUE(stage_dependencies(Stage::kPretrain).empty());
}

TEST(Pipeline, MissingDependencyIsNamed) {
  RunConfig c = mini_config("pipeline_dependency");
  try {
    run_pipeline(c, {Stage::kFinetune});
    FAIL() << "expected DependencyError";
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("pretrain"), std::string::npos) << e.what();
  }
}

TEST(Report, EmptyRunDirectory) {
  EXPECT_THROW(write_report(testing::scratch_dir("report_empty")), EmptyReportError);
}

TEST(Report, MeanPlusMinusStd) {
  EXPECT_EQ(mean_pm_std({0.0873, 0.0363, 5}), "0.0873 ± 0.0363");
  EXPECT_EQ(mean_pm_std({1.0, 0.0, 1}, 2), "1.00 ± 0.00");
}

class MiniRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new RunConfig(mini_config("pipeline_mini"));
    first_ = new std::vector<StageOutcome>(run_pipeline(*config_));
    tables_ = new ReportTables(write_report(config_->run_dir));
  }
  static void TearDownTestSuite() {
    delete config_;
    delete first_;
    delete tables_;
  }
  static RunConfig* config_;
  static std::vector<StageOutcome>* first_;
  static ReportTables* tables_;
};

RunConfig* MiniRun::config_ = nullptr;
std::vector<StageOutcome>* MiniRun::first_ = nullptr;
ReportTables* MiniRun::tables_ = nullptr;

TEST_F(MiniRun, AllStagesRanAndWroteArtifacts) {
  EXPECT_EQ(executed(*first_).size(), all_stages().size());
  const auto& d = config_->run_dir;
  for (const char* p : {"pretrain/denoiser.ckpt", "finetune/denoiser.ckpt", "generate/cache/cache.json",
                        "train-seg/methods.json", "eval-seg/diffboost/cases.csv", "eval-seg/baseline/cases.csv",
                        "eval-gen/cases.csv", "eval-gen/pairing.csv", "report/segmentation.csv",
                        "report/generation.csv", "report/summary.md", "report/segmentation_dice.svg", "config.yaml"}) {
    EXPECT_TRUE(fs::exists(d / p)) << p;
  }
  for (Stage s : all_stages()) EXPECT_TRUE(stage_complete(*config_, s)) << stage_name(s);
}

TEST_F(MiniRun, ResumeSkipsCompletedStages) {
  RunConfig c = *config_;
  c.resume = true;
  EXPECT_TRUE(executed(run_pipeline(c)).empty());
}

TEST_F(MiniRun, ReportRowsRecomputeFromCaseFiles) {
  std::vector<std::string> labels;
  for (const auto& r : tables_->segmentation) labels.push_back(r.label);
  EXPECT_NE(std::find(labels.begin(), labels.end(), "Baseline"), labels.end());
  EXPECT_NE(std::find(labels.begin(), labels.end(), "DiffBoost"), labels.end());
  EXPECT_NE(std::find(labels.begin(), labels.end(), "Contrast"), labels.end());
  for (const auto& row : tables_->segmentation) {
    const auto key = row.label == "Baseline" ? "baseline" : row.label == "DiffBoost" ? "diffboost" : "classic-contrast";
    const auto rep = MetricsReport::read_csv(config_->run_dir / "eval-seg" / key / "cases.csv");
    EXPECT_EQ(rep.cases().size(), 12u);
    const auto& names = metric_names(MetricSet::kSegmentation);
    for (std::size_t m = 0; m < names.size(); ++m) {
      const auto s = summarize(rep.column(names[m]));
      EXPECT_EQ(row.metrics[m].mean, s.mean) << row.label << " " << names[m];
      EXPECT_EQ(row.metrics[m].std, s.std);
    }
  }
  ASSERT_EQ(tables_->generation.size(), 1u);
  const auto gen = MetricsReport::read_csv(config_->run_dir / "eval-gen" / "cases.csv");
  EXPECT_EQ(gen.cases().size(), 6u);
  EXPECT_EQ(tables_->generation[0].metrics[0].mean, summarize(gen.column("mae")).mean);
  const std::string md = read_text(config_->run_dir / "report" / "summary.md");
  EXPECT_NE(md.find(mean_pm_std(tables_->generation[0].metrics[0])), std::string::npos);
  EXPECT_NE(md.find("DiffBoost"), std::string::npos);
}

TEST_F(MiniRun, DeletedCacheRerunsOnlyDownstream) {
  RunConfig c = *config_;
  c.resume = true;
  fs::remove_all(c.run_dir / "generate");
  const auto ran = executed(run_pipeline(c));
  EXPECT_EQ(ran, (std::set<Stage>{Stage::kGenerate, Stage::kTrainSeg, Stage::kEvalSeg}));
}

TEST_F(MiniRun, ChangedSegmentationSettingsInvalidateOnlySegmentationStages) {
  RunConfig c = *config_;
  c.resume = true;
  c.segmentation.train.alpha = 0.25;
  EXPECT_TRUE(stage_complete(c, Stage::kGenerate));
  EXPECT_FALSE(stage_complete(c, Stage::kTrainSeg));
  EXPECT_TRUE(stage_complete(c, Stage::kEvalGen));
  c.seed = 8;
  EXPECT_FALSE(stage_complete(c, Stage::kPretrain));
}

TEST_F(MiniRun, AblationTablesAndErrors) {
  RunConfig c = *config_;
  c.resume = true;
  const auto alpha = run_ablation(c, "alpha", {0.0, 0.5, 1.0});
  ASSERT_EQ(alpha.rows.size(), 3u);
  EXPECT_TRUE(fs::exists(alpha.table_path));
  EXPECT_TRUE(fs::exists(alpha.plot_path));
  const auto recomputed = ablation_rows_from_cases(alpha.table_path.parent_path(), "alpha", {"0", "0.5", "1"});
  ASSERT_EQ(recomputed.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(recomputed[i].dice.mean, alpha.rows[i].dice.mean);
    EXPECT_EQ(recomputed[i].hd95.std, alpha.rows[i].hd95.std);
  }
  const auto table = read_csv(alpha.table_path);
  EXPECT_EQ(table.rows.size(), 3u);

  const auto n = run_ablation(c, "n", {1, 2, 3});
  ASSERT_EQ(n.rows.size(), 3u);
  for (const auto& r : n.rows) EXPECT_FALSE(r.plateau_candidate);
  const auto patch = run_ablation(c, "patch_size", {1, 4, 16});
  EXPECT_EQ(patch.rows.size(), 3u);

  EXPECT_THROW(run_ablation(c, "depth", {1, 2}), ConfigError);
  EXPECT_THROW(run_ablation(c, "n", {4}), ConfigError);
  EXPECT_THROW(run_ablation(c, "alpha", {0.5, 0.5}), ConfigError);
  EXPECT_THROW(run_ablation(c, "backbone", {"mlp"}), ConfigError);
}

TEST_F(MiniRun, SecondRunReproducesTablesBitIdentically) {
  RunConfig c = mini_config("pipeline_mini_repeat");
  run_pipeline(c);
  write_report(c.run_dir);
  for (const char* p : {"report/segmentation.csv", "report/generation.csv", "eval-seg/diffboost/cases.csv",
                        "eval-seg/baseline/cases.csv", "eval-gen/cases.csv", "eval-gen/pairing.csv"}) {
    EXPECT_EQ(read_text(c.run_dir / p), read_text(config_->run_dir / p)) << p;
  }
}

}  // namespace
}  // namespace segdiff
