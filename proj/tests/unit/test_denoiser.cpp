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

#include <cmath>

#include <gtest/gtest.h>

#include "segdiff/datagen.hpp"
#include "segdiff/denoiser.hpp"
#include "test_util.hpp"

namespace segdiff {
namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.base_channels = 2;
  c.depth = 2;
  c.time_embed_dim = 4;
  c.text_embed_dim = 2;
  c.edge_branch_channels = {1, 1};
  c.attention_at_bottleneck = false;
  c.head_channels = 1;
  return c;
}

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.base_channels = 4;
  c.depth = 3;
  c.time_embed_dim = 8;
  c.text_embed_dim = 8;
  c.edge_branch_channels = {2, 4, 4};
  return c;
}

std::vector<SampleRecord> task_records(int count, int size, std::uint64_t seed) {
  SegTaskSpec spec;
  spec.count = count;
  spec.size = size;
  spec.seed = seed;
  return synth_seg_task(spec, Vocabulary::default_vocabulary()).records;
}

TEST(DenoiserParameters, HandCountedTinyConfig) {
  // text 28, time MLP 40, conv_in 20, encoder 94 + 268, bottleneck 2 * 332,
  // decoder 520 + 188, head 23, edge branch 42.
  EXPECT_EQ(denoiser_parameter_count(tiny_config(), 14), 1887u);
  Rng rng(0);
  DualBranchDenoiser<float> m(tiny_config(), Vocabulary::default_vocabulary(), rng);
  EXPECT_EQ(m.parameters().scalar_count(), 1887u);
}

TEST(DenoiserParameters, FormulaMatchesConstructedModels) {
  for (bool attn : {false, true}) {
    for (int depth : {2, 3, 4}) {
      DenoiserConfig c = small_config();
      c.depth = depth;
      c.edge_branch_channels.assign(depth, 3);
      c.attention_at_bottleneck = attn;
      Rng rng(1);
      DualBranchDenoiser<float> m(c, Vocabulary::default_vocabulary(), rng);
      EXPECT_EQ(m.parameters().scalar_count(), denoiser_parameter_count(c, 14)) << depth << attn;
    }
  }
}

TEST(DenoiserConfig, RejectsInvalid) {
  DenoiserConfig c = small_config();
  c.edge_branch_channels = {4};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.time_embed_dim = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(denoiser_config_from_json(to_json(small_config())), small_config());
}

TEST(Denoiser, OutputShapeMatchesInputAcrossSizes) {
  Rng rng(2);
  DualBranchDenoiser<float> m(small_config(), Vocabulary::default_vocabulary(), rng);
  for (int s : {16, 32, 64}) {
    nn::Tensor<float> xt({2, 1, s, s}, 0.1f), edge({2, 1, s, s}, 0.0f);
    const auto out = m.forward(xt, {1, 50}, std::vector<std::vector<int>>{{0, 3, 7}, {1, 4, 8, 10}}, edge);
    EXPECT_EQ(out.shape(), (nn::Shape{2, 1, s, s}));
  }
  nn::Tensor<float> odd({1, 1, 18, 18}, 0.0f);
  EXPECT_THROW(m.forward(odd, {1}, std::vector<std::vector<int>>{{0}}, odd), ArgumentError);
  nn::Tensor<float> xt({1, 1, 16, 16}, 0.0f), edge({1, 1, 8, 8}, 0.0f);
  EXPECT_THROW(m.forward(xt, {1}, std::vector<std::vector<int>>{{0}}, edge), ArgumentError);
}

TEST(Denoiser, EdgeBranchIsNeutralAtInitialization) {
  Rng rng(3);
  DualBranchDenoiser<float> m(small_config(), Vocabulary::default_vocabulary(), rng);
  Rng data(4);
  const Image x = testing::random_image(16, 16, data, -1.0f, 1.0f);
  const auto text = encode_prompt({"CT", "Blob", "Normal", {}}, m.embedding_table());
  const auto a = m.predict(x, 10, text, EdgeMap(16, 16, 0.0f));
  const auto b = m.predict(x, 10, text, testing::random_image(16, 16, data));
  EXPECT_EQ(a, b);
  for (const auto& p : m.fusion_parameters())
    for (float v : p.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Denoiser, DoublePrecisionGradientsMatchFiniteDifferences) {
  DenoiserConfig c = tiny_config();
  c.attention_at_bottleneck = true;
  Rng rng(5);
  DualBranchDenoiser<double> m(c, Vocabulary::default_vocabulary(), rng);
  // Give the zero-initialized fusion weights values so their paths are exercised.
  for (auto& p : m.parameters().entries())
    for (auto& v : p.tensor.mutable_data())
      if (v == 0.0) v = 0.1 * rng.normal();
  Rng data(6);
  std::vector<double> xv(2 * 8 * 8), ev(2 * 8 * 8), wv(2 * 8 * 8);
  for (auto& v : xv) v = data.normal();
  for (auto& v : ev) v = data.uniform();
  for (auto& v : wv) v = data.normal();
  const std::vector<int> steps{3, 17};
  const std::vector<std::vector<int>> tokens{{0, 4, 8}, {2, 5, 9, 11}};
  auto objective = [&] {
    nn::Tensor<double> xt({2, 1, 8, 8}, xv), edge({2, 1, 8, 8}, ev), w({2, 1, 8, 8}, wv);
    return nn::mean_all(nn::mul(m.forward(xt, steps, tokens, edge), w));
  };
  auto loss = objective();
  loss.backward();
  int checked = 0;
  for (auto& p : m.parameters().entries()) {
    auto values = p.tensor.mutable_data();
    const auto grad = std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end());
    ASSERT_EQ(grad.size(), values.size()) << p.name;
    for (std::size_t k = 0; k < values.size(); k += std::max<std::size_t>(1, values.size() / 3)) {
      const double orig = values[k], h = 1e-6;
      values[k] = orig + h;
      const double up = objective().item();
      values[k] = orig - h;
      const double down = objective().item();
      values[k] = orig;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(grad[k], numeric, 1e-6 + 1e-4 * std::abs(numeric)) << p.name << "[" << k << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(DenoiserCheckpoint, RoundTripPreservesPredictions) {
  Rng rng(7);
  const auto vocab = Vocabulary::default_vocabulary();
  DualBranchDenoiser<float> m(small_config(), vocab, rng);
  const auto schedule = make_linear_schedule(50, 1e-3, 0.2);
  const auto dir = testing::scratch_dir("denoiser_ckpt");
  save_checkpoint(make_denoiser_checkpoint(m, schedule, "pretrained", 7, 12), dir / "d.ckpt");
  const auto ckpt = load_checkpoint(dir / "d.ckpt", vocab.hash());
  EXPECT_EQ(ckpt.stage, "pretrained");
  EXPECT_EQ(ckpt.step, 12);
  ASSERT_TRUE(ckpt.schedule.has_value());
  EXPECT_EQ(ckpt.schedule->betas, schedule.betas);
  const auto m2 = denoiser_from_checkpoint(ckpt, vocab);
  Rng data(8);
  const Image x = testing::random_image(16, 16, data, -1.0f, 1.0f), e = testing::random_image(16, 16, data);
  const auto text = encode_prompt({"US", "Ring", "Inclusion", {"low noise"}}, m.embedding_table());
  EXPECT_EQ(m.predict(x, 20, text, e), m2.predict(x, 20, text, e));

  const Vocabulary other({"CT"}, {"Blob"}, {"Normal"}, {});
  EXPECT_THROW(load_checkpoint(dir / "d.ckpt", other.hash()), CheckpointError);
  EXPECT_THROW(denoiser_from_checkpoint(ckpt, other), CheckpointError);
}

TEST(DiffusionTraining, StageDefaultsAndTags) {
  EXPECT_EQ(stage_tag(TrainingStage::kPretrain), "pretrained");
  EXPECT_EQ(stage_tag(TrainingStage::kFinetune), "finetuned");
  const auto f = DiffusionTrainConfig::finetune_defaults();
  EXPECT_EQ(f.learning_rate, 1e-6);
  EXPECT_EQ(f.epochs, 100);
  EXPECT_EQ(f.stage, TrainingStage::kFinetune);
}

TEST(DiffusionTraining, FinetuneRequiresPretrainedInit) {
  const auto vocab = Vocabulary::default_vocabulary();
  const auto schedule = make_linear_schedule(10, 1e-3, 0.2);
  const auto data = task_records(2, 16, 1);
  auto cfg = DiffusionTrainConfig::finetune_defaults();
  cfg.epochs = 1;
  EXPECT_THROW(train_diffusion(data, small_config(), vocab, schedule, cfg), ConfigError);
  auto pre = DiffusionTrainConfig::pretrain_defaults();
  pre.epochs = 1;
  const auto first = train_diffusion(data, small_config(), vocab, schedule, pre);
  EXPECT_EQ(first.checkpoint.stage, "pretrained");
  const auto tuned = train_diffusion(data, small_config(), vocab, schedule, cfg, &first.checkpoint);
  EXPECT_EQ(tuned.checkpoint.stage, "finetuned");
  EXPECT_EQ(tuned.checkpoint.step, first.checkpoint.step + 1);
  EXPECT_THROW(train_diffusion(data, small_config(), vocab, schedule, cfg, &tuned.checkpoint), ConfigError);
}

TEST(DiffusionTraining, RejectsOutOfRangePixels) {
  auto data = task_records(2, 16, 2);
  data[1].image(3, 3) = 1.5f;
  auto cfg = DiffusionTrainConfig::pretrain_defaults();
  cfg.epochs = 1;
  EXPECT_THROW(train_diffusion(data, small_config(), Vocabulary::default_vocabulary(),
                               make_linear_schedule(10, 1e-3, 0.2), cfg),
               ValidationError);
}

TEST(DiffusionTraining, SingleImageLossHalvesAndIsDeterministic) {
  const auto data = task_records(1, 16, 3);
  const auto vocab = Vocabulary::default_vocabulary();
  const auto schedule = make_linear_schedule(50, 1e-3, 0.2);
  auto cfg = DiffusionTrainConfig::pretrain_defaults();
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 1;
  cfg.epochs = 400;
  cfg.seed = 9;
  const auto a = train_diffusion(data, small_config(), vocab, schedule, cfg);
  ASSERT_EQ(a.loss_history.size(), 400u);
  auto window_mean = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 50; ++i) s += a.loss_history[i];
    return s / 50.0;
  };
  EXPECT_LE(window_mean(350), 0.5 * window_mean(0));
  cfg.epochs = 20;
  const auto b = train_diffusion(data, small_config(), vocab, schedule, cfg);
  const auto c = train_diffusion(data, small_config(), vocab, schedule, cfg);
  EXPECT_EQ(b.loss_history, c.loss_history);
  EXPECT_EQ(b.checkpoint.params, c.checkpoint.params);
}

}  // namespace
}  // namespace segdiff
