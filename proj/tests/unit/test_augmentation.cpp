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
#include <cmath>

#include <gtest/gtest.h>

#include "segdiff/augmentation.hpp"
#include "segdiff/datagen.hpp"
#include "segdiff/denoiser.hpp"
#include "test_util.hpp"

namespace segdiff {
namespace {

TEST(RandomPatch, GridShapeAndCellConstancy) {
  Rng rng(1);
  const auto p = generate_random_patch(0.5, 64, 384, 384, rng);
  EXPECT_EQ(p.grid_dims, (std::array<int, 2>{6, 6}));
  ASSERT_EQ(p.grid.rows, 384u);
  for (std::size_t r = 0; r < 384; ++r)
    for (std::size_t c = 0; c < 384; ++c) ASSERT_EQ(p.grid(r, c), p.grid(r / 64 * 64, c / 64 * 64));

  const auto q = generate_random_patch(0.5, 4, 10, 7, rng);
  EXPECT_EQ(q.grid_dims, (std::array<int, 2>{3, 2}));
  EXPECT_EQ(q.grid.rows, 10u);
  EXPECT_EQ(q.grid.cols, 7u);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(q.grid(r, c), q.grid(r / 4 * 4, c / 4 * 4));
}

TEST(RandomPatch, ExtremesAndErrors) {
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    for (auto v : generate_random_patch(0.0, 3, 16, 16, rng).grid.data) ASSERT_EQ(v, 0);
    for (auto v : generate_random_patch(1.0, 3, 16, 16, rng).grid.data) ASSERT_EQ(v, 1);
  }
  EXPECT_THROW(generate_random_patch(1.2, 4, 16, 16, rng), ArgumentError);
  EXPECT_THROW(generate_random_patch(0.5, 0, 16, 16, rng), ArgumentError);
  EXPECT_THROW(generate_random_patch(0.5, 17, 16, 16, rng), ArgumentError);
}

TEST(RandomPatch, OnFractionMatchesAlpha) {
  Rng rng(3);
  for (double alpha : {0.1, 0.3, 0.5, 0.9}) {
    double on = 0.0;
    const int draws = 400;
    for (int k = 0; k < draws; ++k) {
      const auto p = generate_random_patch(alpha, 4, 64, 64, rng);
      for (auto v : p.grid.data) on += v;
    }
    const double frac = on / (draws * 64.0 * 64.0);
    // 400 * 256 Bernoulli cells: the standard error is below 0.0016.
    EXPECT_NEAR(frac, alpha, 0.008) << alpha;
  }
}

TEST(RandomPatch, TenThousandMasksAtAlphaPointThree) {
  Rng rng(31);
  double on = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const auto p = generate_random_patch(0.3, 4, 16, 16, rng);
    for (auto v : p.grid.data) on += v;
  }
  EXPECT_NEAR(on / (10000.0 * 256.0), 0.3, 0.01);
}

TEST(RandomPatch, DeterministicForSeed) {
  Rng a(4), b(4);
  EXPECT_EQ(generate_random_patch(0.4, 5, 32, 32, a).grid, generate_random_patch(0.4, 5, 32, 32, b).grid);
}

TEST(Mix, IdentitiesCheckerboardAndConvexity) {
  Rng rng(5);
  const Image x0 = testing::random_image(12, 12, rng), xi = testing::random_image(12, 12, rng);
  EXPECT_EQ(mix(x0, xi, Mask(12, 12, 1)), x0);
  EXPECT_EQ(mix(x0, xi, Mask(12, 12, 0)), xi);
  Mask checker(12, 12);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 12; ++c) checker(r, c) = (r + c) % 2;
  const Image m = mix(x0, xi, checker);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 12; ++c) EXPECT_EQ(m(r, c), (r + c) % 2 ? x0(r, c) : xi(r, c));
  for (int k = 0; k < 20; ++k) {
    const auto p = generate_random_patch(rng.uniform(), 3, 12, 12, rng);
    const Image y = mix(x0, xi, p);
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_GE(y.data[i], std::min(x0.data[i], xi.data[i]));
      EXPECT_LE(y.data[i], std::max(x0.data[i], xi.data[i]));
    }
  }
  EXPECT_THROW(mix(x0, Image(5, 5), checker), ArgumentError);
}

class CacheTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    vocab_ = new Vocabulary(Vocabulary::default_vocabulary());
    SegTaskSpec spec;
    spec.count = 3;
    spec.size = 16;
    spec.seed = 11;
    records_ = new std::vector<SampleRecord>(synth_seg_task(spec, *vocab_).records);
    DenoiserConfig dc;
    dc.base_channels = 4;
    dc.depth = 2;
    dc.time_embed_dim = 8;
    dc.text_embed_dim = 8;
    dc.edge_branch_channels = {2, 4};
    const auto schedule = make_linear_schedule(8, 1e-3, 0.2);
    auto pre = DiffusionTrainConfig::pretrain_defaults();
    pre.epochs = 2;
    pretrained_ = new Checkpoint(train_diffusion(*records_, dc, *vocab_, schedule, pre).checkpoint);
    auto fine = DiffusionTrainConfig::finetune_defaults();
    fine.epochs = 2;
    finetuned_ = new Checkpoint(train_diffusion(*records_, dc, *vocab_, schedule, fine, pretrained_).checkpoint);
  }
  static void TearDownTestSuite() {
    delete vocab_;
    delete records_;
    delete pretrained_;
    delete finetuned_;
  }

  static CacheBuildOptions options(int n) {
    CacheBuildOptions o;
    o.n = n;
    o.seed = 21;
    o.batch_size = 4;
    return o;
  }

  static Vocabulary* vocab_;
  static std::vector<SampleRecord>* records_;
  static Checkpoint* pretrained_;
  static Checkpoint* finetuned_;
};

Vocabulary* CacheTest::vocab_ = nullptr;
std::vector<SampleRecord>* CacheTest::records_ = nullptr;
Checkpoint* CacheTest::pretrained_ = nullptr;
Checkpoint* CacheTest::finetuned_ = nullptr;

TEST_F(CacheTest, RequiresFinetunedCheckpoint) {
  EXPECT_THROW(build_augmentation_cache(*records_, *pretrained_, *vocab_, options(2)), StageError);
}

TEST_F(CacheTest, DeterministicPrefixStableAndDiverse) {
  const auto a = build_augmentation_cache(*records_, *finetuned_, *vocab_, options(3));
  const auto b = build_augmentation_cache(*records_, *finetuned_, *vocab_, options(3));
  const auto small = build_augmentation_cache(*records_, *finetuned_, *vocab_, options(2));
  ASSERT_EQ(a.entries.size(), 3u);
  EXPECT_EQ(a.checkpoint_fingerprint, finetuned_->fingerprint());
  EXPECT_NO_THROW(a.check_covers(*records_));
  for (std::size_t e = 0; e < 3; ++e) {
    ASSERT_EQ(a.entries[e].variants.size(), 3u);
    for (int v = 0; v < 3; ++v) {
      EXPECT_EQ(a.entries[e].variants[v].image, b.entries[e].variants[v].image);
      for (float x : a.entries[e].variants[v].image.data) {
        EXPECT_GE(x, 0.0f);
        EXPECT_LE(x, 1.0f);
      }
    }
    for (int v = 0; v < 2; ++v) EXPECT_EQ(small.entries[e].variants[v].image, a.entries[e].variants[v].image);
    EXPECT_NE(a.entries[e].variants[0].image, a.entries[e].variants[1].image);
    EXPECT_EQ(a.entries[e].variants[1].aug_texts, std::vector<std::string>{"high resolution"});
  }
  const auto p = a.prefix(2);
  EXPECT_EQ(p.n, 2);
  for (std::size_t e = 0; e < 3; ++e)
    for (int v = 0; v < 2; ++v) EXPECT_EQ(p.entries[e].variants[v].image, small.entries[e].variants[v].image);
  EXPECT_THROW(a.prefix(4), ArgumentError);
}

TEST_F(CacheTest, SaveLoadRoundTripAndCoverageChecks) {
  const auto cache = build_augmentation_cache(*records_, *finetuned_, *vocab_, options(2));
  const auto dir = testing::scratch_dir("cache_roundtrip");
  save_cache(cache, dir);
  const auto loaded = load_cache(dir);
  EXPECT_EQ(loaded.n, 2);
  EXPECT_EQ(loaded.checkpoint_fingerprint, cache.checkpoint_fingerprint);
  EXPECT_NO_THROW(loaded.check_covers(*records_));
  for (std::size_t e = 0; e < 3; ++e) {
    for (int v = 0; v < 2; ++v) {
      const auto& x = cache.entries[e].variants[v].image.data;
      const auto& y = loaded.entries[e].variants[v].image.data;
      ASSERT_EQ(x.size(), y.size());
      // Variants are stored on the 8-bit grid.
      for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 0.5 / 255.0 + 1e-6);
    }
  }
  auto altered = *records_;
  altered[0].image(0, 0) = altered[0].image(0, 0) > 0.5f ? 0.0f : 1.0f;
  EXPECT_THROW(cache.check_covers(altered), ValidationError);
  altered = *records_;
  altered[1].case_id = "missing";
  EXPECT_THROW(cache.check_covers(altered), ValidationError);
  EXPECT_THROW(load_cache(dir / "nope"), IoError);
}

TEST(VariantSeed, IndependentOfCountAndDistinct) {
  EXPECT_EQ(variant_seed(1, "a", 2), variant_seed(1, "a", 2));
  EXPECT_NE(variant_seed(1, "a", 2), variant_seed(1, "a", 3));
  EXPECT_NE(variant_seed(1, "a", 2), variant_seed(1, "b", 2));
  EXPECT_NE(variant_seed(1, "a", 2), variant_seed(2, "a", 2));
}

SampleRecord sample_record(std::uint64_t seed) {
  Rng rng(seed);
  SampleRecord r;
  r.case_id = "c" + std::to_string(seed);
  r.image = testing::random_image(20, 20, rng, 0.1f, 0.9f);
  r.mask = testing::box_mask(20, 20, 5, 6, 8, 7);
  r.triplet = {"CT", "Blob", "Normal", {}};
  r.edge = edges_from_mask(*r.mask);
  return r;
}

TEST(Classic, Identities) {
  const auto r = sample_record(1);
  for (int axis : {0, 1}) {
    const auto once = classic::mirror(r, axis);
    EXPECT_NE(once.image, r.image);
    const auto twice = classic::mirror(once, axis);
    EXPECT_EQ(twice.image, r.image);
    EXPECT_EQ(twice.mask, r.mask);
  }
  const auto rot = classic::rotate(r, 0.0);
  EXPECT_EQ(rot.mask, r.mask);
  for (std::size_t i = 0; i < r.image.size(); ++i) EXPECT_NEAR(rot.image.data[i], r.image.data[i], 1e-6);
  const auto g = classic::gamma(r, 1.0);
  for (std::size_t i = 0; i < r.image.size(); ++i) EXPECT_NEAR(g.image.data[i], r.image.data[i], 1e-6);
  const auto c = classic::contrast(r, 1.0);
  for (std::size_t i = 0; i < r.image.size(); ++i) EXPECT_NEAR(c.image.data[i], r.image.data[i], 1e-6);
  EXPECT_EQ(classic::resolution(r, 1.0).image, r.image);
  EXPECT_EQ(classic::scale(r, 1.0).mask, r.mask);
}

TEST(Classic, MirrorMovesMaskWithImage) {
  const auto r = sample_record(2);
  const auto m = classic::mirror(r, 1);
  for (std::size_t y = 0; y < 20; ++y) {
    for (std::size_t x = 0; x < 20; ++x) {
      EXPECT_EQ(m.image(y, x), r.image(y, 19 - x));
      EXPECT_EQ((*m.mask)(y, x), (*r.mask)(y, 19 - x));
    }
  }
}

TEST(Classic, EveryKindKeepsRecordValid) {
  Rng rng(3);
  for (int k = 0; k < 10; ++k) {
    const auto r = sample_record(10 + k);
    for (ClassicKind kind : all_classic_kinds()) {
      const auto out = apply_classic(r, {kind, {}, std::nullopt}, rng);
      EXPECT_NO_THROW(out.validate()) << classic_kind_name(kind);
      EXPECT_TRUE(out.image.same_shape(r.image));
      ASSERT_TRUE(out.mask.has_value());
      for (auto v : out.mask->data) EXPECT_TRUE(v == 0 || v == 1);
      if (!is_spatial(kind) && kind != ClassicKind::kDeepStack) EXPECT_EQ(out.mask, r.mask);
      EXPECT_EQ(out.edge, edges_from_mask(*out.mask));
    }
  }
}

TEST(Classic, NamesRoundTrip) {
  for (ClassicKind kind : all_classic_kinds()) EXPECT_EQ(parse_classic_kind(classic_kind_name(kind)), kind);
  EXPECT_THROW(parse_classic_kind("elastic"), ConfigError);
  EXPECT_EQ(all_classic_kinds().size(), 9u);
}

}  // namespace
}  // namespace segdiff
