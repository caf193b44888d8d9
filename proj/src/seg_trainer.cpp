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

#include "segdiff/seg_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

namespace segdiff {

using nn::Tensor;

void SegTrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("segmentation: alpha must be in [0,1]");
  if (patch_size < 0) throw ConfigError("segmentation: patch_size must be positive (0 selects the default)");
  if (use_diffboost && n < 1) throw ConfigError("segmentation: n must be at least 1");
  if (epochs < 0 || batch_size < 1 || learning_rate <= 0.0) {
    throw ConfigError("segmentation: epochs >= 0, batch_size >= 1 and a positive learning rate are required");
  }
  if (dice_weight < 0.0 || bce_weight < 0.0 || dice_weight + bce_weight <= 0.0) {
    throw ConfigError("segmentation: loss weights must be non-negative and not both zero");
  }
  if (folds < 2) throw ConfigError("segmentation: at least 2 folds are required");
  if (classic_probability < 0.0 || classic_probability > 1.0) {
    throw ConfigError("segmentation: classic_probability must be in [0,1]");
  }
}

int SegTrainConfig::effective_patch_size(int side) const {
  return patch_size > 0 ? patch_size : std::max(1, static_cast<int>(std::lround(side / 6.0)));
}

nlohmann::json to_json(const SegTrainConfig& c) {
  nlohmann::json j{{"use_diffboost", c.use_diffboost},
                   {"alpha", c.alpha},
                   {"patch_size", c.patch_size},
                   {"n", c.n},
                   {"epochs", c.epochs},
                   {"max_iterations", c.max_iterations},
                   {"batch_size", c.batch_size},
                   {"learning_rate", c.learning_rate},
                   {"weight_decay", c.weight_decay},
                   {"dice_weight", c.dice_weight},
                   {"bce_weight", c.bce_weight},
                   {"folds", c.folds},
                   {"seed", c.seed},
                   {"classic", c.classic ? nlohmann::json(classic_kind_name(*c.classic)) : nlohmann::json(nullptr)},
                   {"classic_probability", c.classic_probability},
                   {"classic_with_diffboost", c.classic_with_diffboost}};
  return j;
}

SegTrainConfig seg_train_config_from_json(const nlohmann::json& j) {
  SegTrainConfig c;
  c.use_diffboost = j.value("use_diffboost", c.use_diffboost);
  c.alpha = j.value("alpha", c.alpha);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.n = j.value("n", c.n);
  c.epochs = j.value("epochs", c.epochs);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.dice_weight = j.value("dice_weight", c.dice_weight);
  c.bce_weight = j.value("bce_weight", c.bce_weight);
  c.folds = j.value("folds", c.folds);
  c.seed = j.value("seed", c.seed);
  if (j.contains("classic") && !j.at("classic").is_null()) c.classic = parse_classic_kind(j.at("classic").get<std::string>());
  c.classic_probability = j.value("classic_probability", c.classic_probability);
  c.classic_with_diffboost = j.value("classic_with_diffboost", c.classic_with_diffboost);
  c.validate();
  return c;
}

SegTrainResult train_segmentation(const std::vector<SampleRecord>& train, const AugmentationCache* cache,
                                  const SegBackboneSpec& spec, const SegTrainConfig& config) {
  config.validate();
  if (train.empty()) throw ArgumentError("train_segmentation: empty training set");
  const std::size_t rows = train[0].image.rows, cols = train[0].image.cols;
  for (const auto& r : train) {
    r.validate();
    if (!r.mask) throw ValidationError("train_segmentation: record " + r.case_id + " has no mask");
    if (r.image.rows != rows || r.image.cols != cols) throw ValidationError("train_segmentation: images differ in shape");
  }
  std::vector<const CacheEntry*> entries;
  if (config.use_diffboost) {
    if (cache == nullptr) throw ValidationError("train_segmentation: mixing requires an augmentation cache");
    if (cache->n < config.n) {
      throw ValidationError("train_segmentation: cache holds " + std::to_string(cache->n) + " variants, " +
                            std::to_string(config.n) + " requested");
    }
    for (const auto& r : train) {
      const CacheEntry& e = cache->entry(r.case_id);
      if (!(e.original.image == r.image) || e.original.mask != r.mask) {
        throw ValidationError("train_segmentation: cache entry " + r.case_id + " does not match the record");
      }
      for (int i = 0; i < config.n; ++i) {
        if (!e.variants.at(i).image.same_shape(r.image)) throw ValidationError("cache variant shape mismatch for " + r.case_id);
      }
      entries.push_back(&e);
    }
  }

  Rng init_rng(derive_seed(config.seed, "seg-init"));
  Rng order_rng(derive_seed(config.seed, "seg-order"));
  Rng aug_rng(derive_seed(config.seed, "seg-aug"));
  Rng classic_rng(derive_seed(config.seed, "seg-classic"));

  auto model = make_backbone(spec, init_rng);
  std::vector<Tensor<float>> params;
  for (const auto& p : model->parameters().entries()) params.push_back(p.tensor);
  nn::AdamW<float> opt(params, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});

  const int ps = config.effective_patch_size(static_cast<int>(std::min(rows, cols)));
  const bool apply_classic_here = config.classic && (!config.use_diffboost || config.classic_with_diffboost);
  ClassicTransformSpec classic_spec;
  if (config.classic) classic_spec = {*config.classic, config.classic_ranges, std::nullopt};

  const std::size_t npix = rows * cols;
  const int H = static_cast<int>(rows), W = static_cast<int>(cols);
  SegTrainResult result;
  long long step = 0;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_iterations > 0 && step >= config.max_iterations) break;
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      std::vector<float> x(n * npix), y(n * npix);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t idx = order[start + b];
        const SampleRecord& rec = train[idx];
        Image input = rec.image;
        if (config.use_diffboost) {
          const auto vi = aug_rng.index(static_cast<std::size_t>(config.n));
          const PatchMask m = generate_random_patch(config.alpha, ps, rows, cols, aug_rng);
          input = mix(rec.image, entries[idx]->variants[vi].image, m);
        }
        const Mask* target = &*rec.mask;
        SampleRecord transformed;
        if (apply_classic_here &&
            (*config.classic == ClassicKind::kDeepStack || classic_rng.bernoulli(config.classic_probability))) {
          transformed = rec;
          transformed.image = std::move(input);
          transformed = apply_classic(transformed, classic_spec, classic_rng);
          input = transformed.image;
          target = &*transformed.mask;
        }
        std::copy(input.data.begin(), input.data.end(), x.begin() + static_cast<std::ptrdiff_t>(b * npix));
        for (std::size_t k = 0; k < npix; ++k) y[b * npix + k] = target->data[k];
      }
      const int N = static_cast<int>(n);
      const Tensor<float> xt({N, 1, H, W}, std::move(x));
      opt.zero_grad();
      const Tensor<float> logits = model->logits(xt);
      Tensor<float> loss = nn::weighted_sum(nn::soft_dice_loss(logits, y), static_cast<float>(config.dice_weight),
                                            nn::bce_with_logits(logits, y), static_cast<float>(config.bce_weight));
      loss.backward();
      opt.step();
      ++step;
      result.loss_history.push_back(loss.item());
    }
    if (config.max_iterations > 0 && step >= config.max_iterations) break;
  }

  Checkpoint& c = result.checkpoint;
  c.kind = "segmentation";
  c.stage = "trained";
  c.config = {{"backbone", to_json(spec)}, {"train", to_json(config)}, {"image_shape", {rows, cols}}};
  c.seed = config.seed;
  c.step = step;
  c.params = export_parameters(model->parameters());
  return result;
}

std::unique_ptr<SegModel> segmentation_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "segmentation") throw CheckpointError("checkpoint holds a " + ckpt.kind + " model, not a segmenter");
  Rng rng(0);
  auto model = make_backbone(backbone_spec_from_json(ckpt.config.at("backbone")), rng);
  import_parameters(model->parameters(), ckpt.params);
  if (ckpt.config.contains("image_shape")) {
    const auto shape = ckpt.config.at("image_shape").get<std::vector<std::size_t>>();
    if (shape.size() == 2) model->input_shape = std::array<std::size_t, 2>{shape[0], shape[1]};
  }
  return model;
}

Image predict_probability(const SegModel& model, const Image& image) {
  if (image.empty()) throw ArgumentError("predict: empty image");
  if (model.input_shape && ((*model.input_shape)[0] != image.rows || (*model.input_shape)[1] != image.cols)) {
    throw ArgumentError("predict: image is " + std::to_string(image.rows) + "x" + std::to_string(image.cols) +
                        ", model was trained at " + std::to_string((*model.input_shape)[0]) + "x" +
                        std::to_string((*model.input_shape)[1]));
  }
  nn::NoGradGuard guard;
  const Tensor<float> x({1, 1, static_cast<int>(image.rows), static_cast<int>(image.cols)}, image.data);
  const Tensor<float> p = nn::sigmoid(model.logits(x));
  return Image(image.rows, image.cols, std::vector<float>(p.values().begin(), p.values().end()));
}

Mask binarize(const Image& probability) {
  Mask m(probability.rows, probability.cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = probability.data[i] >= 0.5f ? 1 : 0;
  return m;
}

Mask predict(const SegModel& model, const Image& image) { return binarize(predict_probability(model, image)); }

std::vector<std::vector<std::size_t>> partition_folds(const std::vector<SampleRecord>& records, int folds,
                                                      std::uint64_t seed) {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (records.size() < static_cast<std::size_t>(folds)) {
    throw ConfigError("cross-validation: " + std::to_string(records.size()) + " images cannot fill " +
                      std::to_string(folds) + " folds");
  }
  std::map<std::string, std::vector<std::size_t>> by_group;
  std::vector<std::string> group_order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& g = by_group[records[i].group_id()];
    if (g.empty()) group_order.push_back(records[i].group_id());
    g.push_back(i);
  }
  if (group_order.size() < static_cast<std::size_t>(folds)) {
    throw ConfigError("cross-validation: fewer source volumes than folds");
  }
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(group_order.begin(), group_order.end());
  std::stable_sort(group_order.begin(), group_order.end(),
                   [&](const auto& a, const auto& b) { return by_group[a].size() > by_group[b].size(); });
  std::vector<std::vector<std::size_t>> out(folds);
  for (const auto& g : group_order) {
    auto smallest = std::min_element(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
    const auto& members = by_group[g];
    smallest->insert(smallest->end(), members.begin(), members.end());
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

CrossValResult cross_validate(const std::vector<SampleRecord>& dataset, const AugmentationCache* cache,
                              const SegBackboneSpec& spec, const SegTrainConfig& config, int seeds,
                              const FoldProgressFn& progress) {
  config.validate();
  if (seeds < 1) throw ConfigError("cross-validation needs at least one seed");
  const auto folds = partition_folds(dataset, config.folds, config.seed);
  const Spacing spacing = dataset.front().spacing;
  CrossValResult out{MetricsReport(MetricSet::kSegmentation, spacing), {}};
  for (int s = 0; s < seeds; ++s) {
    SegTrainConfig cfg = config;
    cfg.seed = derive_seed(config.seed, static_cast<std::uint64_t>(s));
    for (int k = 0; k < config.folds; ++k) {
      FoldRun run{k, s, {}, {}, {}, MetricsReport(MetricSet::kSegmentation, spacing)};
      std::vector<SampleRecord> train, val;
      for (int j = 0; j < config.folds; ++j) {
        for (auto idx : folds[j]) (j == k ? val : train).push_back(dataset[idx]);
      }
      for (const auto& r : train) run.train_ids.push_back(r.case_id);
      for (const auto& r : val) run.val_ids.push_back(r.case_id);
      auto trained = train_segmentation(train, cache, spec, cfg);
      run.loss_history = std::move(trained.loss_history);
      const auto model = segmentation_from_checkpoint(trained.checkpoint);
      for (const auto& r : val) {
        CaseMetrics row = segmentation_case(r.case_id, predict(*model, r.image), *r.mask, r.spacing);
        row.fold = k;
        row.seed_index = s;
        run.report.add(row);
        out.report.add(std::move(row));
      }
      spdlog::debug("cross_validate seed {} fold {}: dice {:.4f}", s, k, run.report.summary("dice").mean);
      if (progress) progress(run);
      out.runs.push_back(std::move(run));
    }
  }
  return out;
}

}  // namespace segdiff
