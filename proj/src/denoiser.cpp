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

#include "segdiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <spdlog/spdlog.h>

namespace segdiff {

using nn::Tensor;

// ---------------------------------------------------------------- config

void DenoiserConfig::validate() const {
  if (base_channels <= 0) throw ConfigError("denoiser: base_channels must be positive");
  if (depth < 2) throw ConfigError("denoiser: depth must be at least 2");
  if (time_embed_dim <= 0 || time_embed_dim % 2 != 0) throw ConfigError("denoiser: time_embed_dim must be positive and even");
  if (text_embed_dim <= 0) throw ConfigError("denoiser: text_embed_dim must be positive");
  if (head_channels <= 0) throw ConfigError("denoiser: head_channels must be positive");
  if (static_cast<int>(edge_branch_channels.size()) != depth) {
    throw ConfigError("denoiser: edge_branch_channels needs one width per level");
  }
  for (int c : edge_branch_channels) {
    if (c <= 0) throw ConfigError("denoiser: edge branch widths must be positive");
  }
}

nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"base_channels", c.base_channels},
          {"depth", c.depth},
          {"time_embed_dim", c.time_embed_dim},
          {"text_embed_dim", c.text_embed_dim},
          {"edge_branch_channels", c.edge_branch_channels},
          {"attention_at_bottleneck", c.attention_at_bottleneck},
          {"head_channels", c.head_channels}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  try {
    c.base_channels = j.value("base_channels", c.base_channels);
    c.depth = j.value("depth", c.depth);
    c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
    c.text_embed_dim = j.value("text_embed_dim", c.text_embed_dim);
    c.edge_branch_channels = j.value("edge_branch_channels", c.edge_branch_channels);
    c.attention_at_bottleneck = j.value("attention_at_bottleneck", c.attention_at_bottleneck);
    c.head_channels = j.value("head_channels", c.head_channels);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("denoiser config: ") + e.what());
  }
  c.validate();
  return c;
}

// Sum over modules, mirroring the constructor:
//   text table            V*D
//   time MLP              2*(d*d + d)
//   conv_in               9*c0 + c0
//   block(i->o)           2i + 9*i*o + o + d*o + o + 2o + 9*o*o + o  [+ i*o + o if i != o]
//   encoder level k       block(c_{k-1} -> c_k), with c_{-1} = c0
//   bottleneck            2 * block(cL -> cL)  [+ 2cL + cL*cL + 2*D*cL + cL*cL + cL with attention]
//   decoder level k       block(in_k -> c_k), in_k = c_k + (k == L ? cL : c_{k+1})
//   head                  2*c0 + 9*c0*H + H
//   edge branch           9*E0 + E0, then per level 9*E_{k-1}*E_k + E_k (E_{-1} = E0) and E_k*c_k + c_k
std::size_t denoiser_parameter_count(const DenoiserConfig& cfg, int vocab_size) {
  cfg.validate();
  using nn::Conv2d;
  using nn::GroupNorm;
  using nn::Linear;
  const int d = cfg.time_embed_dim, D = cfg.text_embed_dim, L = cfg.depth - 1;
  auto block = [&](int in, int out) {
    std::size_t n = GroupNorm<float>::count(in) + Conv2d<float>::count(in, out, 3) + Linear<float>::count(d, out) +
                    GroupNorm<float>::count(out) + Conv2d<float>::count(out, out, 3);
    if (in != out) n += Conv2d<float>::count(in, out, 1);
    return n;
  };
  std::size_t n = static_cast<std::size_t>(vocab_size) * D;
  n += 2 * Linear<float>::count(d, d);
  n += Conv2d<float>::count(1, cfg.level_channels(0), 3);
  for (int k = 0; k <= L; ++k) n += block(cfg.level_channels(k == 0 ? 0 : k - 1), cfg.level_channels(k));
  const int cL = cfg.level_channels(L);
  n += 2 * block(cL, cL);
  if (cfg.attention_at_bottleneck) {
    n += GroupNorm<float>::count(cL) + Linear<float>::count(cL, cL, false) + 2 * Linear<float>::count(D, cL, false) +
         Linear<float>::count(cL, cL);
  }
  for (int k = L; k >= 0; --k) {
    const int in = cfg.level_channels(k) + (k == L ? cL : cfg.level_channels(k + 1));
    n += block(in, cfg.level_channels(k));
  }
  n += GroupNorm<float>::count(cfg.level_channels(0)) + Conv2d<float>::count(cfg.level_channels(0), cfg.head_channels, 3);
  const auto& E = cfg.edge_branch_channels;
  n += Conv2d<float>::count(1, E[0], 3);
  for (int k = 0; k <= L; ++k) {
    n += Conv2d<float>::count(k == 0 ? E[0] : E[k - 1], E[k], 3);
    n += Conv2d<float>::count(E[k], cfg.level_channels(k), 1);
  }
  return n;
}

// ---------------------------------------------------------------- model

template <class T>
typename DualBranchDenoiser<T>::ResBlock DualBranchDenoiser<T>::make_block(const std::string& name, int in, int out,
                                                                           Rng& rng) {
  ResBlock b;
  b.norm1 = nn::make_group_norm(store_, name + ".norm1", in);
  b.conv1 = nn::make_conv(store_, name + ".conv1", in, out, 3, rng);
  b.time_proj = nn::make_linear(store_, name + ".time", config_.time_embed_dim, out, rng);
  b.norm2 = nn::make_group_norm(store_, name + ".norm2", out);
  b.conv2 = nn::make_conv(store_, name + ".conv2", out, out, 3, rng);
  if (in != out) b.skip = nn::make_conv(store_, name + ".skip", in, out, 1, rng);
  return b;
}

template <class T>
Tensor<T> DualBranchDenoiser<T>::ResBlock::operator()(const Tensor<T>& x, const Tensor<T>& temb) const {
  Tensor<T> h = conv1(nn::silu(norm1(x)));
  h = nn::add_channel_bias(h, time_proj(temb));
  h = conv2(nn::silu(norm2(h)));
  return nn::add(skip ? (*skip)(x) : x, h);
}

template <class T>
DualBranchDenoiser<T>::DualBranchDenoiser(DenoiserConfig config, Vocabulary vocab, Rng& rng)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  const int d = config_.time_embed_dim, D = config_.text_embed_dim, L = config_.depth - 1;
  auto ch = [&](int k) { return config_.level_channels(k); };

  text_table_ = store_.normal("text.table", {vocab_.size(), D}, T(1), rng);
  time_fc1_ = nn::make_linear(store_, "main.time.fc1", d, d, rng);
  time_fc2_ = nn::make_linear(store_, "main.time.fc2", d, d, rng);
  conv_in_ = nn::make_conv(store_, "main.conv_in", 1, ch(0), 3, rng);
  for (int k = 0; k <= L; ++k) {
    down_.push_back(make_block("main.down" + std::to_string(k), ch(k == 0 ? 0 : k - 1), ch(k), rng));
  }
  mid1_ = make_block("main.mid1", ch(L), ch(L), rng);
  if (config_.attention_at_bottleneck) {
    CrossAttention a;
    a.norm = nn::make_group_norm(store_, "main.attn.norm", ch(L));
    a.q = nn::make_linear(store_, "main.attn.q", ch(L), ch(L), rng, false);
    a.k = nn::make_linear(store_, "main.attn.k", D, ch(L), rng, false);
    a.v = nn::make_linear(store_, "main.attn.v", D, ch(L), rng, false);
    a.out = nn::make_linear(store_, "main.attn.out", ch(L), ch(L), rng);
    attn_ = std::move(a);
  }
  mid2_ = make_block("main.mid2", ch(L), ch(L), rng);
  for (int k = L; k >= 0; --k) {
    const int in = ch(k) + (k == L ? ch(L) : ch(k + 1));
    up_.push_back(make_block("main.up" + std::to_string(k), in, ch(k), rng));
  }
  head_norm_ = nn::make_group_norm(store_, "main.head.norm", ch(0));
  head_conv_ = nn::make_conv(store_, "main.head.conv", ch(0), config_.head_channels, 3, rng);

  const auto& E = config_.edge_branch_channels;
  edge_in_ = nn::make_conv(store_, "edge.in", 1, E[0], 3, rng);
  for (int k = 0; k <= L; ++k) {
    edge_convs_.push_back(nn::make_conv(store_, "edge.conv" + std::to_string(k), k == 0 ? E[0] : E[k - 1], E[k], 3, rng));
    fuse_.push_back(nn::make_conv(store_, "edge.fuse" + std::to_string(k), E[k], ch(k), 1, rng, 1, 0, /*zero=*/true));
  }
}

template <class T>
Tensor<T> DualBranchDenoiser<T>::time_embedding(const std::vector<int>& steps) const {
  const int half = config_.time_embed_dim / 2;
  std::vector<T> v;
  v.reserve(steps.size() * config_.time_embed_dim);
  for (int t : steps) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      v.push_back(static_cast<T>(std::sin(t * freq)));
    }
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      v.push_back(static_cast<T>(std::cos(t * freq)));
    }
  }
  Tensor<T> emb({static_cast<int>(steps.size()), config_.time_embed_dim}, std::move(v));
  return nn::silu(time_fc2_(nn::silu(time_fc1_(emb))));
}

template <class T>
Tensor<T> DualBranchDenoiser<T>::run(const Tensor<T>& xt, const std::vector<int>& steps, const Tensor<T>& text,
                                     const std::vector<int>& text_lengths, const Tensor<T>& edge) const {
  if (xt.rank() != 4 || xt.dim(1) != 1) throw ArgumentError("denoiser: xt must be [N,1,H,W]");
  if (edge.shape() != xt.shape()) {
    throw ArgumentError("denoiser: edge shape " + nn::shape_str(edge.shape()) + " does not match xt shape " +
                        nn::shape_str(xt.shape()));
  }
  const int N = xt.dim(0), H = xt.dim(2), W = xt.dim(3), L = config_.depth - 1;
  if (static_cast<int>(steps.size()) != N) throw ArgumentError("denoiser: one step index per sample is required");
  for (int t : steps) {
    if (t < 1) throw ArgumentError("denoiser: step index must be at least 1");
  }
  const int factor = 1 << L;
  if (H % factor != 0 || W % factor != 0) {
    throw ArgumentError("denoiser: spatial size must be divisible by " + std::to_string(factor));
  }

  const Tensor<T> temb = time_embedding(steps);

  Tensor<T> e = nn::silu(edge_in_(edge));
  Tensor<T> h = conv_in_(xt);
  std::vector<Tensor<T>> skips;
  for (int k = 0; k <= L; ++k) {
    const Tensor<T> ek = nn::silu(edge_convs_[k](e));
    h = down_[k](h, temb);
    h = nn::add(h, fuse_[k](ek));
    skips.push_back(h);
    if (k < L) {
      h = nn::avg_pool2(h);
      e = nn::avg_pool2(ek);
    }
  }

  h = mid1_(h, temb);
  if (attn_) {
    const int hh = h.dim(2), ww = h.dim(3);
    const Tensor<T> tokens = nn::to_tokens(attn_->norm(h));
    const Tensor<T> a = nn::attention(attn_->q(tokens), attn_->k(text), attn_->v(text), 1, text_lengths);
    h = nn::add(h, nn::from_tokens(attn_->out(a), hh, ww));
  }
  h = mid2_(h, temb);

  for (int k = L; k >= 0; --k) {
    h = up_[L - k](nn::concat_channels(h, skips[k]), temb);
    if (k > 0) h = nn::upsample_nearest2(h);
  }
  Tensor<T> out = nn::channel_mean(head_conv_(nn::silu(head_norm_(h))));
  if (out.shape() != xt.shape()) throw ContractViolation("denoiser output shape differs from its input");
  (void)N;
  (void)H;
  (void)W;
  return out;
}

template <class T>
Tensor<T> DualBranchDenoiser<T>::forward(const Tensor<T>& xt, const std::vector<int>& steps,
                                         const std::vector<std::vector<int>>& tokens, const Tensor<T>& edge) const {
  const int N = static_cast<int>(tokens.size()), D = config_.text_embed_dim;
  if (N == 0) throw ArgumentError("denoiser: empty batch");
  std::size_t max_len = 0;
  for (const auto& t : tokens) max_len = std::max(max_len, t.size());
  if (max_len == 0) throw ArgumentError("denoiser: every prompt needs at least one token");
  auto index = std::make_shared<std::vector<int>>();
  index->reserve(N * max_len * D);
  std::vector<int> lengths;
  for (const auto& seq : tokens) {
    if (seq.empty()) throw ArgumentError("denoiser: every prompt needs at least one token");
    lengths.push_back(static_cast<int>(seq.size()));
    for (std::size_t l = 0; l < max_len; ++l) {
      const int id = l < seq.size() ? seq[l] : 0;  // padded keys are masked
      if (id < 0 || id >= vocab_.size()) throw ArgumentError("denoiser: token id out of range");
      for (int c = 0; c < D; ++c) index->push_back(id * D + c);
    }
  }
  const Tensor<T> text = nn::gather(text_table_, index, {N, static_cast<int>(max_len), D});
  return run(xt, steps, text, lengths, edge);
}

template <class T>
Tensor<T> DualBranchDenoiser<T>::forward(const Tensor<T>& xt, const std::vector<int>& steps,
                                         const std::vector<TextEmbedding>& text, const Tensor<T>& edge) const {
  const int N = static_cast<int>(text.size()), D = config_.text_embed_dim;
  if (N == 0) throw ArgumentError("denoiser: empty batch");
  std::size_t max_len = 0;
  for (const auto& t : text) {
    if (t.dim != D) throw ArgumentError("denoiser: text embedding width does not match the model");
    if (t.vectors.empty()) throw ArgumentError("denoiser: every prompt needs at least one token");
    max_len = std::max(max_len, t.vectors.size());
  }
  std::vector<T> v(static_cast<std::size_t>(N) * max_len * D, T(0));
  std::vector<int> lengths;
  for (int b = 0; b < N; ++b) {
    lengths.push_back(static_cast<int>(text[b].vectors.size()));
    for (std::size_t l = 0; l < text[b].vectors.size(); ++l) {
      std::copy(text[b].vectors[l].begin(), text[b].vectors[l].end(), v.begin() + (b * max_len + l) * D);
    }
  }
  const Tensor<T> t({N, static_cast<int>(max_len), D}, std::move(v));
  return run(xt, steps, t, lengths, edge);
}

template <class T>
Grid<T> DualBranchDenoiser<T>::predict(const Grid<T>& xt, int step, const TextEmbedding& text,
                                       const EdgeMap& edge) const {
  require_same_shape(xt, edge, "denoiser predict");
  nn::NoGradGuard guard;
  const auto out = forward(stack_grids<T>(std::vector<Grid<T>>{xt}), {step}, std::vector<TextEmbedding>{text},
                           stack_grids<T>(std::vector<EdgeMap>{edge}));
  return unstack_grids(out)[0];
}

template <class T>
std::vector<Tensor<T>> DualBranchDenoiser<T>::trainable(bool edge_only) const {
  std::vector<Tensor<T>> out;
  for (const auto& p : store_.entries()) {
    if (!edge_only || p.name.rfind("edge.", 0) == 0) out.push_back(p.tensor);
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> DualBranchDenoiser<T>::fusion_parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& f : fuse_) {
    out.push_back(f.weight);
    out.push_back(f.bias);
  }
  return out;
}

template <class T>
EmbeddingTable DualBranchDenoiser<T>::embedding_table() const {
  EmbeddingTable t{vocab_, config_.text_embed_dim, {}};
  for (T v : text_table_.data()) t.values.push_back(static_cast<float>(v));
  return t;
}

template class DualBranchDenoiser<float>;
template class DualBranchDenoiser<double>;

// ---------------------------------------------------------------- training

std::string_view stage_tag(TrainingStage s) { return s == TrainingStage::kPretrain ? "pretrained" : "finetuned"; }

DiffusionTrainConfig DiffusionTrainConfig::pretrain_defaults() {
  DiffusionTrainConfig c;
  c.stage = TrainingStage::kPretrain;
  c.learning_rate = 1e-5;
  return c;
}

DiffusionTrainConfig DiffusionTrainConfig::finetune_defaults() {
  DiffusionTrainConfig c;
  c.stage = TrainingStage::kFinetune;
  c.learning_rate = 1e-6;
  c.epochs = 100;
  return c;
}

Checkpoint make_denoiser_checkpoint(const DualBranchDenoiser<float>& model, const NoiseSchedule& schedule,
                                    std::string_view stage, std::uint64_t seed, std::int64_t step) {
  Checkpoint c;
  c.kind = "denoiser";
  c.stage = std::string(stage);
  c.config = to_json(model.config());
  c.schedule = schedule;
  c.vocab_hash = model.vocab().hash();
  c.seed = seed;
  c.step = step;
  c.params = export_parameters(model.parameters());
  return c;
}

DualBranchDenoiser<float> denoiser_from_checkpoint(const Checkpoint& ckpt, const Vocabulary& vocab) {
  if (ckpt.kind != "denoiser") throw CheckpointError("checkpoint holds a " + ckpt.kind + " model, not a denoiser");
  if (ckpt.vocab_hash != vocab.hash()) {
    throw CheckpointError("vocabulary hash mismatch: checkpoint " + hex64(ckpt.vocab_hash) + ", vocabulary " +
                          hex64(vocab.hash()));
  }
  Rng rng(0);
  DualBranchDenoiser<float> model(denoiser_config_from_json(ckpt.config), vocab, rng);
  import_parameters(model.parameters(), ckpt.params);
  return model;
}

namespace {
void clip_grad_norm(std::vector<Tensor<float>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const auto s = static_cast<float>(max_norm / norm);
  for (auto& p : params) {
    if (p.grad().empty()) continue;
    for (float& g : p.mutable_grad()) g *= s;
  }
}
}  // namespace

DiffusionTrainResult train_diffusion(const std::vector<SampleRecord>& dataset, const DenoiserConfig& model_config,
                                     const Vocabulary& vocab, const NoiseSchedule& schedule,
                                     const DiffusionTrainConfig& tc, const Checkpoint* init,
                                     const ProgressFn& progress) {
  const bool finetune = tc.stage == TrainingStage::kFinetune;
  if (finetune && init == nullptr) throw ConfigError("finetuning requires a pretrained checkpoint");
  if (init && finetune && init->stage != "pretrained") {
    throw ConfigError("finetuning must start from a pretrained checkpoint, got stage \"" + init->stage + "\"");
  }
  if (dataset.empty()) throw ArgumentError("train_diffusion: empty dataset");
  if (tc.batch_size <= 0 || tc.epochs < 0 || tc.learning_rate <= 0.0) {
    throw ConfigError("train_diffusion: batch_size and learning_rate must be positive");
  }

  // Per-record inputs in the internal range, with stage-specific edge maps and prompts.
  struct Item {
    std::vector<float> x0;
    std::vector<float> edge;
    std::vector<int> tokens;
  };
  std::vector<Item> items;
  items.reserve(dataset.size());
  const std::size_t rows = dataset[0].image.rows, cols = dataset[0].image.cols;
  for (const auto& r : dataset) {
    r.validate();
    if (r.image.rows != rows || r.image.cols != cols) throw ValidationError("train_diffusion: images differ in shape");
    Item it;
    it.x0 = to_internal_range(r.image).data;
    if (finetune) {
      if (!r.mask) throw ValidationError("finetuning record " + r.case_id + " has no mask");
      it.edge = edges_from_mask(*r.mask).data;
    } else {
      it.edge = extract_edges(r.image, tc.edges).data;
    }
    PromptTriplet p = r.triplet;
    if (finetune && !tc.keep_aug_tokens) p.aug_texts.clear();
    it.tokens = token_ids(p, vocab);
    items.push_back(std::move(it));
  }

  Rng init_rng(derive_seed(tc.seed, "denoiser-init"));
  DualBranchDenoiser<float> model = [&] {
    if (!init) return DualBranchDenoiser<float>(model_config, vocab, init_rng);
    auto m = denoiser_from_checkpoint(*init, vocab);
    if (!(m.config() == model_config)) throw ConfigError("init checkpoint was trained with a different model config");
    return m;
  }();

  auto params = model.trainable(tc.freeze_main);
  nn::AdamW<float> opt(params, {tc.learning_rate, 0.9, 0.999, 1e-8, tc.weight_decay});
  Rng order_rng(derive_seed(tc.seed, "denoiser-order"));
  Rng noise_rng(derive_seed(tc.seed, "denoiser-noise"));

  const int H = static_cast<int>(rows), W = static_cast<int>(cols);
  const std::size_t npix = rows * cols;
  DiffusionTrainResult result;
  long long step = 0;
  std::vector<std::size_t> order(items.size());
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      if (tc.max_iterations > 0 && step >= tc.max_iterations) break;
      const std::size_t n = std::min<std::size_t>(tc.batch_size, order.size() - start);
      std::vector<float> xt(n * npix), eps(n * npix), edge(n * npix);
      std::vector<int> steps(n);
      std::vector<std::vector<int>> tokens(n);
      for (std::size_t b = 0; b < n; ++b) {
        const Item& it = items[order[start + b]];
        steps[b] = 1 + static_cast<int>(noise_rng.index(static_cast<std::size_t>(schedule.steps())));
        for (std::size_t k = 0; k < npix; ++k) eps[b * npix + k] = static_cast<float>(noise_rng.normal());
        detail::q_sample_into<float>(it.x0, std::span<const float>(eps).subspan(b * npix, npix),
                                     schedule.alpha_bar(steps[b]), std::span<float>(xt).subspan(b * npix, npix));
        std::copy(it.edge.begin(), it.edge.end(), edge.begin() + static_cast<std::ptrdiff_t>(b * npix));
        tokens[b] = it.tokens;
      }
      const int N = static_cast<int>(n);
      Tensor<float> xt_t({N, 1, H, W}, std::move(xt));
      Tensor<float> eps_t({N, 1, H, W}, std::move(eps));
      Tensor<float> edge_t({N, 1, H, W}, std::move(edge));
      opt.zero_grad();
      Tensor<float> loss = nn::mse_loss(model.forward(xt_t, steps, tokens, edge_t), eps_t);
      loss.backward();
      if (tc.grad_clip > 0.0) clip_grad_norm(params, tc.grad_clip);
      opt.step();
      ++step;
      result.loss_history.push_back(loss.item());
      if (progress) progress(step, loss.item());
    }
    if (tc.max_iterations > 0 && step >= tc.max_iterations) break;
  }
  spdlog::debug("train_diffusion[{}]: {} steps", stage_tag(tc.stage), step);
  const std::int64_t base_step = init ? init->step : 0;
  result.checkpoint = make_denoiser_checkpoint(model, schedule, stage_tag(tc.stage), tc.seed, base_step + step);
  return result;
}

std::vector<Image> generate_images(const DualBranchDenoiser<float>& model, const NoiseSchedule& schedule,
                                   const std::vector<GenerationRequest>& requests, int batch_size) {
  if (batch_size <= 0) throw ArgumentError("generate_images: batch_size must be positive");
  const EmbeddingTable table = model.embedding_table();
  std::vector<Image> out;
  out.reserve(requests.size());
  for (std::size_t start = 0; start < requests.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, requests.size() - start);
    std::vector<TextEmbedding> text;
    std::vector<EdgeMap> edges;
    std::vector<Rng> rngs;
    for (std::size_t b = 0; b < n; ++b) {
      const auto& r = requests[start + b];
      require_same_shape(r.edge, requests[start].edge, "generate_images");
      text.push_back(encode_prompt(r.prompt, table));
      edges.push_back(r.edge);
      rngs.emplace_back(r.seed);
    }
    const Tensor<float> edge_t = stack_grids<float>(edges);
    auto denoise = [&](const std::vector<Image>& xs, int t) {
      nn::NoGradGuard guard;
      return unstack_grids(model.forward(stack_grids<float>(xs), std::vector<int>(xs.size(), t), text, edge_t));
    };
    auto batch = ancestral_sample_batch<float>(denoise, schedule, requests[start].edge.rows, requests[start].edge.cols,
                                               std::span<Rng>(rngs));
    for (auto& g : batch) out.push_back(std::move(g));
  }
  return out;
}

}  // namespace segdiff
