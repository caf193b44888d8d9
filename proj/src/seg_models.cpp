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

#include "segdiff/seg_models.hpp"

#include <algorithm>
#include <optional>

namespace segdiff {

using nn::Tensor;
using Store = nn::ParameterStore<float>;

namespace {
constexpr std::array<std::string_view, 5> kBackboneNames = {"basic-unet", "residual-unet", "attention-unet",
                                                            "resnet-encoder-unet", "windowed-transformer-unet"};
}  // namespace

std::string_view backbone_name(BackboneKind k) { return kBackboneNames[static_cast<int>(k)]; }

BackboneKind parse_backbone(std::string_view name) {
  const auto it = std::find(kBackboneNames.begin(), kBackboneNames.end(), name);
  if (it == kBackboneNames.end()) throw ConfigError("unknown backbone \"" + std::string(name) + "\"");
  return static_cast<BackboneKind>(it - kBackboneNames.begin());
}

const std::vector<BackboneKind>& all_backbones() {
  static const std::vector<BackboneKind> kinds = {BackboneKind::kBasicUnet, BackboneKind::kResidualUnet,
                                                  BackboneKind::kAttentionUnet, BackboneKind::kResnetEncoderUnet,
                                                  BackboneKind::kWindowedTransformerUnet};
  return kinds;
}

void SegBackboneSpec::validate() const {
  if (width < 1 || depth < 2 || window < 1 || heads < 1) throw ConfigError("backbone: width >= 1, depth >= 2 required");
  if (kind == BackboneKind::kWindowedTransformerUnet && (width % heads) != 0) {
    throw ConfigError("backbone: width must be divisible by the head count");
  }
}

nlohmann::json to_json(const SegBackboneSpec& s) {
  return {{"kind", backbone_name(s.kind)}, {"width", s.width}, {"depth", s.depth}, {"window", s.window}, {"heads", s.heads}};
}

SegBackboneSpec backbone_spec_from_json(const nlohmann::json& j) {
  SegBackboneSpec s;
  s.kind = parse_backbone(j.value("kind", std::string(backbone_name(s.kind))));
  s.width = j.value("width", s.width);
  s.depth = j.value("depth", s.depth);
  s.window = j.value("window", s.window);
  s.heads = j.value("heads", s.heads);
  s.validate();
  return s;
}

namespace {

struct ConvNormAct {
  nn::Conv2d<float> conv;
  nn::GroupNorm<float> norm;
  Tensor<float> operator()(const Tensor<float>& x) const { return nn::relu(norm(conv(x))); }
};

ConvNormAct make_cna(Store& s, const std::string& name, int in, int out, Rng& rng) {
  return {nn::make_conv(s, name + ".conv", in, out, 3, rng), nn::make_group_norm(s, name + ".norm", out)};
}

struct DoubleConv {
  ConvNormAct a, b;
  Tensor<float> operator()(const Tensor<float>& x) const { return b(a(x)); }
};

DoubleConv make_double(Store& s, const std::string& name, int in, int out, Rng& rng) {
  return {make_cna(s, name + ".a", in, out, rng), make_cna(s, name + ".b", out, out, rng)};
}

struct ResidualBlock {
  nn::Conv2d<float> c1, c2;
  nn::GroupNorm<float> n1, n2;
  std::optional<nn::Conv2d<float>> proj;
  Tensor<float> operator()(const Tensor<float>& x) const {
    Tensor<float> h = n2(c2(nn::relu(n1(c1(x)))));
    return nn::relu(nn::add(h, proj ? (*proj)(x) : x));
  }
};

ResidualBlock make_residual(Store& s, const std::string& name, int in, int out, Rng& rng) {
  ResidualBlock b{nn::make_conv(s, name + ".c1", in, out, 3, rng), nn::make_conv(s, name + ".c2", out, out, 3, rng),
                  nn::make_group_norm(s, name + ".n1", out), nn::make_group_norm(s, name + ".n2", out), std::nullopt};
  if (in != out) b.proj = nn::make_conv(s, name + ".proj", in, out, 1, rng);
  return b;
}

struct BottleneckBlock {
  nn::Conv2d<float> reduce, mid, expand;
  nn::GroupNorm<float> n1, n2, n3;
  std::optional<nn::Conv2d<float>> proj;
  Tensor<float> operator()(const Tensor<float>& x) const {
    Tensor<float> h = nn::relu(n1(reduce(x)));
    h = nn::relu(n2(mid(h)));
    h = n3(expand(h));
    return nn::relu(nn::add(h, proj ? (*proj)(x) : x));
  }
};

BottleneckBlock make_bottleneck(Store& s, const std::string& name, int in, int out, Rng& rng) {
  const int m = std::max(4, out / 2);
  BottleneckBlock b{nn::make_conv(s, name + ".reduce", in, m, 1, rng), nn::make_conv(s, name + ".mid", m, m, 3, rng),
                    nn::make_conv(s, name + ".expand", m, out, 1, rng), nn::make_group_norm(s, name + ".n1", m),
                    nn::make_group_norm(s, name + ".n2", m), nn::make_group_norm(s, name + ".n3", out), std::nullopt};
  if (in != out) b.proj = nn::make_conv(s, name + ".proj", in, out, 1, rng);
  return b;
}

struct AttentionGate {
  nn::Conv2d<float> wg, wx, psi;
  Tensor<float> operator()(const Tensor<float>& skip, const Tensor<float>& gate) const {
    const Tensor<float> a = nn::sigmoid(psi(nn::relu(nn::add(wg(gate), wx(skip)))));
    return nn::mul_channel_broadcast(skip, a);
  }
};

AttentionGate make_gate(Store& s, const std::string& name, int gate_ch, int skip_ch, Rng& rng) {
  const int inter = std::max(1, skip_ch / 2);
  return {nn::make_conv(s, name + ".wg", gate_ch, inter, 1, rng), nn::make_conv(s, name + ".wx", skip_ch, inter, 1, rng),
          nn::make_conv(s, name + ".psi", inter, 1, 1, rng)};
}

int level_ch(const SegBackboneSpec& s, int level) { return s.width << level; }

// Decoder shared by every backbone: upsample, optional attention gate on the skip, concat, double conv.
struct Decoder {
  std::vector<DoubleConv> blocks;       // index i for level i (0 .. depth-2)
  std::vector<AttentionGate> gates;     // empty unless gated
  nn::Conv2d<float> head;

  Tensor<float> operator()(Tensor<float> h, const std::vector<Tensor<float>>& skips) const {
    for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i) {
      h = nn::upsample_nearest2(h);
      const Tensor<float> skip = gates.empty() ? skips[i] : gates[i](skips[i], h);
      h = blocks[i](nn::concat_channels(h, skip));
    }
    return head(h);
  }
};

Decoder make_decoder(Store& s, const SegBackboneSpec& spec, bool gated, Rng& rng) {
  Decoder d;
  for (int i = 0; i + 1 < spec.depth; ++i) {
    d.blocks.push_back(make_double(s, "dec" + std::to_string(i), level_ch(spec, i + 1) + level_ch(spec, i),
                                   level_ch(spec, i), rng));
    if (gated) d.gates.push_back(make_gate(s, "gate" + std::to_string(i), level_ch(spec, i + 1), level_ch(spec, i), rng));
  }
  d.head = nn::make_conv(s, "head", level_ch(spec, 0), 1, 1, rng);
  return d;
}

void check_input(const Tensor<float>& x, int depth) {
  if (x.rank() != 4 || x.dim(1) != 1) throw ArgumentError("segmentation input must be [N,1,H,W]");
  const int f = 1 << (depth - 1);
  if (x.dim(2) % f != 0 || x.dim(3) % f != 0) {
    throw ArgumentError("segmentation input size must be divisible by " + std::to_string(f));
  }
}

class ConvUnet final : public SegModel {
 public:
  ConvUnet(const SegBackboneSpec& spec, Rng& rng) : SegModel(spec) {
    const bool residual = spec.kind == BackboneKind::kResidualUnet;
    for (int i = 0; i < spec.depth; ++i) {
      const int in = i == 0 ? 1 : level_ch(spec, i - 1);
      if (residual) {
        res_.push_back(make_residual(store_, "enc" + std::to_string(i), in, level_ch(spec, i), rng));
      } else {
        plain_.push_back(make_double(store_, "enc" + std::to_string(i), in, level_ch(spec, i), rng));
      }
    }
    decoder_ = make_decoder(store_, spec, spec.kind == BackboneKind::kAttentionUnet, rng);
  }

  Tensor<float> logits(const Tensor<float>& x) const override {
    check_input(x, spec_.depth);
    std::vector<Tensor<float>> skips;
    Tensor<float> h = x;
    for (int i = 0; i < spec_.depth; ++i) {
      h = res_.empty() ? plain_[i](h) : res_[i](h);
      if (i + 1 < spec_.depth) {
        skips.push_back(h);
        h = nn::max_pool2(h);
      }
    }
    return decoder_(h, skips);
  }

 private:
  std::vector<DoubleConv> plain_;
  std::vector<ResidualBlock> res_;
  Decoder decoder_;
};

class ResnetEncoderUnet final : public SegModel {
 public:
  ResnetEncoderUnet(const SegBackboneSpec& spec, Rng& rng) : SegModel(spec) {
    stem_ = make_cna(store_, "stem", 1, level_ch(spec, 0), rng);
    for (int i = 0; i < spec.depth; ++i) {
      const int in = level_ch(spec, i == 0 ? 0 : i - 1);
      blocks_.push_back(make_bottleneck(store_, "enc" + std::to_string(i), in, level_ch(spec, i), rng));
    }
    decoder_ = make_decoder(store_, spec, false, rng);
  }

  Tensor<float> logits(const Tensor<float>& x) const override {
    check_input(x, spec_.depth);
    std::vector<Tensor<float>> skips;
    Tensor<float> h = stem_(x);
    for (int i = 0; i < spec_.depth; ++i) {
      h = blocks_[i](h);
      if (i + 1 < spec_.depth) {
        skips.push_back(h);
        h = nn::max_pool2(h);
      }
    }
    return decoder_(h, skips);
  }

 private:
  ConvNormAct stem_;
  std::vector<BottleneckBlock> blocks_;
  Decoder decoder_;
};

// Window partition as a gather over [N, H*W, C] tokens; `shift` rolls the grid first.
std::shared_ptr<const std::vector<int>> window_index(int n, int h, int w, int c, int ws, int shift) {
  auto idx = std::make_shared<std::vector<int>>();
  idx->reserve(static_cast<std::size_t>(n) * h * w * c);
  for (int b = 0; b < n; ++b)
    for (int wy = 0; wy < h / ws; ++wy)
      for (int wx = 0; wx < w / ws; ++wx)
        for (int py = 0; py < ws; ++py)
          for (int px = 0; px < ws; ++px) {
            const int r = (wy * ws + py + shift) % h, col = (wx * ws + px + shift) % w;
            for (int k = 0; k < c; ++k) idx->push_back(((b * h + r) * w + col) * c + k);
          }
  return idx;
}

std::shared_ptr<const std::vector<int>> inverse_index(const std::vector<int>& fwd) {
  auto inv = std::make_shared<std::vector<int>>(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) (*inv)[static_cast<std::size_t>(fwd[i])] = static_cast<int>(i);
  return inv;
}

struct TransformerBlock {
  nn::LayerNorm<float> ln1, ln2;
  nn::Linear<float> q, k, v, proj, fc1, fc2;
  int heads = 1;
  int shift_div = 0;  // 0: regular windows; 2: shifted by half a window

  Tensor<float> operator()(const Tensor<float>& x, int n, int h, int w, int window) const {
    const int c = x.dim(2);
    const int ws = std::min({window, h, w});
    if (h % ws != 0 || w % ws != 0) throw ArgumentError("feature map is not divisible into windows");
    const int shift = shift_div > 0 && ws > 1 ? ws / shift_div : 0;
    const auto fwd = window_index(n, h, w, c, ws, shift);
    const auto inv = inverse_index(*fwd);
    const int nw = n * (h / ws) * (w / ws);
    const Tensor<float> win = nn::gather(ln1(x), fwd, {nw, ws * ws, c});
    const Tensor<float> att = proj(nn::attention(q(win), k(win), v(win), heads));
    Tensor<float> y = nn::add(x, nn::gather(att, inv, {n, h * w, c}));
    return nn::add(y, fc2(nn::silu(fc1(ln2(y)))));
  }
};

TransformerBlock make_transformer(Store& s, const std::string& name, int c, int heads, int shift_div, Rng& rng) {
  return {nn::make_layer_norm(s, name + ".ln1", c), nn::make_layer_norm(s, name + ".ln2", c),
          nn::make_linear(s, name + ".q", c, c, rng),   nn::make_linear(s, name + ".k", c, c, rng),
          nn::make_linear(s, name + ".v", c, c, rng),   nn::make_linear(s, name + ".proj", c, c, rng),
          nn::make_linear(s, name + ".fc1", c, 2 * c, rng), nn::make_linear(s, name + ".fc2", 2 * c, c, rng),
          heads, shift_div};
}

class WindowedTransformerUnet final : public SegModel {
 public:
  WindowedTransformerUnet(const SegBackboneSpec& spec, Rng& rng) : SegModel(spec) {
    stem_ = make_cna(store_, "stem", 1, level_ch(spec, 0), rng);
    for (int i = 0; i < spec.depth; ++i) {
      const int c = level_ch(spec, i);
      blocks_.push_back({make_transformer(store_, "enc" + std::to_string(i) + ".w", c, spec.heads, 0, rng),
                         make_transformer(store_, "enc" + std::to_string(i) + ".sw", c, spec.heads, 2, rng)});
      if (i + 1 < spec.depth) {
        down_.push_back(nn::make_conv(store_, "down" + std::to_string(i), c, level_ch(spec, i + 1), 2, rng, 2, 0));
      }
    }
    decoder_ = make_decoder(store_, spec, false, rng);
  }

  Tensor<float> logits(const Tensor<float>& x) const override {
    check_input(x, spec_.depth);
    const int n = x.dim(0);
    std::vector<Tensor<float>> skips;
    Tensor<float> h = stem_(x);
    for (int i = 0; i < spec_.depth; ++i) {
      const int hh = h.dim(2), ww = h.dim(3);
      Tensor<float> t = nn::to_tokens(h);
      t = blocks_[i].first(t, n, hh, ww, spec_.window);
      t = blocks_[i].second(t, n, hh, ww, spec_.window);
      h = nn::from_tokens(t, hh, ww);
      if (i + 1 < spec_.depth) {
        skips.push_back(h);
        h = down_[i](h);
      }
    }
    return decoder_(h, skips);
  }

 private:
  ConvNormAct stem_;
  std::vector<std::pair<TransformerBlock, TransformerBlock>> blocks_;
  std::vector<nn::Conv2d<float>> down_;
  Decoder decoder_;
};

}  // namespace

std::unique_ptr<SegModel> make_backbone(const SegBackboneSpec& spec, Rng& rng) {
  spec.validate();
  switch (spec.kind) {
    case BackboneKind::kBasicUnet:
    case BackboneKind::kResidualUnet:
    case BackboneKind::kAttentionUnet: return std::make_unique<ConvUnet>(spec, rng);
    case BackboneKind::kResnetEncoderUnet: return std::make_unique<ResnetEncoderUnet>(spec, rng);
    case BackboneKind::kWindowedTransformerUnet: return std::make_unique<WindowedTransformerUnet>(spec, rng);
  }
  throw ConfigError("unhandled backbone kind");
}

}  // namespace segdiff
