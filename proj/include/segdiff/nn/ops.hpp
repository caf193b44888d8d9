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

// Differentiable ops. Image tensors are NCHW; sequence tensors are [B, L, D].

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "segdiff/nn/tensor.hpp"

namespace segdiff::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError(what);
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) throw ArgumentError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

template <class T>
Node<T>* parent(Node<T>& out, std::size_t i) {
  return out.parents[i].get();
}

template <class T>
void im2col(const T* img, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* col) {
  const int out_hw = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * out_hw;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) {
            std::fill(row + oy * out_w, row + (oy + 1) * out_w, T(0));
            continue;
          }
          const T* src = img + (c * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * out_w + ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* img) {
  const int out_hw = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * out_hw;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          T* dst = img + (c * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

template <class T, class F, class G>
Tensor<T> unary(const Tensor<T>& x, F&& f, G&& dfdx_from_xy) {
  Buffer<T> y(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(y), {x}, [dfdx_from_xy](Node<T>& out) {
    Node<T>* a = parent(out, 0);
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i] * dfdx_from_xy(a->value[i], out.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(y), {a, b}, [](Node<T>& out) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node<T>* n = detail::parent(out, p);
      if (!n->requires_grad) continue;
      auto& g = n->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  Buffer<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(y), {a, b}, [](Node<T>& out) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node<T>* n = detail::parent(out, p);
      if (!n->requires_grad) continue;
      auto& g = n->ensure_grad();
      const T sign = p == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * out.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  Buffer<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(y), {a, b}, [](Node<T>& out) {
    Node<T>* na = detail::parent(out, 0);
    Node<T>* nb = detail::parent(out, 1);
    if (na->requires_grad) {
      auto& g = na->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * nb->value[i];
    }
    if (nb->requires_grad) {
      auto& g = nb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * na->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(), "reshape: element count mismatch");
  return make_result<T>(std::move(shape), x.values(), {x}, [](Node<T>& out) {
    Node<T>* a = detail::parent(out, 0);
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

/// out[i] = x[index[i]]; gradients scatter-add back. Covers transposes, window
/// partitions, rolls and embedding lookups.
template <class T>
Tensor<T> gather(const Tensor<T>& x, std::shared_ptr<const std::vector<int>> index, Shape shape) {
  detail::require(shape_numel(shape) == index->size(), "gather: index size does not match output shape");
  Buffer<T> y(index->size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[static_cast<std::size_t>((*index)[i])];
  return make_result<T>(std::move(shape), std::move(y), {x}, [index](Node<T>& out) {
    Node<T>* a = detail::parent(out, 0);
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (std::size_t i = 0; i < index->size(); ++i) g[static_cast<std::size_t>((*index)[i])] += out.grad[i];
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  return make_result<T>({1}, {static_cast<T>(acc) * inv}, {x}, [inv](Node<T>& out) {
    Node<T>* a = detail::parent(out, 0);
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (auto& v : g) v += out.grad[0] * inv;
  });
}

template <class T>
Tensor<T> weighted_sum(const Tensor<T>& a, T wa, const Tensor<T>& b, T wb) {
  return add(scale(a, wa), scale(b, wb));
}

/// Mean of (pred - target)^2 over all elements; target is treated as a constant.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require(pred.shape() == target.shape(), "mse_loss: shape mismatch");
  double acc = 0.0;
  const auto p = pred.data();
  const auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += d * d;
  }
  const T inv = T(1) / static_cast<T>(pred.numel());
  Buffer<T> target_copy(t.begin(), t.end());
  return make_result<T>({1}, {static_cast<T>(acc / static_cast<double>(pred.numel()))}, {pred},
                        [inv, target_copy = std::move(target_copy)](Node<T>& out) {
                          Node<T>* a = detail::parent(out, 0);
                          if (!a->requires_grad) return;
                          auto& g = a->ensure_grad();
                          const T k = T(2) * inv * out.grad[0];
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (a->value[i] - target_copy[i]);
                        });
}

/// Mean binary cross-entropy on logits against {0,1} targets.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<T>& target) {
  detail::require(logits.numel() == target.size(), "bce_with_logits: size mismatch");
  double acc = 0.0;
  const auto z = logits.data();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z[i];
    acc += std::max(v, 0.0) - v * target[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const T inv = T(1) / static_cast<T>(z.size());
  return make_result<T>({1}, {static_cast<T>(acc / static_cast<double>(z.size()))}, {logits},
                        [inv, target](Node<T>& out) {
                          Node<T>* a = detail::parent(out, 0);
                          if (!a->requires_grad) return;
                          auto& g = a->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T s = T(1) / (T(1) + std::exp(-a->value[i]));
                            g[i] += out.grad[0] * inv * (s - target[i]);
                          }
                        });
}

/// 1 - soft Dice on sigmoid(logits), computed per sample over [N, ...] and averaged.
template <class T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, const std::vector<T>& target, T smooth = T(1)) {
  detail::require(logits.numel() == target.size(), "soft_dice_loss: size mismatch");
  const int n = logits.dim(0);
  const std::size_t per = logits.numel() / static_cast<std::size_t>(n);
  Buffer<T> prob(logits.numel());
  for (std::size_t i = 0; i < prob.size(); ++i) prob[i] = T(1) / (T(1) + std::exp(-logits.data()[i]));
  std::vector<double> inter(n, 0.0), denom(n, 0.0);
  double loss = 0.0;
  for (int b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = b * per + i;
      inter[b] += prob[k] * target[k];
      denom[b] += prob[k] + target[k];
    }
    loss += 1.0 - (2.0 * inter[b] + smooth) / (denom[b] + smooth);
  }
  loss /= n;
  return make_result<T>({1}, {static_cast<T>(loss)}, {logits},
                        [n, per, smooth, prob = std::move(prob), inter, denom, target](Node<T>& out) {
                          Node<T>* a = detail::parent(out, 0);
                          if (!a->requires_grad) return;
                          auto& g = a->ensure_grad();
                          for (int b = 0; b < n; ++b) {
                            const double num = 2.0 * inter[b] + smooth;
                            const double den = denom[b] + smooth;
                            for (std::size_t i = 0; i < per; ++i) {
                              const std::size_t k = b * per + i;
                              // d(loss_b)/dp = -(2 g den - num) / den^2
                              const double dp = -(2.0 * target[k] * den - num) / (den * den);
                              g[k] += static_cast<T>(out.grad[0] / n * dp * prob[k] * (1.0 - prob[k]));
                            }
                          }
                        });
}

// ---------------------------------------------------------------- dense layers

/// y = x W^T + b over the last dimension; W is [out, in], b is [out] (optional).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b) {
  const int in = w.dim(1);
  const int outf = w.dim(0);
  detail::require(x.shape().back() == in, "linear: input width " + std::to_string(x.shape().back()) +
                                              " does not match weight " + shape_str(w.shape()));
  const int rows = static_cast<int>(x.numel() / in);
  Shape shape = x.shape();
  shape.back() = outf;
  Buffer<T> y(static_cast<std::size_t>(rows) * outf);
  detail::MatMap<T> Y(y.data(), rows, outf);
  detail::ConstMatMap<T> X(x.data().data(), rows, in);
  detail::ConstMatMap<T> W(w.data().data(), outf, in);
  Y.noalias() = X * W.transpose();
  if (b) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < outf; ++c) y[r * outf + c] += b->data()[c];
  }
  auto backward = [rows, in, outf, has_bias = b != nullptr](Node<T>& out) {
    Node<T>* nx = detail::parent(out, 0);
    Node<T>* nw = detail::parent(out, 1);
    detail::ConstMatMap<T> G(out.grad.data(), rows, outf);
    if (nx->requires_grad) {
      detail::MatMap<T> GX(nx->ensure_grad().data(), rows, in);
      GX.noalias() += G * detail::ConstMatMap<T>(nw->value.data(), outf, in);
    }
    if (nw->requires_grad) {
      detail::MatMap<T> GW(nw->ensure_grad().data(), outf, in);
      GW.noalias() += G.transpose() * detail::ConstMatMap<T>(nx->value.data(), rows, in);
    }
    if (has_bias) {
      Node<T>* nb = detail::parent(out, 2);
      if (nb->requires_grad) {
        auto& gb = nb->ensure_grad();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < outf; ++c) gb[c] += out.grad[r * outf + c];
      }
    }
  };
  if (b) return make_result<T>(std::move(shape), std::move(y), {x, w, *b}, backward);
  return make_result<T>(std::move(shape), std::move(y), {x, w}, backward);
}

/// 2D convolution; x [N,C,H,W], w [O,C,k,k], b [O].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  detail::require_rank(x.shape(), 4, "conv2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  detail::require(w.dim(1) == c, "conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                                     std::to_string(w.dim(1)));
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (wd + 2 * pad - k) / stride + 1;
  const int ckk = c * k * k;
  const int ohw = oh * ow;
  Buffer<T> y(static_cast<std::size_t>(n) * o * ohw);
  Buffer<T> col(static_cast<std::size_t>(ckk) * ohw);
  detail::ConstMatMap<T> W(w.data().data(), o, ckk);
  for (int i = 0; i < n; ++i) {
    detail::im2col(x.data().data() + static_cast<std::size_t>(i) * c * h * wd, c, h, wd, k, stride, pad, oh, ow,
                   col.data());
    detail::MatMap<T> Y(y.data() + static_cast<std::size_t>(i) * o * ohw, o, ohw);
    Y.noalias() = W * detail::ConstMatMap<T>(col.data(), ckk, ohw);
    for (int oc = 0; oc < o; ++oc) Y.row(oc).array() += b.data()[oc];
  }
  return make_result<T>({n, o, oh, ow}, std::move(y), {x, w, b}, [=](Node<T>& out) {
    Node<T>* nx = detail::parent(out, 0);
    Node<T>* nw = detail::parent(out, 1);
    Node<T>* nb = detail::parent(out, 2);
    Buffer<T> colbuf(static_cast<std::size_t>(ckk) * ohw);
    Buffer<T> dcol(nx->requires_grad ? colbuf.size() : 0);
    detail::ConstMatMap<T> Wm(nw->value.data(), o, ckk);
    for (int i = 0; i < n; ++i) {
      detail::ConstMatMap<T> G(out.grad.data() + static_cast<std::size_t>(i) * o * ohw, o, ohw);
      if (nw->requires_grad) {
        detail::im2col(nx->value.data() + static_cast<std::size_t>(i) * c * h * wd, c, h, wd, k, stride, pad, oh, ow,
                       colbuf.data());
        detail::MatMap<T> GW(nw->ensure_grad().data(), o, ckk);
        GW.noalias() += G * detail::ConstMatMap<T>(colbuf.data(), ckk, ohw).transpose();
      }
      if (nb->requires_grad) {
        auto& gb = nb->ensure_grad();
        for (int oc = 0; oc < o; ++oc) gb[oc] += G.row(oc).sum();
      }
      if (nx->requires_grad) {
        detail::MatMap<T> DC(dcol.data(), ckk, ohw);
        DC.noalias() = Wm.transpose() * G;
        detail::col2im(dcol.data(), c, h, wd, k, stride, pad, oh, ow,
                       nx->ensure_grad().data() + static_cast<std::size_t>(i) * c * h * wd);
      }
    }
  });
}

// ---------------------------------------------------------------- spatial

template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "avg_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  detail::require(h % 2 == 0 && w % 2 == 0, "avg_pool2: spatial size must be even");
  const int oh = h / 2, ow = w / 2;
  Buffer<T> y(static_cast<std::size_t>(n) * c * oh * ow);
  const auto xv = x.data();
  for (int p = 0; p < n * c; ++p)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const T* s = xv.data() + (static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j;
        y[(static_cast<std::size_t>(p) * oh + i) * ow + j] = (s[0] + s[1] + s[w] + s[w + 1]) * T(0.25);
      }
  return make_result<T>({n, c, oh, ow}, std::move(y), {x}, [=](Node<T>& out) {
    Node<T>* a = detail::parent(out, 0);
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (int p = 0; p < n * c; ++p)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const T d = out.grad[(static_cast<std::size_t>(p) * oh + i) * ow + j] * T(0.25);
          T* s = g.data() + (static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j;
          s[0] += d;
          s[1] += d;
          s[w] += d;
          s[w + 1] += d;
        }
  });
}

template <class T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "max_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  detail::require(h % 2 == 0 && w % 2 == 0, "max_pool2: spatial size must be even");
  const int oh = h / 2, ow = w / 2;
  Buffer<T> y(static_cast<std::size_t>(n) * c * oh * ow);
  auto argmax = std::make_shared<std::vector<int>>(y.size());
  const auto xv = x.data();
  for (int p = 0; p < n * c; ++p)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const std::size_t base = (static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j;
        std::size_t best = base;
        for (std::size_t cand : {base + 1, base + w, base + w + 1})
          if (xv[cand] > xv[best]) best = cand;
        const std::size_t o = (static_cast<std::size_t>(p) * oh + i) * ow + j;
        y[o] = xv[best];
        (*argmax)[o] = static_cast<int>(best);
      }
  return make_result<T>({n, c, oh, ow}, std::move(y), {x}, [argmax](Node<T>& out) {
    Node<T>* a = detail::parent(out, 0);
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += out.grad[o];
  });
}

template <class T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "upsample_nearest2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  Buffer<T> y(static_cast<std::size_t>(n) * c * oh * ow);
  const auto xv = x.data();
  for (int p = 0; p < n * c; ++p)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        y[(static_cast<std::size_t>(p) * oh + i) * ow + j] = xv[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2];
  return make_result<T>({n, c, oh, ow}, std::move(y), {x}, [=](Node<T>& out) {
    Node<T>* a = detail::parent(out, 0);
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (int p = 0; p < n * c; ++p)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          g[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2] +=
              out.grad[(static_cast<std::size_t>(p) * oh + i) * ow + j];
  });
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 4, "concat_channels");
  detail::require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                  "concat_channels: batch/spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Buffer<T> y(static_cast<std::size_t>(n) * (ca + cb) * hw);
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * hw, ca * hw, y.data() + i * (ca + cb) * hw);
    std::copy_n(b.data().data() + i * cb * hw, cb * hw, y.data() + (i * (ca + cb) + ca) * hw);
  }
  return make_result<T>({n, ca + cb, a.dim(2), a.dim(3)}, std::move(y), {a, b}, [=](Node<T>& out) {
    Node<T>* na = detail::parent(out, 0);
    Node<T>* nb = detail::parent(out, 1);
    for (int i = 0; i < n; ++i) {
      if (na->requires_grad) {
        T* g = na->ensure_grad().data() + i * ca * hw;
        const T* s = out.grad.data() + i * (ca + cb) * hw;
        for (std::size_t k = 0; k < ca * hw; ++k) g[k] += s[k];
      }
      if (nb->requires_grad) {
        T* g = nb->ensure_grad().data() + i * cb * hw;
        const T* s = out.grad.data() + (i * (ca + cb) + ca) * hw;
        for (std::size_t k = 0; k < cb * hw; ++k) g[k] += s[k];
      }
    }
  });
}

/// x [N,C,H,W] + bias [N,C] broadcast over space.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_rank(x.shape(), 4, "add_channel_bias");
  detail::require(bias.rank() == 2 && bias.dim(0) == x.dim(0) && bias.dim(1) == x.dim(1),
                  "add_channel_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  const int nc = x.dim(0) * x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Buffer<T> y(x.values());
  for (int p = 0; p < nc; ++p)
    for (std::size_t k = 0; k < hw; ++k) y[p * hw + k] += bias.data()[p];
  return make_result<T>(x.shape(), std::move(y), {x, bias}, [=](Node<T>& out) {
    Node<T>* nx = detail::parent(out, 0);
    Node<T>* nb = detail::parent(out, 1);
    if (nx->requires_grad) {
      auto& g = nx->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (nb->requires_grad) {
      auto& g = nb->ensure_grad();
      for (int p = 0; p < nc; ++p) {
        T s = 0;
        for (std::size_t k = 0; k < hw; ++k) s += out.grad[p * hw + k];
        g[p] += s;
      }
    }
  });
}

/// x [N,C,H,W] * gate [N,1,H,W] broadcast over channels.
template <class T>
Tensor<T> mul_channel_broadcast(const Tensor<T>& x, const Tensor<T>& gate) {
  detail::require_rank(x.shape(), 4, "mul_channel_broadcast");
  detail::require(gate.dim(0) == x.dim(0) && gate.dim(1) == 1 && gate.dim(2) == x.dim(2) && gate.dim(3) == x.dim(3),
                  "mul_channel_broadcast: gate shape mismatch");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Buffer<T> y(x.numel());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < hw; ++k) y[(i * c + ch) * hw + k] = x.data()[(i * c + ch) * hw + k] * gate.data()[i * hw + k];
  return make_result<T>(x.shape(), std::move(y), {x, gate}, [=](Node<T>& out) {
    Node<T>* nx = detail::parent(out, 0);
    Node<T>* ng = detail::parent(out, 1);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < hw; ++k) {
          const std::size_t idx = (i * c + ch) * hw + k;
          if (nx->requires_grad) nx->ensure_grad()[idx] += out.grad[idx] * ng->value[i * hw + k];
          if (ng->requires_grad) ng->ensure_grad()[i * hw + k] += out.grad[idx] * nx->value[idx];
        }
  });
}

/// Averages over channels: [N,C,H,W] -> [N,1,H,W].
template <class T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "channel_mean");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Buffer<T> y(static_cast<std::size_t>(n) * hw, T(0));
  const T inv = T(1) / static_cast<T>(c);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < hw; ++k) y[i * hw + k] += x.data()[(i * c + ch) * hw + k] * inv;
  return make_result<T>({n, 1, x.dim(2), x.dim(3)}, std::move(y), {x}, [=](Node<T>& out) {
    Node<T>* a = detail::parent(out, 0);
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < hw; ++k) g[(i * c + ch) * hw + k] += out.grad[i * hw + k] * inv;
  });
}

// ---------------------------------------------------------------- normalization

/// Group normalization over [N,C,H,W] with per-channel affine gamma/beta.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int groups, T eps = T(1e-5)) {
  detail::require_rank(x.shape(), 4, "group_norm");
  const int n = x.dim(0), c = x.dim(1);
  detail::require(c % groups == 0, "group_norm: channels not divisible by groups");
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const int cpg = c / groups;
  const std::size_t gsize = cpg * hw;
  Buffer<T> y(x.numel());
  Buffer<T> xhat(x.numel());
  Buffer<T> rstd(static_cast<std::size_t>(n) * groups);
  const auto xv = x.data();
  for (int i = 0; i < n; ++i)
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + g * cpg) * hw;
      double mean = 0.0;
      for (std::size_t k = 0; k < gsize; ++k) mean += xv[base + k];
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t k = 0; k < gsize; ++k) {
        const double d = xv[base + k] - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const T r = static_cast<T>(1.0 / std::sqrt(var + eps));
      rstd[i * groups + g] = r;
      for (std::size_t k = 0; k < gsize; ++k) {
        const int ch = g * cpg + static_cast<int>(k / hw);
        const T xh = (xv[base + k] - static_cast<T>(mean)) * r;
        xhat[base + k] = xh;
        y[base + k] = xh * gamma.data()[ch] + beta.data()[ch];
      }
    }
  return make_result<T>(x.shape(), std::move(y), {x, gamma, beta},
                        [=, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& out) {
                          Node<T>* nx = detail::parent(out, 0);
                          Node<T>* ng = detail::parent(out, 1);
                          Node<T>* nb = detail::parent(out, 2);
                          for (int i = 0; i < n; ++i)
                            for (int g = 0; g < groups; ++g) {
                              const std::size_t base = (static_cast<std::size_t>(i) * c + g * cpg) * hw;
                              double sum_d = 0.0, sum_dx = 0.0;
                              for (std::size_t k = 0; k < gsize; ++k) {
                                const int ch = g * cpg + static_cast<int>(k / hw);
                                const T dy = out.grad[base + k];
                                if (ng->requires_grad) ng->ensure_grad()[ch] += dy * xhat[base + k];
                                if (nb->requires_grad) nb->ensure_grad()[ch] += dy;
                                const double dxh = dy * ng->value[ch];
                                sum_d += dxh;
                                sum_dx += dxh * xhat[base + k];
                              }
                              if (!nx->requires_grad) continue;
                              auto& gx = nx->ensure_grad();
                              const double mean_d = sum_d / gsize, mean_dx = sum_dx / gsize;
                              const T r = rstd[i * groups + g];
                              for (std::size_t k = 0; k < gsize; ++k) {
                                const int ch = g * cpg + static_cast<int>(k / hw);
                                const double dxh = out.grad[base + k] * ng->value[ch];
                                gx[base + k] += static_cast<T>(r * (dxh - mean_d - xhat[base + k] * mean_dx));
                              }
                            }
                        });
}

/// Layer normalization over the last dimension.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const int d = x.shape().back();
  detail::require(gamma.numel() == static_cast<std::size_t>(d), "layer_norm: gamma width mismatch");
  const std::size_t rows = x.numel() / d;
  Buffer<T> y(x.numel()), xhat(x.numel()), rstd(rows);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0, var = 0.0;
    for (int k = 0; k < d; ++k) mean += xv[r * d + k];
    mean /= d;
    for (int k = 0; k < d; ++k) var += (xv[r * d + k] - mean) * (xv[r * d + k] - mean);
    var /= d;
    rstd[r] = static_cast<T>(1.0 / std::sqrt(var + eps));
    for (int k = 0; k < d; ++k) {
      xhat[r * d + k] = (xv[r * d + k] - static_cast<T>(mean)) * rstd[r];
      y[r * d + k] = xhat[r * d + k] * gamma.data()[k] + beta.data()[k];
    }
  }
  return make_result<T>(x.shape(), std::move(y), {x, gamma, beta},
                        [=, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& out) {
                          Node<T>* nx = detail::parent(out, 0);
                          Node<T>* ng = detail::parent(out, 1);
                          Node<T>* nb = detail::parent(out, 2);
                          for (std::size_t r = 0; r < rows; ++r) {
                            double sum_d = 0.0, sum_dx = 0.0;
                            for (int k = 0; k < d; ++k) {
                              const T dy = out.grad[r * d + k];
                              if (ng->requires_grad) ng->ensure_grad()[k] += dy * xhat[r * d + k];
                              if (nb->requires_grad) nb->ensure_grad()[k] += dy;
                              const double dxh = dy * ng->value[k];
                              sum_d += dxh;
                              sum_dx += dxh * xhat[r * d + k];
                            }
                            if (!nx->requires_grad) continue;
                            auto& gx = nx->ensure_grad();
                            for (int k = 0; k < d; ++k) {
                              const double dxh = out.grad[r * d + k] * ng->value[k];
                              gx[r * d + k] += static_cast<T>(rstd[r] * (dxh - sum_d / d - xhat[r * d + k] * sum_dx / d));
                            }
                          }
                        });
}

// ---------------------------------------------------------------- attention

/// Multi-head scaled dot-product attention.
/// q [B,Lq,H*dk], k [B,Lk,H*dk], v [B,Lk,H*dv]; key_lengths[b] (optional) masks padded keys.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                    std::vector<int> key_lengths = {}) {
  detail::require_rank(q.shape(), 3, "attention");
  const int B = q.dim(0), Lq = q.dim(1), Lk = k.dim(1);
  detail::require(k.dim(0) == B && v.dim(0) == B && v.dim(1) == Lk && k.dim(2) == q.dim(2),
                  "attention: q/k/v shapes disagree");
  detail::require(q.dim(2) % heads == 0 && v.dim(2) % heads == 0, "attention: width not divisible by heads");
  const int dk = q.dim(2) / heads, dv = v.dim(2) / heads;
  const int qw = q.dim(2), vw = v.dim(2);
  if (key_lengths.empty()) key_lengths.assign(B, Lk);
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  Buffer<T> y(static_cast<std::size_t>(B) * Lq * vw, T(0));
  auto probs = std::make_shared<Buffer<T>>(static_cast<std::size_t>(B) * heads * Lq * Lk, T(0));
  for (int b = 0; b < B; ++b) {
    const int valid = key_lengths[b];
    for (int h = 0; h < heads; ++h) {
      T* P = probs->data() + (static_cast<std::size_t>(b) * heads + h) * Lq * Lk;
      for (int i = 0; i < Lq; ++i) {
        const T* qi = q.data().data() + (static_cast<std::size_t>(b) * Lq + i) * qw + h * dk;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < valid; ++j) {
          const T* kj = k.data().data() + (static_cast<std::size_t>(b) * Lk + j) * qw + h * dk;
          T s = 0;
          for (int e = 0; e < dk; ++e) s += qi[e] * kj[e];
          P[i * Lk + j] = s * scale;
          mx = std::max(mx, P[i * Lk + j]);
        }
        T z = 0;
        for (int j = 0; j < valid; ++j) {
          P[i * Lk + j] = std::exp(P[i * Lk + j] - mx);
          z += P[i * Lk + j];
        }
        T* yi = y.data() + (static_cast<std::size_t>(b) * Lq + i) * vw + h * dv;
        for (int j = 0; j < valid; ++j) {
          P[i * Lk + j] /= z;
          const T* vj = v.data().data() + (static_cast<std::size_t>(b) * Lk + j) * vw + h * dv;
          for (int e = 0; e < dv; ++e) yi[e] += P[i * Lk + j] * vj[e];
        }
      }
    }
  }
  return make_result<T>({B, Lq, vw}, std::move(y), {q, k, v}, [=](Node<T>& out) {
    Node<T>* nq = detail::parent(out, 0);
    Node<T>* nk = detail::parent(out, 1);
    Node<T>* nv = detail::parent(out, 2);
    Buffer<T> dP(Lk);
    for (int b = 0; b < B; ++b) {
      const int valid = key_lengths[b];
      for (int h = 0; h < heads; ++h) {
        const T* P = probs->data() + (static_cast<std::size_t>(b) * heads + h) * Lq * Lk;
        for (int i = 0; i < Lq; ++i) {
          const T* dyi = out.grad.data() + (static_cast<std::size_t>(b) * Lq + i) * vw + h * dv;
          T dot = 0;
          for (int j = 0; j < valid; ++j) {
            const T* vj = nv->value.data() + (static_cast<std::size_t>(b) * Lk + j) * vw + h * dv;
            T s = 0;
            for (int e = 0; e < dv; ++e) s += dyi[e] * vj[e];
            dP[j] = s;
            dot += s * P[i * Lk + j];
            if (nv->requires_grad) {
              T* gv = nv->ensure_grad().data() + (static_cast<std::size_t>(b) * Lk + j) * vw + h * dv;
              for (int e = 0; e < dv; ++e) gv[e] += P[i * Lk + j] * dyi[e];
            }
          }
          const T* qi = nq->value.data() + (static_cast<std::size_t>(b) * Lq + i) * qw + h * dk;
          for (int j = 0; j < valid; ++j) {
            const T ds = P[i * Lk + j] * (dP[j] - dot) * scale;
            const T* kj = nk->value.data() + (static_cast<std::size_t>(b) * Lk + j) * qw + h * dk;
            if (nq->requires_grad) {
              T* gq = nq->ensure_grad().data() + (static_cast<std::size_t>(b) * Lq + i) * qw + h * dk;
              for (int e = 0; e < dk; ++e) gq[e] += ds * kj[e];
            }
            if (nk->requires_grad) {
              T* gk = nk->ensure_grad().data() + (static_cast<std::size_t>(b) * Lk + j) * qw + h * dk;
              for (int e = 0; e < dk; ++e) gk[e] += ds * qi[e];
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- layout helpers

/// [N,C,H,W] -> [N,H*W,C]
template <class T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto idx = std::make_shared<std::vector<int>>(x.numel());
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < hw; ++p)
      for (int ch = 0; ch < c; ++ch) (*idx)[(i * hw + p) * c + ch] = (i * c + ch) * hw + p;
  return gather<T>(x, idx, {n, hw, c});
}

/// [N,H*W,C] -> [N,C,H,W]
template <class T>
Tensor<T> from_tokens(const Tensor<T>& t, int h, int w) {
  const int n = t.dim(0), c = t.dim(2), hw = h * w;
  auto idx = std::make_shared<std::vector<int>>(t.numel());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p) (*idx)[(i * c + ch) * hw + p] = (i * hw + p) * c + ch;
  return gather<T>(t, idx, {n, c, h, w});
}

}  // namespace segdiff::nn
