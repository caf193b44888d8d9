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

#pragma once

#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "segdiff/nn/ops.hpp"

namespace segdiff::nn {

template <class T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered registry of named parameters. Creation order is the serialization order.
template <class T>
class ParameterStore {
 public:
  Tensor<T> create(const std::string& name, Shape shape, Buffer<T> values) {
    for (const auto& p : params_) {
      if (p.name == name) throw ArgumentError("duplicate parameter name " + name);
    }
    auto t = Tensor<T>::parameter(std::move(shape), std::move(values));
    params_.push_back({name, t});
    return t;
  }

  Tensor<T> uniform(const std::string& name, Shape shape, T bound, Rng& rng) {
    Buffer<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return create(name, std::move(shape), std::move(v));
  }

  Tensor<T> normal(const std::string& name, Shape shape, T stddev, Rng& rng) {
    Buffer<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
    return create(name, std::move(shape), std::move(v));
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value) {
    return create(name, shape, Buffer<T>(shape_numel(shape), value));
  }

  const std::vector<NamedParameter<T>>& entries() const noexcept { return params_; }
  std::vector<NamedParameter<T>>& entries() noexcept { return params_; }

  std::size_t scalar_count() const {
    return std::accumulate(params_.begin(), params_.end(), std::size_t{0},
                           [](std::size_t acc, const NamedParameter<T>& p) { return acc + p.tensor.numel(); });
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Copies values by name from another store (possibly of a different scalar type).
  template <class U>
  void copy_from(const ParameterStore<U>& other) {
    if (other.entries().size() != params_.size()) throw ArgumentError("parameter stores differ in size");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = other.entries()[i];
      auto& dst = params_[i];
      if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
        throw ArgumentError("parameter mismatch at " + dst.name);
      }
      auto out = dst.tensor.mutable_data();
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<T>(src.tensor.data()[k]);
    }
  }

 private:
  std::vector<NamedParameter<T>> params_;
};

template <class T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int pad = 0;

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
  static std::size_t count(int in, int out, int k) {
    return static_cast<std::size_t>(out) * in * k * k + out;
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weight and bias; zero init when requested.
template <class T>
Conv2d<T> make_conv(ParameterStore<T>& store, const std::string& name, int in, int out, int k, Rng& rng,
                    int stride = 1, int pad = -1, bool zero = false) {
  if (pad < 0) pad = k / 2;
  const T bound = T(1) / std::sqrt(static_cast<T>(in * k * k));
  Conv2d<T> c;
  if (zero) {
    c.weight = store.constant(name + ".weight", {out, in, k, k}, T(0));
    c.bias = store.constant(name + ".bias", {out}, T(0));
  } else {
    c.weight = store.uniform(name + ".weight", {out, in, k, k}, bound, rng);
    c.bias = store.uniform(name + ".bias", {out}, bound, rng);
  }
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias.defined() ? &bias : nullptr); }
  static std::size_t count(int in, int out, bool with_bias = true) {
    return static_cast<std::size_t>(out) * in + (with_bias ? out : 0);
  }
};

template <class T>
Linear<T> make_linear(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng,
                      bool with_bias = true, bool zero = false) {
  const T bound = T(1) / std::sqrt(static_cast<T>(in));
  Linear<T> l;
  l.weight = zero ? store.constant(name + ".weight", {out, in}, T(0)) : store.uniform(name + ".weight", {out, in}, bound, rng);
  if (with_bias) {
    l.bias = zero ? store.constant(name + ".bias", {out}, T(0)) : store.uniform(name + ".bias", {out}, bound, rng);
  }
  return l;
}

template <class T>
struct GroupNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  int groups = 1;

  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, gamma, beta, groups); }
  static std::size_t count(int channels) { return 2 * static_cast<std::size_t>(channels); }
};

inline int default_groups(int channels) { return std::gcd(channels, 8); }

template <class T>
GroupNorm<T> make_group_norm(ParameterStore<T>& store, const std::string& name, int channels) {
  return {store.constant(name + ".gamma", {channels}, T(1)), store.constant(name + ".beta", {channels}, T(0)),
          default_groups(channels)};
}

template <class T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <class T>
LayerNorm<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, int width) {
  return {store.constant(name + ".gamma", {width}, T(1)), store.constant(name + ".beta", {width}, T(0))};
}

/// Decoupled weight decay Adam.
template <class T>
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
  };

  AdamW(std::vector<Tensor<T>> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto g = p.grad();
      if (g.empty()) continue;
      auto w = p.mutable_data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k];
        m_[i][k] = opt_.beta1 * m_[i][k] + (1.0 - opt_.beta1) * gk;
        v_[i][k] = opt_.beta2 * v_[i][k] + (1.0 - opt_.beta2) * gk * gk;
        const double mhat = m_[i][k] / bc1;
        const double vhat = v_[i][k] / bc2;
        double wk = w[k];
        wk -= opt_.lr * opt_.weight_decay * wk;
        wk -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
        w[k] = static_cast<T>(wk);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long long steps_taken() const noexcept { return t_; }
  void set_lr(double lr) { opt_.lr = lr; }

 private:
  std::vector<Tensor<T>> params_;
  Options opt_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long long t_ = 0;
};

}  // namespace segdiff::nn
