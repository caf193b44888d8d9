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

// Minimal reverse-mode autodiff over dense tensors.
//
// A Tensor is a handle to a graph node. Ops create a new node whose backward
// closure accumulates into the parents' gradients. Parameters are leaf nodes
// with requires_grad set; everything else is freed when its handles go away.

#pragma once

#include <cstdlib>
#include <functional>
#include <new>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "segdiff/common.hpp"

namespace segdiff::nn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// 64-byte aligned storage. Eigen's vectorized kernels peel differently depending on the
/// base address, so a fixed alignment keeps results bit-identical across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + kAlignment - 1) / kAlignment * kAlignment;
    void* p = std::aligned_alloc(kAlignment, bytes == 0 ? kAlignment : bytes);
    if (p == nullptr) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <class T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Buffer<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }
  Tensor(Shape shape, Buffer<T> values) : node_(std::make_shared<Node<T>>()) {
    if (values.size() != shape_numel(shape)) {
      throw ArgumentError("tensor values do not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }
  Tensor(Shape shape, const std::vector<T>& values) : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end())) {}

  static Tensor parameter(Shape shape, Buffer<T> values) {
    Tensor t(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  const Buffer<T>& values() const { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const {
    if (numel() != 1) throw ArgumentError("item() on a tensor with " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  /// Returns a graph-free copy of the values.
  Tensor detach() const { return Tensor(shape(), values()); }

  /// Back-propagates from this scalar.
  void backward() {
    if (numel() != 1) throw ArgumentError("backward() needs a scalar root");
    if (!node_->requires_grad) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (Node<T>* n : order) {
      if (n->backward_fn) n->grad.assign(n->value.size(), T(0));
    }
    node_->ensure_grad()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared_node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. `backward(out)` reads out.grad and accumulates into parents that
/// require gradients; it is only attached when recording is enabled and some parent needs it.
template <class T, class Backward>
Tensor<T> make_result(Shape shape, Buffer<T> value, std::initializer_list<Tensor<T>> parents,
                      Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(value));
  if (!detail::grad_mode()) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return out;
  Node<T>* node = out.node();
  node->requires_grad = true;
  for (const auto& p : parents) node->parents.push_back(p.shared_node());
  node->backward_fn = std::forward<Backward>(backward);
  return out;
}

template <class T>
bool wants_grad(const Node<T>* n) {
  return n->requires_grad;
}

}  // namespace segdiff::nn
