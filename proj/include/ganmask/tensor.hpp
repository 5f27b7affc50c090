// Copyright 2026 The GanMask Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Reverse-mode automatic differentiation core.
//
// A Tensor is a shared handle onto a graph node. Every op that sees at least
// one input with requires_grad records a backward closure on its output; the
// recorded nodes form the compute graph, and backward() walks it once in
// reverse topological order and then releases it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ganmask/errors.hpp"

namespace ganmask {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct KinkMonitor {
  bool active = false;
  std::uint64_t hash = 1469598103934665603ull;
};

inline KinkMonitor& kink_monitor() {
  thread_local KinkMonitor monitor;
  return monitor;
}

// Folds the piece index of a piecewise-smooth op into the active pattern.
inline void note_kink_region(int region) {
  auto& m = kink_monitor();
  if (!m.active) return;
  m.hash ^= static_cast<std::uint64_t>(region + 3);
  m.hash *= 1099511628211ull;
}

}  // namespace detail

// While alive, piecewise ops on this thread hash which piece each element
// falls in. Gradient checks use the hash to detect stencils crossing a kink.
class KinkPatternScope {
 public:
  KinkPatternScope() : prev_(detail::kink_monitor()) {
    detail::kink_monitor() = detail::KinkMonitor{true, 1469598103934665603ull};
  }
  ~KinkPatternScope() { detail::kink_monitor() = prev_; }
  KinkPatternScope(const KinkPatternScope&) = delete;
  KinkPatternScope& operator=(const KinkPatternScope&) = delete;
  std::uint64_t pattern() const { return detail::kink_monitor().hash; }

 private:
  detail::KinkMonitor prev_;
};

inline bool kink_tracking() { return detail::kink_monitor().active; }

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    node_->data.assign(numel_of(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    GANMASK_REQUIRE(numel_of(shape) == data.size(), DimensionError, "tensor shape ",
                    shape_str(shape), " does not match ", data.size(), " values");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T item() const {
    GANMASK_REQUIRE(numel() == 1, ContractError, "item() on tensor of shape ", shape_str(shape()));
    return node_->data[0];
  }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::vector<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }
  bool is_leaf() const { return !node_->backward; }

  // New leaf holding a copy of the values, cut off from the graph.
  Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

  Tensor clone() const { return Tensor(node_->shape, node_->data, node_->requires_grad); }

  bool all_finite() const {
    return std::all_of(node_->data.begin(), node_->data.end(),
                       [](T v) { return std::isfinite(v); });
  }

  // Throws NonFiniteError naming the first offending flat index.
  void check_finite(const std::string& what) const {
    for (std::size_t i = 0; i < node_->data.size(); ++i) {
      if (!std::isfinite(node_->data[i])) {
        throw NonFiniteError(detail::concat(what, ": non-finite value ", node_->data[i],
                                            " at flat index ", i, " of ", shape_str(shape())));
      }
    }
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

// Builds an op output. The backward closure is kept only if grad mode is on
// and some input participates in differentiation.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                      const char* op, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_enabled()) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
bool wants_grad(const Node<T>& self, std::size_t input) {
  return self.inputs[input]->requires_grad;
}

}  // namespace detail

// Populates grad on every requires_grad tensor reachable from `loss` and
// releases the recorded graph.
template <typename T>
void backward(Tensor<T>& loss) {
  auto root = loss.node();
  GANMASK_REQUIRE(!root->consumed, ContractError,
                  "backward called twice on the same graph; run a new forward pass first");
  GANMASK_REQUIRE(loss.numel() == 1, ContractError, "backward requires a scalar loss, got shape ",
                  shape_str(loss.shape()));
  GANMASK_REQUIRE(root->requires_grad, ContractError,
                  "backward on a tensor that does not require grad");

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (!node->grad.empty() && node->backward) node->backward(*node);
  }
  for (NodeT* node : order) {
    node->backward = nullptr;
    node->inputs.clear();
    node->consumed = true;
    if (node != root.get()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace ganmask
