/* Copyright (c) 2026 BoxSeg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace boxseg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  const char* op_name = "leaf";

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// RAII switch that suppresses graph construction (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Dense row-major tensor handle with reverse-mode autodiff. Copying a Tensor
// copies the handle, not the buffer; kernels allocate fresh outputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), 0.0);
  }

  static Tensor full(Shape shape, double value) {
    return Tensor(std::move(shape), value);
  }

  static Tensor from_data(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), 0.0);
    if (t.numel() != static_cast<int64_t>(values.size())) {
      throw DimensionError("tensor data length " +
                           std::to_string(values.size()) +
                           " does not match shape " + shape_str(t.shape()));
    }
    t.node_->data = std::move(values);
    t.check_finite("construct");
    return t;
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape), 0.0);
    for (double& v : t.node_->data) v = dist(rng);
    return t;
  }

  static Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo,
                             double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape), 0.0);
    for (double& v : t.node_->data) v = dist(rng);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }
  int64_t numel() const { return node_ ? node_->numel() : 0; }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  double value_at(int64_t i) const { return node_->data[static_cast<size_t>(i)]; }
  double scalar_value() const {
    if (numel() != 1) {
      throw DimensionError("scalar_value on tensor of shape " +
                           shape_str(shape()));
    }
    return node_->data[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  Tensor& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw NumericError("gradient not populated");
    return node_->grad;
  }
  void zero_grad() {
    if (node_) node_->grad.clear();
  }

  // Same buffer, detached from the graph.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
  }

  Tensor clone() const { return detach(); }

  void check_finite(const char* op) const {
    for (double v : node_->data) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite value produced by ") + op);
      }
    }
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  // Kernel plumbing: allocate a result wired to its inputs. The backward
  // closure receives the result node and must scatter into parent grads.
  static Tensor make_result(Shape shape, const char* op_name,
                            std::initializer_list<Tensor> inputs,
                            std::function<void(detail::TensorNode&)> backward) {
    return make_result(std::move(shape), op_name,
                       std::vector<Tensor>(inputs), std::move(backward));
  }

  static Tensor make_result(Shape shape, const char* op_name,
                            const std::vector<Tensor>& inputs,
                            std::function<void(detail::TensorNode&)> backward) {
    Tensor t(std::move(shape), 0.0);
    t.node_->op_name = op_name;
    bool needs_grad = false;
    if (grad_enabled()) {
      for (const Tensor& in : inputs) {
        if (in.defined() && in.requires_grad()) needs_grad = true;
      }
    }
    if (needs_grad) {
      t.node_->requires_grad = true;
      for (const Tensor& in : inputs) {
        if (in.defined()) t.node_->parents.push_back(in.node_);
      }
      t.node_->backward_fn = std::move(backward);
    }
    return t;
  }

 private:
  Tensor(Shape shape, double fill) {
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    for (int64_t e : node_->shape) {
      if (e <= 0) {
        throw DimensionError("non-positive extent in shape " +
                             shape_str(node_->shape));
      }
    }
    node_->data.assign(static_cast<size_t>(shape_numel(node_->shape)), fill);
  }

  std::shared_ptr<detail::TensorNode> node_;
};

// Reverse-mode sweep from a scalar loss. Populates .grad on every
// requires_grad tensor reachable through recorded kernels.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward expects a scalar loss, got " +
                         shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw NumericError(
        "backward: loss does not require grad (no parameter on its path)");
  }

  // Iterative topological order over the reachable graph.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<detail::TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::TensorNode* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      for (auto& p : node->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      node->backward_fn(*node);
    } else if (!node->backward_fn && !node->parents.empty()) {
      throw NumericError(std::string("no backward rule recorded for op ") +
                         node->op_name);
    }
  }
}

}  // namespace boxseg
