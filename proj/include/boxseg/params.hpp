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

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "boxseg/tensor.hpp"

namespace boxseg {

// Ordered registry of trainable tensors. Registration order is the
// checkpoint serialization order, so builders must be deterministic.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) {
      throw ConfigError("duplicate parameter name: " + name);
    }
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

namespace init {

// Uniform Glorot initialization for a [fan_out, fan_in] weight.
inline Tensor xavier(Shape shape, int64_t fan_in, int64_t fan_out,
                     std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::rand_uniform(std::move(shape), rng, -bound, bound);
}

inline std::pair<Tensor, Tensor> linear_params(ParamStore& store,
                                               const std::string& prefix,
                                               int64_t out_dim, int64_t in_dim,
                                               std::mt19937_64& rng) {
  Tensor w = store.add(prefix + ".weight",
                       xavier({out_dim, in_dim}, in_dim, out_dim, rng));
  Tensor b = store.add(prefix + ".bias", Tensor::zeros({out_dim}));
  return {w, b};
}

inline std::pair<Tensor, Tensor> conv3x3_params(ParamStore& store,
                                                const std::string& prefix,
                                                int64_t out_ch, int64_t in_ch,
                                                std::mt19937_64& rng) {
  Tensor w = store.add(prefix + ".weight",
                       xavier({out_ch, in_ch, 3, 3}, in_ch * 9, out_ch * 9,
                              rng));
  Tensor b = store.add(prefix + ".bias", Tensor::zeros({out_ch}));
  return {w, b};
}

inline std::pair<Tensor, Tensor> norm_params(ParamStore& store,
                                             const std::string& prefix,
                                             int64_t dim) {
  Tensor g = store.add(prefix + ".scale", Tensor::full({dim}, 1.0));
  Tensor b = store.add(prefix + ".shift", Tensor::zeros({dim}));
  return {g, b};
}

}  // namespace init
}  // namespace boxseg
