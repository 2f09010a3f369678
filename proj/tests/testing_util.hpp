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

#include <functional>
#include <random>
#include <vector>

#include "boxseg/kernels.hpp"
#include "boxseg/tensor.hpp"

namespace boxseg::testing {

// Central finite differences against reverse-mode gradients. The loss
// builder must re-read the current input data on every call. Returns the
// worst relative error across all elements of all inputs.
inline double grad_check(const std::function<Tensor()>& loss_fn,
                         std::vector<Tensor> inputs, double h = 1e-6) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs) analytic.push_back(t.grad());

  double worst = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    for (size_t i = 0; i < t.data().size(); ++i) {
      const double orig = t.data()[i];
      double lp, lm;
      {
        NoGradGuard ng;
        t.mutable_data()[i] = orig + h;
        lp = loss_fn().scalar_value();
        t.mutable_data()[i] = orig - h;
        lm = loss_fn().scalar_value();
        t.mutable_data()[i] = orig;
      }
      const double fd = (lp - lm) / (2.0 * h);
      const double ad = analytic[ti][i];
      const double err =
          std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-4});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Scalarize a tensor with fixed random weights so every output element gets
// an O(1) gradient signal.
inline Tensor weighted_sum(const Tensor& t, uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor w = Tensor::rand_uniform(t.shape(), rng, 0.5, 1.5);
  return ops::sum_all(ops::mul(t, w));
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace boxseg::testing
