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

#include "boxseg/kernels.hpp"
#include "boxseg/mask.hpp"

namespace boxseg {

struct LossConfig {
  double lambda_bce = 2.0;
  double lambda_dice = 0.5;
  double dice_smooth = 1.0;

  void validate() const {
    if (lambda_bce < 0 || lambda_dice < 0 ||
        (lambda_bce == 0 && lambda_dice == 0)) {
      throw ConfigError("loss: weights must be >= 0 and not both zero");
    }
  }
};

inline Tensor mask_to_tensor(const BinaryMask& m) {
  std::vector<double> v(m.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = m.bits[i] ? 1.0 : 0.0;
  return Tensor::from_data({m.height, m.width}, std::move(v));
}

// lambda_bce * mean BCE(sigmoid(z), t)
//   + lambda_dice * (1 - (2*sum(s*t) + smooth) / (sum(s) + sum(t) + smooth)).
inline Tensor bce_dice_loss(const Tensor& logits, const Tensor& target,
                            const LossConfig& cfg) {
  cfg.validate();
  if (logits.shape() != target.shape()) {
    throw DimensionError("bce_dice_loss: logits/target shape mismatch");
  }
  Tensor total = Tensor::scalar(0.0);
  if (cfg.lambda_bce > 0) {
    total = ops::mul_scalar(ops::bce_with_logits_mean(logits, target),
                            cfg.lambda_bce);
  }
  if (cfg.lambda_dice > 0) {
    Tensor s = ops::sigmoid(logits);
    Tensor inter = ops::sum_all(ops::mul(s, target));
    Tensor denom = ops::add_scalar(
        ops::add(ops::sum_all(s), ops::sum_all(target)), cfg.dice_smooth);
    Tensor dice = ops::div_by(
        ops::add_scalar(ops::mul_scalar(inter, 2.0), cfg.dice_smooth), denom);
    Tensor dice_term = ops::add_scalar(ops::mul_scalar(dice, -1.0), 1.0);
    total = ops::add(total, ops::mul_scalar(dice_term, cfg.lambda_dice));
  }
  return total;
}

inline Tensor bce_dice_loss(const Tensor& logits, const BinaryMask& target,
                            const LossConfig& cfg) {
  return bce_dice_loss(logits, mask_to_tensor(target), cfg);
}

}  // namespace boxseg
