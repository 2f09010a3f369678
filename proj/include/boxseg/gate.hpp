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

#include "boxseg/box.hpp"
#include "boxseg/kernels.hpp"

namespace boxseg {

// Soft spatial gate rasterized over a pixel grid; values strictly in (0,1).
struct GateField {
  Tensor values;  // [H,W]
  double alpha = 20.0;
  double enlargement_ratio = 0.0;

  int64_t height() const { return values.dim(0); }
  int64_t width() const { return values.dim(1); }
};

inline double gate_value_at(const Box& b, double px, double py, double alpha) {
  const double s1 = ops::detail_ops::sigmoid_scalar(alpha * (px - b.x1));
  const double s2 = ops::detail_ops::sigmoid_scalar(alpha * (b.x2 - px));
  const double s3 = ops::detail_ops::sigmoid_scalar(alpha * (py - b.y1));
  const double s4 = ops::detail_ops::sigmoid_scalar(alpha * (b.y2 - py));
  return s1 * s2 * s3 * s4;
}

// Product-of-sigmoids box gate sampled at pixel centers ((j+0.5)/W,
// (i+0.5)/H). The box is used as given; callers enlarge beforehand.
inline GateField soft_box_gate(const Box& b, int64_t H, int64_t W,
                               double alpha) {
  if (alpha <= 0) throw ConfigError("soft_box_gate: alpha must be positive");
  if (H < 1 || W < 1) throw DimensionError("soft_box_gate: empty grid");
  GateField g;
  g.alpha = alpha;
  std::vector<double> vals(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H; ++i) {
    const double py = (i + 0.5) / static_cast<double>(H);
    for (int64_t j = 0; j < W; ++j) {
      const double px = (j + 0.5) / static_cast<double>(W);
      vals[i * W + j] = gate_value_at(b, px, py, alpha);
    }
  }
  g.values = Tensor::from_data({H, W}, std::move(vals));
  return g;
}

// Pointwise maximum over gate fields of identical extent.
inline GateField merge_gates(const std::vector<GateField>& gates) {
  if (gates.empty()) {
    throw DimensionError("merge_gates: empty gate sequence");
  }
  GateField out = gates[0];
  for (size_t i = 1; i < gates.size(); ++i) {
    if (gates[i].height() != out.height() || gates[i].width() != out.width()) {
      throw DimensionError("merge_gates: grid size mismatch");
    }
    out.values = ops::max_elem(out.values, gates[i].values);
  }
  return out;
}

// Rasterize the merged gate for a set of boxes (enlarged per ratio).
inline GateField rasterize_box_gates(const std::vector<Box>& boxes, int64_t H,
                                     int64_t W, double alpha,
                                     double enlargement_ratio) {
  if (boxes.empty()) throw DimensionError("rasterize_box_gates: no boxes");
  std::vector<GateField> gates;
  gates.reserve(boxes.size());
  for (const Box& b : boxes) {
    gates.push_back(soft_box_gate(enlarge_box(b, enlargement_ratio), H, W,
                                  alpha));
  }
  GateField merged = merge_gates(gates);
  merged.enlargement_ratio = enlargement_ratio;
  return merged;
}

namespace ops {

// Gate as a differentiable function of the box tensor [x1,y1,x2,y2].
inline Tensor soft_box_gate_t(const Tensor& box, int64_t H, int64_t W,
                              double alpha) {
  detail_ops::require(box.numel() == 4, "soft_box_gate_t expects 4 coords");
  if (alpha <= 0) throw ConfigError("soft_box_gate_t: alpha must be positive");
  auto bn = box.node();
  Tensor out = Tensor::make_result(
      {H, W}, "soft_box_gate", {box},
      [bn, H, W, alpha](detail::TensorNode& y) {
        if (!bn->requires_grad) return;
        const double x1 = bn->data[0], y1 = bn->data[1];
        const double x2 = bn->data[2], y2 = bn->data[3];
        for (int64_t i = 0; i < H; ++i) {
          const double py = (i + 0.5) / static_cast<double>(H);
          for (int64_t j = 0; j < W; ++j) {
            const double px = (j + 0.5) / static_cast<double>(W);
            const double g = y.grad[i * W + j];
            if (g == 0.0) continue;
            const double v = y.data[i * W + j];
            const double s1 = detail_ops::sigmoid_scalar(alpha * (px - x1));
            const double s2 = detail_ops::sigmoid_scalar(alpha * (x2 - px));
            const double s3 = detail_ops::sigmoid_scalar(alpha * (py - y1));
            const double s4 = detail_ops::sigmoid_scalar(alpha * (y2 - py));
            bn->grad[0] += g * (-alpha * (1.0 - s1)) * v;
            bn->grad[2] += g * (alpha * (1.0 - s2)) * v;
            bn->grad[1] += g * (-alpha * (1.0 - s3)) * v;
            bn->grad[3] += g * (alpha * (1.0 - s4)) * v;
          }
        }
      });
  auto& o = out.mutable_data();
  const double x1 = box.value_at(0), y1v = box.value_at(1);
  const double x2 = box.value_at(2), y2v = box.value_at(3);
  for (int64_t i = 0; i < H; ++i) {
    const double py = (i + 0.5) / static_cast<double>(H);
    for (int64_t j = 0; j < W; ++j) {
      const double px = (j + 0.5) / static_cast<double>(W);
      const double s1 = detail_ops::sigmoid_scalar(alpha * (px - x1));
      const double s2 = detail_ops::sigmoid_scalar(alpha * (x2 - px));
      const double s3 = detail_ops::sigmoid_scalar(alpha * (py - y1v));
      const double s4 = detail_ops::sigmoid_scalar(alpha * (y2v - py));
      o[i * W + j] = s1 * s2 * s3 * s4;
    }
  }
  out.check_finite("soft_box_gate");
  return out;
}

}  // namespace ops
}  // namespace boxseg
