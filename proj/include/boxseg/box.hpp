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
#include <stdexcept>
#include <vector>

#include "boxseg/tensor.hpp"

namespace boxseg {

// Axis-aligned rectangle in normalized image coordinates.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  Box() = default;
  Box(double a, double b, double c, double d) : x1(a), y1(b), x2(c), y2(d) {
    validate();
  }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  void validate() const {
    if (!(x1 >= 0 && x1 < x2 && x2 <= 1 && y1 >= 0 && y1 < y2 && y2 <= 1)) {
      throw DimensionError("degenerate or out-of-range box");
    }
  }

  static Box tight_union(const std::vector<Box>& boxes) {
    if (boxes.empty()) throw DimensionError("tight_union of empty box set");
    Box u = boxes[0];
    for (size_t i = 1; i < boxes.size(); ++i) {
      u.x1 = std::min(u.x1, boxes[i].x1);
      u.y1 = std::min(u.y1, boxes[i].y1);
      u.x2 = std::max(u.x2, boxes[i].x2);
      u.y2 = std::max(u.y2, boxes[i].y2);
    }
    return u;
  }
};

// Rectangle IoU for boxes in any consistent coordinate frame.
inline double box_iou(double ax1, double ay1, double ax2, double ay2,
                      double bx1, double by1, double bx2, double by2) {
  const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = ix * iy;
  const double area_a = std::max(0.0, ax2 - ax1) * std::max(0.0, ay2 - ay1);
  const double area_b = std::max(0.0, bx2 - bx1) * std::max(0.0, by2 - by1);
  const double uni = area_a + area_b - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double box_iou(const Box& a, const Box& b) {
  return box_iou(a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2);
}

struct FourierConfig {
  int num_frequencies = 8;  // encoding of one scalar has length 2F

  FourierConfig() = default;
  explicit FourierConfig(int f) : num_frequencies(f) {
    if (f < 1) throw ConfigError("FourierConfig: F >= 1 required");
  }
};

// gamma(v): all sines first, then all cosines, frequencies 2^k * pi.
inline std::vector<double> fourier_encode(double v, const FourierConfig& cfg) {
  if (!std::isfinite(v)) throw NumericError("fourier_encode: non-finite input");
  const int F = cfg.num_frequencies;
  std::vector<double> out(2 * F);
  for (int k = 0; k < F; ++k) {
    const double w = std::ldexp(M_PI, k) * v;  // 2^k * pi * v
    out[k] = std::sin(w);
    out[F + k] = std::cos(w);
  }
  return out;
}

// Box geometry embedding: gamma(x1) ++ gamma(y1) ++ gamma(0.2 ln w + 0.5)
// ++ gamma(0.2 ln h + 0.5). Length 8F.
inline std::vector<double> encode_box(const Box& b, const FourierConfig& cfg) {
  b.validate();
  std::vector<double> out;
  out.reserve(8 * cfg.num_frequencies);
  const double lw = 0.2 * std::log(b.width()) + 0.5;
  const double lh = 0.2 * std::log(b.height()) + 0.5;
  for (double v : {b.x1, b.y1, lw, lh}) {
    auto part = fourier_encode(v, cfg);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// Scale width and height by (1 + ratio) about the center, clamped to [0,1].
// A clamped-away edge keeps a minimum extent of 1e-4.
inline Box enlarge_box(const Box& b, double ratio) {
  if (ratio < 0) throw ConfigError("enlarge_box: ratio must be >= 0");
  const double half_w = 0.5 * b.width() * (1.0 + ratio);
  const double half_h = 0.5 * b.height() * (1.0 + ratio);
  const double cx = b.center_x(), cy = b.center_y();
  double x1 = std::clamp(cx - half_w, 0.0, 1.0);
  double x2 = std::clamp(cx + half_w, 0.0, 1.0);
  double y1 = std::clamp(cy - half_h, 0.0, 1.0);
  double y2 = std::clamp(cy + half_h, 0.0, 1.0);
  constexpr double kMinExtent = 1e-4;
  if (x2 - x1 < kMinExtent) {
    if (x1 + kMinExtent <= 1.0) x2 = x1 + kMinExtent;
    else x1 = x2 - kMinExtent;
  }
  if (y2 - y1 < kMinExtent) {
    if (y1 + kMinExtent <= 1.0) y2 = y1 + kMinExtent;
    else y1 = y2 - kMinExtent;
  }
  return Box(x1, y1, x2, y2);
}

}  // namespace boxseg
