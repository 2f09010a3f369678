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

#include <gtest/gtest.h>

#include <random>

#include "boxseg/box.hpp"
#include "boxseg/gate.hpp"
#include "testing_util.hpp"

namespace boxseg {
namespace {

TEST(Fourier, ZeroEncodesToSinesZeroCosinesOne) {
  auto enc = fourier_encode(0.0, FourierConfig(4));
  ASSERT_EQ(enc.size(), 8u);
  for (int k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(enc[k], 0.0);
    EXPECT_DOUBLE_EQ(enc[4 + k], 1.0);
  }
}

TEST(Fourier, OneAtBaseFrequency) {
  auto enc = fourier_encode(1.0, FourierConfig(3));
  EXPECT_NEAR(enc[0], 0.0, 1e-12);   // sin(pi)
  EXPECT_NEAR(enc[3], -1.0, 1e-12);  // cos(pi)
}

TEST(Fourier, ComponentsStayInUnitRange) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  FourierConfig cfg(8);
  for (int i = 0; i < 1000; ++i) {
    for (double v : fourier_encode(u(rng), cfg)) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(EncodeBox, UnitWidthEncodesHalf) {
  Box b(0.0, 0.25, 1.0, 0.75);
  FourierConfig cfg(4);
  auto enc = encode_box(b, cfg);
  auto expect = fourier_encode(0.5, cfg);  // 0.2*ln(1) + 0.5
  for (size_t k = 0; k < expect.size(); ++k) {
    EXPECT_NEAR(enc[2 * expect.size() + k], expect[k], 1e-12);
  }
}

TEST(EncodeBox, LogBlockHitsZero) {
  const double w = std::exp(-2.5);  // 0.2*(-2.5) + 0.5 = 0
  Box b(0.1, 0.1, 0.1 + w, 0.9);
  FourierConfig cfg(4);
  auto enc = encode_box(b, cfg);
  auto expect = fourier_encode(0.0, cfg);
  for (size_t k = 0; k < expect.size(); ++k) {
    EXPECT_NEAR(enc[2 * expect.size() + k], expect[k], 1e-9);
  }
}

TEST(EncodeBox, OutputLengthIsEightF) {
  Box b(0.2, 0.3, 0.6, 0.7);
  for (int f : {4, 8, 16}) {
    EXPECT_EQ(encode_box(b, FourierConfig(f)).size(),
              static_cast<size_t>(8 * f));
  }
}

TEST(EncodeBox, PositionBlocksIgnoreScale) {
  FourierConfig cfg(8);
  auto a = encode_box(Box(0.2, 0.3, 0.5, 0.6), cfg);
  auto b = encode_box(Box(0.2, 0.3, 0.9, 0.8), cfg);
  for (int k = 0; k < 2 * 2 * 8; ++k) EXPECT_DOUBLE_EQ(a[k], b[k]);
}

TEST(EncodeBox, ScaleBlocksIgnorePosition) {
  FourierConfig cfg(8);
  auto a = encode_box(Box(0.1, 0.1, 0.4, 0.5), cfg);
  auto b = encode_box(Box(0.5, 0.4, 0.8, 0.8), cfg);
  for (int k = 4 * 8; k < 8 * 8; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
}

TEST(EnlargeBox, WorkedExample) {
  Box out = enlarge_box(Box(0.2, 0.2, 0.8, 0.8), 0.15);
  EXPECT_NEAR(out.x1, 0.155, 1e-12);
  EXPECT_NEAR(out.y1, 0.155, 1e-12);
  EXPECT_NEAR(out.x2, 0.845, 1e-12);
  EXPECT_NEAR(out.y2, 0.845, 1e-12);
}

TEST(EnlargeBox, ZeroRatioIsIdentity) {
  Box b(0.31, 0.07, 0.55, 0.66);
  Box out = enlarge_box(b, 0.0);
  EXPECT_DOUBLE_EQ(out.x1, b.x1);
  EXPECT_DOUBLE_EQ(out.y2, b.y2);
}

TEST(EnlargeBox, FullImageClamps) {
  Box out = enlarge_box(Box(0.0, 0.0, 1.0, 1.0), 0.15);
  EXPECT_DOUBLE_EQ(out.x1, 0.0);
  EXPECT_DOUBLE_EQ(out.y1, 0.0);
  EXPECT_DOUBLE_EQ(out.x2, 1.0);
  EXPECT_DOUBLE_EQ(out.y2, 1.0);
}

TEST(SoftBoxGate, WorkedInteriorValue) {
  // box (0.155..0.845), alpha 20, sample (0.5, 0.5): sigma(6.9)^4
  const Box b(0.155, 0.155, 0.845, 0.845);
  const double v = gate_value_at(b, 0.5, 0.5, 20.0);
  const double s = 1.0 / (1.0 + std::exp(-6.9));
  EXPECT_NEAR(v, s * s * s * s, 1e-12);
  EXPECT_NEAR(v, 0.9960, 1e-3);
  EXPECT_GT(v, 0.99);
  // the same value must appear on the rasterized grid (odd grid centers 0.5)
  GateField g = soft_box_gate(b, 5, 5, 20.0);
  EXPECT_NEAR(g.values.data()[2 * 5 + 2], v, 1e-12);
}

TEST(SoftBoxGate, CornerValueIsQuarter) {
  const Box b(0.155, 0.155, 0.845, 0.845);
  const double v = gate_value_at(b, 0.155, 0.155, 20.0);
  EXPECT_NEAR(v, 0.25, 1e-2);
}

TEST(SoftBoxGate, LargeAlphaApproachesHardIndicator) {
  const Box b(0.3, 0.3, 0.7, 0.7);
  GateField g = soft_box_gate(b, 50, 50, 1e6);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) {
      const double px = (j + 0.5) / 50.0, py = (i + 0.5) / 50.0;
      // skip the transition band right on the edges
      if (std::abs(px - 0.3) < 1e-3 || std::abs(px - 0.7) < 1e-3 ||
          std::abs(py - 0.3) < 1e-3 || std::abs(py - 0.7) < 1e-3) {
        continue;
      }
      const double hard =
          (px > 0.3 && px < 0.7 && py > 0.3 && py < 0.7) ? 1.0 : 0.0;
      EXPECT_NEAR(g.values.data()[i * 50 + j], hard, 1e-6);
    }
}

TEST(SoftBoxGate, ValuesStrictlyInsideUnitInterval) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.05, 0.45);
  for (int t = 0; t < 20; ++t) {
    const double x1 = u(rng), y1 = u(rng);
    GateField g = soft_box_gate(Box(x1, y1, x1 + u(rng), y1 + u(rng)), 16, 16,
                                20.0);
    for (double v : g.values.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(SoftBoxGate, UnimodalAlongRows) {
  const Box b(0.2, 0.3, 0.75, 0.8);
  GateField g = soft_box_gate(b, 32, 32, 20.0);
  for (int i = 0; i < 32; ++i) {
    int sign_changes = 0;
    int prev_sign = 1;
    for (int j = 1; j < 32; ++j) {
      const double d =
          g.values.data()[i * 32 + j] - g.values.data()[i * 32 + j - 1];
      const int sign = d >= 0 ? 1 : -1;
      if (sign != prev_sign) ++sign_changes;
      prev_sign = sign;
    }
    EXPECT_LE(sign_changes, 1) << "row " << i;
  }
}

TEST(MergeGates, SingleGateIsIdentity) {
  GateField g = soft_box_gate(Box(0.2, 0.2, 0.6, 0.6), 8, 8, 20.0);
  GateField m = merge_gates({g});
  EXPECT_EQ(m.values.data(), g.values.data());
}

TEST(MergeGates, DominatesEveryConstituent) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.05, 0.4);
  for (int t = 0; t < 100; ++t) {
    const double ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng);
    GateField a = soft_box_gate(Box(ax, ay, ax + u(rng), ay + u(rng)), 12, 12,
                                20.0);
    GateField b = soft_box_gate(Box(bx, by, bx + u(rng), by + u(rng)), 12, 12,
                                20.0);
    GateField m = merge_gates({a, b});
    for (size_t i = 0; i < m.values.data().size(); ++i) {
      EXPECT_GE(m.values.data()[i], a.values.data()[i]);
      EXPECT_GE(m.values.data()[i], b.values.data()[i]);
    }
  }
}

TEST(MergeGates, AssociativeCommutativeIdempotent) {
  GateField a = soft_box_gate(Box(0.1, 0.1, 0.4, 0.5), 10, 10, 20.0);
  GateField b = soft_box_gate(Box(0.3, 0.2, 0.8, 0.6), 10, 10, 20.0);
  GateField c = soft_box_gate(Box(0.5, 0.5, 0.9, 0.9), 10, 10, 20.0);
  GateField abc1 = merge_gates({merge_gates({a, b}), c});
  GateField abc2 = merge_gates({a, merge_gates({b, c})});
  EXPECT_EQ(abc1.values.data(), abc2.values.data());
  GateField ab = merge_gates({a, b});
  GateField ba = merge_gates({b, a});
  EXPECT_EQ(ab.values.data(), ba.values.data());
  GateField aa = merge_gates({a, a});
  EXPECT_EQ(aa.values.data(), a.values.data());
}

TEST(MergeGates, EmptySequenceIsError) {
  EXPECT_THROW(merge_gates({}), DimensionError);
}

TEST(MergeGates, DisjointBoxInteriorsStayStrong) {
  // Per-box closed form: the gate at a box center with margin d to every
  // edge is sigma(alpha*d)^4, which crosses 0.99 near d = 0.31 at alpha 20.
  const Box b1(0.02, 0.02, 0.66, 0.66);
  const Box b2(0.68, 0.68, 1.0, 1.0);
  GateField m = merge_gates({soft_box_gate(b1, 100, 100, 20.0),
                             soft_box_gate(b2, 100, 100, 20.0)});
  const double center1 = gate_value_at(b1, 0.34, 0.34, 20.0);
  EXPECT_GT(center1, 0.99);
  // merged field dominates the per-box closed form at that pixel
  EXPECT_GE(m.values.data()[33 * 100 + 33] + 1e-12, center1);
}

TEST(GateGradient, MeanMatchesFiniteDifferences) {
  Tensor box = Tensor::from_data({4}, {0.2, 0.25, 0.7, 0.8});
  const double err = boxseg::testing::grad_check(
      [&] { return ops::mean_all(ops::soft_box_gate_t(box, 12, 12, 20.0)); },
      {box});
  EXPECT_LT(err, 1e-4);
}

TEST(GateTensor, MatchesClosedFormRasterizer) {
  const Box b(0.15, 0.2, 0.7, 0.9);
  GateField g = soft_box_gate(b, 9, 7, 20.0);
  Tensor bt = Tensor::from_data({4}, {b.x1, b.y1, b.x2, b.y2});
  Tensor gt = ops::soft_box_gate_t(bt, 9, 7, 20.0);
  EXPECT_EQ(g.values.data(), gt.data());
}

TEST(Box, InvalidBoxesRejected) {
  EXPECT_THROW(Box(0.5, 0.1, 0.5, 0.9), DimensionError);  // zero width
  EXPECT_THROW(Box(-0.1, 0.1, 0.5, 0.9), DimensionError);
  EXPECT_THROW(Box(0.1, 0.1, 1.2, 0.9), DimensionError);
}

}  // namespace
}  // namespace boxseg
