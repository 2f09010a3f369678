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

#include "boxseg/attention.hpp"
#include "boxseg/gate.hpp"
#include "boxseg/kernels.hpp"
#include "boxseg/loss.hpp"
#include "testing_util.hpp"

namespace boxseg {
namespace {

using boxseg::testing::grad_check;
using boxseg::testing::weighted_sum;

constexpr double kTol = 1e-4;
constexpr int kTrials = 10;

TEST(Grad, SumGivesOnes) {
  Tensor x = Tensor::from_data({4}, {1, 2, 3, 4}).set_requires_grad(true);
  Tensor loss = ops::sum_all(x);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Grad, SigmoidAtZeroIsQuarter) {
  Tensor x = Tensor::zeros({5});
  x.set_requires_grad(true);
  backward(ops::sum_all(ops::sigmoid(x)));
  for (double g : x.grad()) EXPECT_NEAR(g, 0.25, 1e-12);
}

TEST(Grad, Elementwise) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(100 + t);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::rand_uniform({3, 4}, rng, 0.5, 2.0);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::add(a, b)); }, {a, b}),
              kTol);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::sub(a, b)); }, {a, b}),
              kTol);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::mul(a, b)); }, {a, b}),
              kTol);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::add_scalar(a, 1.7)); }, {a}),
              kTol);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::mul_scalar(a, -2.3)); }, {a}),
              kTol);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::max_elem(a, b)); },
                         {a, b}),
              kTol);
  }
}

TEST(Grad, ScalarBroadcasts) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(200 + t);
    Tensor x = Tensor::randn({2, 3, 3}, rng);
    Tensor s = Tensor::rand_uniform({1}, rng, 0.5, 2.0);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::scale_by(x, s)); },
                         {x, s}),
              kTol);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::div_by(x, s)); },
                         {x, s}),
              kTol);
  }
}

TEST(Grad, Reductions) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(300 + t);
    Tensor x = Tensor::randn({3, 4, 2}, rng);
    EXPECT_LT(grad_check([&] { return ops::mean_all(x); }, {x}), kTol);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::sum_spatial(x)); },
                         {x}),
              kTol);
  }
}

TEST(Grad, Activations) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(400 + t);
    Tensor x = Tensor::randn({4, 5}, rng);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::sigmoid(x)); }, {x}),
              kTol);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::gelu(x)); }, {x}),
              kTol);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::softmax_lastdim(x)); }, {x}),
              kTol);
  }
}

TEST(Grad, MatmulAndLinear) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(500 + t);
    Tensor a = Tensor::randn({4, 3}, rng);
    Tensor b = Tensor::randn({3, 5}, rng);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::matmul(a, b)); },
                         {a, b}),
              kTol);
    Tensor x = Tensor::randn({3, 6}, rng);
    Tensor w = Tensor::randn({4, 6}, rng);
    Tensor bias = Tensor::randn({4}, rng);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::linear(x, w, bias)); },
                         {x, w, bias}),
              kTol);
  }
}

TEST(Grad, Convolutions) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(600 + t);
    Tensor x = Tensor::randn({3, 5, 4}, rng);
    Tensor w1 = Tensor::randn({2, 3}, rng);
    Tensor b1 = Tensor::randn({2}, rng);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::conv_1x1(x, w1, b1)); },
                  {x, w1, b1}),
              kTol);
    Tensor w3 = Tensor::randn({2, 3, 3, 3}, rng);
    Tensor b3 = Tensor::randn({2}, rng);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::conv2d_3x3(x, w3, b3, 1)); },
                  {x, w3, b3}),
              kTol);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::conv2d_3x3(x, w3, b3, 2)); },
                  {x, w3, b3}),
              kTol);
    Tensor wd = Tensor::randn({3, 3, 3}, rng);
    Tensor bd = Tensor::randn({3}, rng);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::dwconv_3x3(x, wd, bd)); },
                  {x, wd, bd}),
              kTol);
  }
}

TEST(Grad, Normalization) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(700 + t);
    Tensor x = Tensor::randn({4, 3, 2}, rng);
    Tensor g = Tensor::rand_uniform({4}, rng, 0.5, 1.5);
    Tensor b = Tensor::randn({4}, rng, 0.3);
    EXPECT_LT(grad_check(
                  [&] {
                    return weighted_sum(ops::group_norm(x, g, b, 2, 1e-5));
                  },
                  {x, g, b}),
              kTol);
    Tensor x2 = Tensor::randn({3, 6}, rng);
    Tensor g2 = Tensor::rand_uniform({6}, rng, 0.5, 1.5);
    Tensor b2 = Tensor::randn({6}, rng, 0.3);
    EXPECT_LT(grad_check(
                  [&] {
                    return weighted_sum(ops::layer_norm(x2, g2, b2, 1e-5));
                  },
                  {x2, g2, b2}),
              kTol);
  }
}

TEST(Grad, ShapeMovement) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(800 + t);
    Tensor x = Tensor::randn({8, 2, 3}, rng);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::pixel_shuffle(x, 2)); }, {x}),
              kTol);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::bilinear_resize(x, 5, 7)); },
                  {x}),
              kTol);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::chw_to_tokens(x)); }, {x}),
              kTol);
    Tensor tok = Tensor::randn({6, 4}, rng);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::tokens_to_chw(tok, 2, 3)); },
                  {tok}),
              kTol);
    Tensor a = Tensor::randn({2, 2, 3}, rng);
    Tensor b = Tensor::randn({3, 2, 3}, rng);
    EXPECT_LT(grad_check(
                  [&] {
                    return weighted_sum(ops::concat_channels({a, b}));
                  },
                  {a, b}),
              kTol);
  }
}

TEST(Grad, AttentionPieces) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(900 + t);
    Tensor x = Tensor::randn({3, 8}, rng);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::split_heads(x, 2)); }, {x}),
              kTol);
    Tensor h = Tensor::randn({2, 3, 4}, rng);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::merge_heads(h)); },
                         {h}),
              kTol);
    Tensor a = Tensor::randn({2, 3, 4}, rng);
    Tensor b = Tensor::randn({2, 4, 5}, rng);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::bmm(a, b)); }, {a, b}),
              kTol);
    Tensor c = Tensor::randn({2, 5, 4}, rng);
    EXPECT_LT(grad_check([&] { return weighted_sum(ops::bmm_nt(a, c)); },
                         {a, c}),
              kTol);
  }
}

TEST(Grad, FusedDecoderKernels) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(1000 + t);
    Tensor f = Tensor::randn({3, 4, 4}, rng);
    Tensor gate = Tensor::rand_uniform({4, 4}, rng, 0.1, 0.9);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::scale_spatial(f, gate)); },
                  {f, gate}),
              kTol);
    Tensor kb = Tensor::randn({1, 4}, rng);
    EXPECT_LT(grad_check(
                  [&] { return weighted_sum(ops::dynamic_mask_head(f, kb)); },
                  {f, kb}),
              kTol);
  }
}

TEST(Grad, BceWithLogits) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(1100 + t);
    Tensor z = Tensor::randn({4, 4}, rng, 2.0);
    Tensor target = Tensor::rand_uniform({4, 4}, rng, 0.0, 1.0);
    EXPECT_LT(grad_check([&] { return ops::bce_with_logits_mean(z, target); },
                         {z}),
              kTol);
  }
}

TEST(Grad, BceDiceLoss) {
  LossConfig cfg;
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(1200 + t);
    Tensor z = Tensor::randn({5, 5}, rng, 2.0);
    std::uniform_int_distribution<int> bit(0, 1);
    std::vector<double> tv(25);
    for (double& v : tv) v = bit(rng);
    Tensor target = Tensor::from_data({5, 5}, tv);
    EXPECT_LT(grad_check([&] { return bce_dice_loss(z, target, cfg); }, {z}),
              kTol);
  }
}

TEST(Grad, SoftBoxGate) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(1300 + t);
    std::uniform_real_distribution<double> u(0.05, 0.4);
    const double x1 = u(rng), y1 = u(rng);
    Tensor box = Tensor::from_data({4}, {x1, y1, x1 + 0.3 + u(rng) * 0.2,
                                         y1 + 0.3 + u(rng) * 0.2});
    EXPECT_LT(grad_check(
                  [&] {
                    return ops::mean_all(ops::soft_box_gate_t(box, 9, 11, 20.0));
                  },
                  {box}),
              kTol);
  }
}

TEST(Grad, DecoderLayerEndToEnd) {
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(1400 + t);
    ParamStore store;
    TransformerLayerParams p =
        TransformerLayerParams::create(store, "layer", 8, 12, rng);
    Tensor q = Tensor::randn({2, 8}, rng);
    Tensor mem = Tensor::randn({4, 8}, rng);
    std::vector<Tensor> inputs = {q, mem};
    for (auto& [name, param] : store.items()) inputs.push_back(param);
    EXPECT_LT(grad_check(
                  [&] {
                    return weighted_sum(decoder_layer(q, mem, p, 2, 1e-5));
                  },
                  inputs),
              kTol);
  }
}

}  // namespace
}  // namespace boxseg
