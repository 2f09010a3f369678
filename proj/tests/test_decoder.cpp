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

#include <filesystem>
#include <random>

#include "boxseg/checkpoint.hpp"
#include "boxseg/decoder.hpp"
#include "boxseg/loss.hpp"
#include "boxseg/synthetic.hpp"
#include "testing_util.hpp"

namespace boxseg {
namespace {

using boxseg::testing::max_abs_diff;

DecoderConfig micro_config() {
  DecoderConfig c = tiny_config();
  return c;
}

void zero(Tensor t) {
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
}

TEST(Injector, NearIdentityAtInitialization) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 11);
  std::mt19937_64 rng(31);
  Tensor level = Tensor::randn({cfg.vit_channels[0], cfg.memory_h,
                                cfg.memory_w},
                               rng);
  Tensor x0 = ops::conv_1x1(level, p.injectors[0].proj_w,
                            p.injectors[0].proj_b);
  Tensor out = inject_spatial_features(level, p.injectors[0], cfg);
  double max_dev = 0.0, max_ref = 0.0;
  for (size_t i = 0; i < out.data().size(); ++i) {
    max_dev = std::max(max_dev, std::abs(out.data()[i] - x0.data()[i]));
    max_ref = std::max(max_ref, std::abs(x0.data()[i]));
  }
  EXPECT_LT(max_dev / max_ref, 1e-2);
}

TEST(Injector, ZeroScaleIsExactlyProjection) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 12);
  zero(p.injectors[0].scale);
  std::mt19937_64 rng(32);
  Tensor level = Tensor::randn({cfg.vit_channels[0], cfg.memory_h,
                                cfg.memory_w},
                               rng);
  Tensor x0 = ops::conv_1x1(level, p.injectors[0].proj_w,
                            p.injectors[0].proj_b);
  Tensor out = inject_spatial_features(level, p.injectors[0], cfg);
  EXPECT_EQ(out.data(), x0.data());
}

TEST(Injector, MatchesKernelComposition) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 13);
  std::mt19937_64 rng(33);
  Tensor level = Tensor::randn({cfg.vit_channels[0], cfg.memory_h,
                                cfg.memory_w},
                               rng);
  const InjectorParams& ip = p.injectors[0];
  Tensor x0 = ops::conv_1x1(level, ip.proj_w, ip.proj_b);
  Tensor branch = ops::gelu(ops::dwconv_3x3(
      ops::group_norm(x0, ip.gn_g, ip.gn_b, cfg.norm_groups, cfg.eps),
      ip.dw_w, ip.dw_b));
  Tensor expect = ops::add(x0, ops::scale_by(branch, ip.scale));
  Tensor out = inject_spatial_features(level, ip, cfg);
  EXPECT_LT(max_abs_diff(out.data(), expect.data()), 1e-12);
}

std::vector<Tensor> adapted_levels(const DecoderConfig& cfg,
                                   const DecoderParams& p,
                                   std::mt19937_64& rng) {
  std::vector<Tensor> out;
  for (int l = 0; l + 1 < cfg.num_vit_levels; ++l) {
    out.push_back(inject_spatial_features(
        Tensor::randn({cfg.vit_channels[l], cfg.memory_h, cfg.memory_w}, rng),
        p.injectors[l], cfg));
  }
  out.push_back(ops::conv_1x1(
      Tensor::randn({cfg.vit_channels.back(), cfg.memory_h, cfg.memory_w},
                    rng),
      p.top_proj_w, p.top_proj_b));
  return out;
}

TEST(BuildMemory, ZeroTokensAndPositionalGiveFusedMap) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 14);
  zero(p.p_mem);
  std::mt19937_64 rng(34);
  auto levels = adapted_levels(cfg, p, rng);
  Tensor t_mm = Tensor::zeros({cfg.memory_tokens(), cfg.mm_dim});
  auto [fused, mem] = build_memory(levels, t_mm, p, cfg);
  Tensor expect = ops::chw_to_tokens(fused);
  EXPECT_LT(max_abs_diff(mem.data(), expect.data()), 1e-12);
}

TEST(BuildMemory, FlattenRoundTripIsIdentity) {
  std::mt19937_64 rng(35);
  Tensor x = Tensor::randn({5, 4, 3}, rng);
  Tensor back = ops::tokens_to_chw(ops::chw_to_tokens(x), 4, 3);
  EXPECT_EQ(back.data(), x.data());
}

TEST(BuildMemory, TokenPathIsLinear) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 15);
  std::mt19937_64 rng(36);
  auto levels = adapted_levels(cfg, p, rng);
  Tensor t_mm = Tensor::randn({cfg.memory_tokens(), cfg.mm_dim}, rng);
  Tensor t_mm2 = ops::mul_scalar(t_mm, 2.0);
  auto [f1, mem1] = build_memory(levels, t_mm, p, cfg);
  auto [f2, mem2] = build_memory(levels, t_mm2, p, cfg);
  // doubling T_mm moves the memory by exactly W_mm * T_mm (bias cancels)
  Tensor delta = ops::sub(mem2, mem1);
  Tensor expect = ops::linear(t_mm, p.w_mm, Tensor::zeros({cfg.hidden_dim}));
  EXPECT_LT(max_abs_diff(delta.data(), expect.data()), 1e-9);
}

TEST(BuildMemory, WrongTokenCountIsError) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 16);
  std::mt19937_64 rng(37);
  auto levels = adapted_levels(cfg, p, rng);
  Tensor bad = Tensor::zeros({cfg.memory_tokens() + 1, cfg.mm_dim});
  EXPECT_THROW(build_memory(levels, bad, p, cfg), DimensionError);
}

TEST(BuildQuery, ZeroBoxMlpIgnoresGeometry) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 17);
  zero(p.box_w2);
  zero(p.box_b2);
  std::mt19937_64 rng(38);
  Tensor t_seg = Tensor::randn({1, cfg.seg_dim}, rng);
  Tensor qa = build_query(t_seg, {Box(0.1, 0.1, 0.3, 0.3)}, p, cfg);
  Tensor qb = build_query(t_seg, {Box(0.5, 0.4, 0.9, 0.95)}, p, cfg);
  EXPECT_LT(max_abs_diff(qa.data(), qb.data()), 1e-12);
}

TEST(BuildQuery, ZeroSegProjectionDependsOnlyOnBox) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 18);
  zero(p.w_seg);
  zero(p.b_seg);
  std::mt19937_64 rng(39);
  Tensor seg_a = Tensor::randn({1, cfg.seg_dim}, rng);
  Tensor seg_b = Tensor::randn({1, cfg.seg_dim}, rng);
  Box box(0.2, 0.25, 0.7, 0.65);
  Tensor qa = build_query(seg_a, {box}, p, cfg);
  Tensor qb = build_query(seg_b, {box}, p, cfg);
  EXPECT_LT(max_abs_diff(qa.data(), qb.data()), 1e-12);
}

TEST(BuildQuery, EqualGeometryGivesEqualQueries) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 19);
  std::mt19937_64 rng(40);
  Tensor t_seg = Tensor::randn({1, cfg.seg_dim}, rng);
  Tensor qa = build_query(t_seg, {Box(0.2, 0.3, 0.6, 0.7)}, p, cfg);
  Tensor qb = build_query(t_seg, {Box(0.2, 0.3, 0.6, 0.7)}, p, cfg);
  EXPECT_EQ(qa.data(), qb.data());
}

TEST(BuildQuery, MultiBoxUsesTightUnion) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 20);
  std::mt19937_64 rng(41);
  Tensor t_seg = Tensor::randn({1, cfg.seg_dim}, rng);
  std::vector<Box> boxes = {Box(0.1, 0.2, 0.3, 0.4), Box(0.5, 0.3, 0.8, 0.9)};
  Tensor qa = build_query(t_seg, boxes, p, cfg);
  Tensor qb = build_query(t_seg, {Box(0.1, 0.2, 0.8, 0.9)}, p, cfg);
  EXPECT_EQ(qa.data(), qb.data());
}

TEST(DecodeQuery, ZeroLayersIsIdentity) {
  DecoderConfig cfg = micro_config();
  cfg.decoder_layers = 0;
  DecoderParams p = build_decoder_params(cfg, 21);
  std::mt19937_64 rng(42);
  Tensor q0 = Tensor::randn({1, cfg.hidden_dim}, rng);
  Tensor mem = Tensor::randn({cfg.memory_tokens(), cfg.hidden_dim}, rng);
  Tensor q1 = decode_query(q0, mem, p, cfg);
  EXPECT_EQ(q1.data(), q0.data());
}

TEST(DecodeQuery, MatchesManualLayerStack) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 22);
  std::mt19937_64 rng(43);
  Tensor q0 = Tensor::randn({1, cfg.hidden_dim}, rng);
  Tensor mem = Tensor::randn({cfg.memory_tokens(), cfg.hidden_dim}, rng);
  Tensor expect = q0;
  for (const auto& layer : p.layers) {
    expect = decoder_layer(expect, mem, layer, cfg.attention_heads, cfg.eps);
  }
  Tensor q1 = decode_query(q0, mem, p, cfg);
  EXPECT_LT(max_abs_diff(q1.data(), expect.data()), 1e-10);
}

struct PixelFixture {
  DecoderConfig cfg;
  DecoderParams params;
  Tensor f_fuse;
  Tensor image;

  explicit PixelFixture(uint64_t seed)
      : cfg(micro_config()), params(build_decoder_params(cfg, seed)) {
    std::mt19937_64 rng(seed + 1);
    f_fuse = Tensor::randn({cfg.hidden_dim, cfg.memory_h, cfg.memory_w}, rng);
    image = Tensor::rand_uniform({3, cfg.stem_input_h(), cfg.stem_input_w()},
                                 rng, 0.0, 1.0);
  }
};

TEST(PixelFeatures, FullImageBoxMatchesUngatedFusion) {
  PixelFixture fx(23);
  fx.cfg.gate_alpha = 1e9;
  fx.cfg.enlargement_ratio = 0.0;
  PixelFeatures gated = build_pixel_features(
      fx.f_fuse, fx.image, {Box(0.0, 0.0, 1.0, 1.0)}, fx.params, fx.cfg);
  // oracle: same path with the gate forced to exactly one
  Tensor ones = Tensor::full({fx.cfg.pixel_h, fx.cfg.pixel_w}, 1.0);
  Tensor cat = ops::concat_channels(
      {gated.f_up, ops::scale_spatial(gated.f_cnn, ones)});
  Tensor expect = ops::conv_1x1(cat, fx.params.mixer_w, fx.params.mixer_b);
  EXPECT_LT(max_abs_diff(gated.f_pixel.data(), expect.data()), 1e-9);
}

TEST(PixelFeatures, FarOutsideBoxAttenuatesImageBranch) {
  PixelFixture fx(24);
  // small box in the top-left corner; alpha 20, no enlargement
  fx.cfg.enlargement_ratio = 0.0;
  PixelFeatures px = build_pixel_features(
      fx.f_fuse, fx.image, {Box(0.02, 0.02, 0.2, 0.2)}, fx.params, fx.cfg);
  const int64_t W = fx.cfg.pixel_w;
  for (int64_t i = 0; i < fx.cfg.pixel_h; ++i)
    for (int64_t j = 0; j < W; ++j) {
      const double pxx = (j + 0.5) / double(W);
      const double pyy = (i + 0.5) / double(fx.cfg.pixel_h);
      if (pxx - 0.2 >= 0.6 || pyy - 0.2 >= 0.6) {
        EXPECT_LT(px.gate.data()[i * W + j], 1e-4);
      }
    }
}

TEST(PixelFeatures, ShapeLawHolds) {
  PixelFixture fx(25);
  PixelFeatures px = build_pixel_features(
      fx.f_fuse, fx.image, {Box(0.2, 0.2, 0.8, 0.8)}, fx.params, fx.cfg);
  EXPECT_EQ(px.f_pixel.dim(1),
            fx.cfg.upsample_r1 * fx.cfg.upsample_r2 * fx.cfg.memory_h);
  EXPECT_EQ(px.f_pixel.dim(0), fx.cfg.pixel_dim);
  EXPECT_EQ(px.f_up.dim(1), fx.cfg.pixel_h);
  EXPECT_EQ(px.f_cnn.dim(1), fx.cfg.pixel_h);
}

TEST(PredictMask, ZeroKernelGivesConstantBias) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 26);
  zero(p.kern_w2);
  zero(p.kern_b2);
  p.kern_b2.mutable_data()[cfg.pixel_dim] = 0.37;  // bias slot only
  std::mt19937_64 rng(46);
  Tensor q = Tensor::randn({1, cfg.hidden_dim}, rng);
  Tensor f_pixel = Tensor::randn({cfg.pixel_dim, cfg.pixel_h, cfg.pixel_w},
                                 rng);
  Tensor logits = predict_mask(q, f_pixel, p);
  for (double v : logits.data()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(PredictMask, ConstantFeaturesGiveConstantLogits) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 27);
  std::mt19937_64 rng(47);
  Tensor q = Tensor::randn({1, cfg.hidden_dim}, rng);
  Tensor f_pixel = Tensor::full({cfg.pixel_dim, cfg.pixel_h, cfg.pixel_w},
                                0.8);
  Tensor logits = predict_mask(q, f_pixel, p);
  for (double v : logits.data()) EXPECT_NEAR(v, logits.data()[0], 1e-10);
}

TEST(PredictMask, MatchesPerPixelDotProductOracle) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 28);
  std::mt19937_64 rng(48);
  Tensor q = Tensor::randn({1, cfg.hidden_dim}, rng);
  Tensor f_pixel = Tensor::randn({cfg.pixel_dim, cfg.pixel_h, cfg.pixel_w},
                                 rng);
  Tensor kb = ops::linear(ops::gelu(ops::linear(q, p.kern_w1, p.kern_b1)),
                          p.kern_w2, p.kern_b2);
  Tensor logits = predict_mask(q, f_pixel, p);
  const int64_t HW = cfg.pixel_h * cfg.pixel_w;
  for (int64_t i = 0; i < HW; ++i) {
    double acc = kb.data()[cfg.pixel_dim];
    for (int64_t c = 0; c < cfg.pixel_dim; ++c)
      acc += kb.data()[c] * f_pixel.data()[c * HW + i];
    EXPECT_NEAR(logits.data()[i], acc, 1e-12);
  }
}

TEST(Refine, UniformPositiveMaskPoolsSpatialMean) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 29);
  std::mt19937_64 rng(49);
  Tensor q1 = Tensor::randn({1, cfg.hidden_dim}, rng);
  Tensor f_pixel = Tensor::randn({cfg.pixel_dim, cfg.pixel_h, cfg.pixel_w},
                                 rng);
  Tensor m1 = Tensor::full({cfg.pixel_h, cfg.pixel_w}, 40.0);
  RefineResult r = refine(q1, m1, f_pixel, p, cfg);
  const int64_t HW = cfg.pixel_h * cfg.pixel_w;
  for (int64_t c = 0; c < cfg.pixel_dim; ++c) {
    double mean = 0.0;
    for (int64_t i = 0; i < HW; ++i) mean += f_pixel.data()[c * HW + i];
    mean /= double(HW);
    EXPECT_NEAR(r.f_tar.data()[c], mean, 1e-10);
  }
}

TEST(Refine, UniformNegativeMaskPoolsToZero) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 30);
  std::mt19937_64 rng(50);
  Tensor q1 = Tensor::randn({1, cfg.hidden_dim}, rng);
  Tensor f_pixel = Tensor::randn({cfg.pixel_dim, cfg.pixel_h, cfg.pixel_w},
                                 rng);
  Tensor m1 = Tensor::full({cfg.pixel_h, cfg.pixel_w}, -40.0);
  RefineResult r = refine(q1, m1, f_pixel, p, cfg);
  for (double v : r.f_tar.data()) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(Refine, ConcentratedMaskPoolsSinglePixel) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 31);
  std::mt19937_64 rng(51);
  Tensor q1 = Tensor::randn({1, cfg.hidden_dim}, rng);
  Tensor f_pixel = Tensor::randn({cfg.pixel_dim, cfg.pixel_h, cfg.pixel_w},
                                 rng);
  Tensor m1 = Tensor::full({cfg.pixel_h, cfg.pixel_w}, -40.0);
  const int64_t HW = cfg.pixel_h * cfg.pixel_w;
  const int64_t pick = 5 * cfg.pixel_w + 7;
  m1.mutable_data()[pick] = 40.0;
  RefineResult r = refine(q1, m1, f_pixel, p, cfg);
  for (int64_t c = 0; c < cfg.pixel_dim; ++c) {
    EXPECT_NEAR(r.f_tar.data()[c], f_pixel.data()[c * HW + pick], 1e-6);
  }
}

TEST(PredictIou, ZeroHeadGivesHalf) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 32);
  zero(p.iou_w);
  zero(p.iou_b);
  std::mt19937_64 rng(52);
  Tensor q2 = Tensor::randn({1, cfg.hidden_dim}, rng);
  EXPECT_DOUBLE_EQ(predict_iou(q2, p).scalar_value(), 0.5);
}

TEST(PredictIou, MonotoneInPreActivation) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 33);
  std::fill(p.iou_w.mutable_data().begin(), p.iou_w.mutable_data().end(),
            1.0);
  zero(p.iou_b);
  Tensor lo = Tensor::full({1, cfg.hidden_dim}, -0.1);
  Tensor hi = Tensor::full({1, cfg.hidden_dim}, 0.2);
  EXPECT_LT(predict_iou(lo, p).scalar_value(),
            predict_iou(hi, p).scalar_value());
}

class ForwardFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = micro_config();
    params = build_decoder_params(cfg, 77);
    sample = generate_sample(4242, 0, cfg);
    inputs = sample_to_inputs(sample);
  }
  DecoderConfig cfg;
  DecoderParams params = build_decoder_params(tiny_config(), 0);
  SyntheticSample sample;
  DecoderInputs inputs;
};

TEST_F(ForwardFixture, DeterministicBitIdentical) {
  NoGradGuard ng;
  DecoderState a = forward(inputs, params, cfg, 64, 64);
  DecoderState b = forward(inputs, params, cfg, 64, 64);
  EXPECT_EQ(a.m2_logit.data(), b.m2_logit.data());
  EXPECT_EQ(a.m_hat.data(), b.m_hat.data());
  EXPECT_EQ(a.s_iou.data(), b.s_iou.data());
  EXPECT_EQ(a.q2.data(), b.q2.data());
}

TEST_F(ForwardFixture, OutputResolutionOnlyAffectsFinalMask) {
  NoGradGuard ng;
  DecoderState a = forward(inputs, params, cfg, 64, 64);
  DecoderState b = forward(inputs, params, cfg, 128, 128);
  EXPECT_EQ(a.m2_logit.data(), b.m2_logit.data());
  EXPECT_EQ(a.m_hat.shape(), (Shape{64, 64}));
  EXPECT_EQ(b.m_hat.shape(), (Shape{128, 128}));
}

TEST_F(ForwardFixture, BoxTranslationMovesGateAndPixels) {
  NoGradGuard ng;
  DecoderState a = forward(inputs, params, cfg, 32, 32);
  DecoderInputs moved = inputs;
  Box b0 = inputs.boxes[0];
  const double x1 = std::min(0.99, b0.x1 + 0.3);
  const double x2 = std::min(1.0, b0.x2 + 0.3);
  moved.boxes = {Box(x1, b0.y1, std::max(x2, x1 + 1e-3), b0.y2)};
  DecoderState b = forward(moved, params, cfg, 32, 32);
  double gate_diff = 0.0;
  for (size_t i = 0; i < a.gate.data().size(); ++i) {
    gate_diff = std::max(gate_diff,
                         std::abs(a.gate.data()[i] - b.gate.data()[i]));
  }
  EXPECT_GT(gate_diff, 0.3);
  EXPECT_GT(max_abs_diff(a.f_pixel.data(), b.f_pixel.data()), 1e-6);
}

TEST_F(ForwardFixture, GradientsReachEveryParameterGroup) {
  DecoderState st = forward(inputs, params, cfg, cfg.pixel_h, cfg.pixel_w);
  LossConfig loss_cfg;
  Tensor target = mask_to_tensor(sample.target_mask);
  Tensor loss = ops::add(bce_dice_loss(st.m2_logit, target, loss_cfg),
                         ops::sum_all(st.s_iou));
  loss = ops::add(loss, bce_dice_loss(st.m1_logit, target, loss_cfg));
  backward(loss);
  for (const auto& [name, param] : params.store.items()) {
    ASSERT_TRUE(param.has_grad()) << name;
    double mag = 0.0;
    for (double g : param.grad()) mag = std::max(mag, std::abs(g));
    EXPECT_GT(mag, 0.0) << "no gradient signal reached " << name;
  }
}

TEST(ParamBudget, DefaultProfileFitsBudget) {
  DecoderParams p = build_decoder_params(default_config(), 0);
  EXPECT_GE(p.total_scalars(), 15'000'000);
  EXPECT_LE(p.total_scalars(), 19'000'000);
}

TEST(Checkpoint, SaveLoadRoundTripAtFloatPrecision) {
  DecoderConfig cfg = micro_config();
  DecoderParams p = build_decoder_params(cfg, 55);
  const std::string path =
      (std::filesystem::temp_directory_path() / "ckpt_test.bskp").string();
  save_checkpoint(path, p.store.items(), {{"note", "test"}});

  DecoderParams q = build_decoder_params(cfg, 56);  // different init
  Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.meta.at("note"), "test");
  auto items = q.store.items();
  restore_tensors(ck, items);
  for (size_t i = 0; i < items.size(); ++i) {
    const auto& orig = p.store.items()[i].second.data();
    const auto& got = items[i].second.data();
    for (size_t k = 0; k < orig.size(); ++k) {
      EXPECT_NEAR(got[k], orig[k],
                  std::abs(orig[k]) * 1e-6 + 1e-7);  // fp32 payload
    }
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, MagicIsEnforced) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "bogus.bskp").string();
  std::ofstream(path) << "NOTBSKP nothing";
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace boxseg
