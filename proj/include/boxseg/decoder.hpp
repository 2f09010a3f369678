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

#include <memory>
#include <string>
#include <vector>

#include "boxseg/attention.hpp"
#include "boxseg/gate.hpp"
#include "boxseg/kernels.hpp"
#include "boxseg/params.hpp"

namespace boxseg {

struct DecoderConfig {
  // Feature geometry.
  int num_vit_levels = 3;
  std::vector<int64_t> vit_channels = {2560, 2560, 2560};
  int64_t mm_dim = 2560;
  int64_t seg_dim = 2560;
  int64_t hidden_dim = 256;
  int64_t memory_h = 16, memory_w = 16;
  int64_t pixel_h = 64, pixel_w = 64;
  int upsample_r1 = 2, upsample_r2 = 2;

  // Block widths.
  int fourier_frequencies = 8;
  int decoder_layers = 4;
  int64_t attention_heads = 8;
  int64_t ffn_dim = 2048;
  int64_t fuse_mid = 704;
  std::vector<int64_t> stem_widths = {64, 128, 256};
  int64_t up_mid = 512;
  int64_t up_out = 256;
  int64_t pixel_dim = 256;
  int64_t box_mlp_hidden = 512;
  int64_t kernel_hidden = 1024;
  int64_t ref_hidden = 1024;
  int64_t norm_groups = 32;

  // Scalars.
  double injector_scale_init = 1e-3;
  double gate_alpha = 20.0;
  double enlargement_ratio = 0.15;
  double eps = 1e-6;

  int64_t memory_tokens() const { return memory_h * memory_w; }
  // Three stride-2 stem convolutions: input resolution is 8x the pixel grid.
  int64_t stem_input_h() const { return pixel_h * 8; }
  int64_t stem_input_w() const { return pixel_w * 8; }

  void validate() const {
    if (num_vit_levels < 1 ||
        vit_channels.size() != static_cast<size_t>(num_vit_levels)) {
      throw ConfigError("config: vit_channels must list one extent per level");
    }
    if (hidden_dim % attention_heads != 0) {
      throw ConfigError("config: hidden_dim not divisible by attention_heads");
    }
    const int64_t r1 = upsample_r1, r2 = upsample_r2;
    if (pixel_h != r1 * r2 * memory_h || pixel_w != r1 * r2 * memory_w) {
      throw ConfigError("config: pixel grid must equal r1*r2 * memory grid");
    }
    if (hidden_dim % (r1 * r1) != 0 || up_mid % (r2 * r2) != 0) {
      throw ConfigError("config: upsample channel extents not divisible");
    }
    if (stem_widths.size() != 3) {
      throw ConfigError("config: stem expects three stride-2 widths");
    }
    if (hidden_dim % norm_groups != 0 || fuse_mid % norm_groups != 0) {
      throw ConfigError("config: group count must divide normalized widths");
    }
    if (decoder_layers < 0 || fourier_frequencies < 1 || eps <= 0) {
      throw ConfigError("config: invalid scalar field");
    }
  }
};

inline DecoderConfig default_config() { return DecoderConfig(); }

// Reduced profile for fast tests and the toy training run.
inline DecoderConfig tiny_config() {
  DecoderConfig c;
  c.num_vit_levels = 2;
  c.vit_channels = {32, 32};
  c.mm_dim = 64;
  c.seg_dim = 64;
  c.hidden_dim = 64;
  c.memory_h = c.memory_w = 8;
  c.pixel_h = c.pixel_w = 32;
  c.fourier_frequencies = 4;
  c.decoder_layers = 2;
  c.attention_heads = 4;
  c.ffn_dim = 128;
  c.fuse_mid = 64;
  c.stem_widths = {8, 16, 32};
  c.up_mid = 64;
  c.up_out = 32;
  c.pixel_dim = 32;
  c.box_mlp_hidden = 64;
  c.kernel_hidden = 64;
  c.ref_hidden = 64;
  c.norm_groups = 8;
  return c;
}

struct InjectorParams {
  Tensor proj_w, proj_b;  // 1x1 projection into the hidden dim
  Tensor gn_g, gn_b;
  Tensor dw_w, dw_b;
  Tensor scale;  // learnable scalar s
};

struct DecoderParams {
  DecoderConfig cfg;
  ParamStore store;

  std::vector<InjectorParams> injectors;  // levels 0 .. L-2
  Tensor top_proj_w, top_proj_b;          // level L-1: projection only

  Tensor fuse_conv_w, fuse_conv_b, fuse_gn_g, fuse_gn_b, fuse_out_w,
      fuse_out_b;
  Tensor w_mm, b_mm;
  Tensor p_mem;  // [D, Hm, Wm] learnable positional map

  Tensor box_w1, box_b1, box_w2, box_b2;
  Tensor w_seg, b_seg;
  Tensor q0_ln_g, q0_ln_b;

  std::vector<TransformerLayerParams> layers;

  Tensor stem_w1, stem_b1, stem_w2, stem_b2, stem_w3, stem_b3;
  Tensor up1_w, up1_b, up2_w, up2_b;
  Tensor mixer_w, mixer_b;

  Tensor kern_w1, kern_b1, kern_w2, kern_b2;
  Tensor ref_w1, ref_b1, ref_w2, ref_b2;
  Tensor q2_ln_g, q2_ln_b;
  Tensor iou_w, iou_b;

  int64_t total_scalars() const { return store.total_scalars(); }
};

inline DecoderParams build_decoder_params(const DecoderConfig& cfg,
                                          uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DecoderParams p;
  p.cfg = cfg;
  ParamStore& s = p.store;
  const int64_t D = cfg.hidden_dim;

  for (int l = 0; l + 1 < cfg.num_vit_levels; ++l) {
    const std::string pre = "injector." + std::to_string(l);
    InjectorParams ip;
    std::tie(ip.proj_w, ip.proj_b) =
        init::linear_params(s, pre + ".proj", D, cfg.vit_channels[l], rng);
    std::tie(ip.gn_g, ip.gn_b) = init::norm_params(s, pre + ".norm", D);
    ip.dw_w = s.add(pre + ".dw.weight", init::xavier({D, 3, 3}, 9, 9, rng));
    ip.dw_b = s.add(pre + ".dw.bias", Tensor::zeros({D}));
    ip.scale = s.add(pre + ".scale",
                     Tensor::full({1}, cfg.injector_scale_init));
    p.injectors.push_back(ip);
  }
  std::tie(p.top_proj_w, p.top_proj_b) = init::linear_params(
      s, "top_proj", D, cfg.vit_channels[cfg.num_vit_levels - 1], rng);

  std::tie(p.fuse_conv_w, p.fuse_conv_b) = init::conv3x3_params(
      s, "fuse.conv", cfg.fuse_mid, D * cfg.num_vit_levels, rng);
  std::tie(p.fuse_gn_g, p.fuse_gn_b) =
      init::norm_params(s, "fuse.norm", cfg.fuse_mid);
  std::tie(p.fuse_out_w, p.fuse_out_b) =
      init::linear_params(s, "fuse.out", D, cfg.fuse_mid, rng);

  std::tie(p.w_mm, p.b_mm) = init::linear_params(s, "mm_proj", D, cfg.mm_dim,
                                                 rng);
  p.p_mem = s.add("pos_mem", Tensor::randn({D, cfg.memory_h, cfg.memory_w},
                                           rng, 0.02));

  const int64_t ebox = 8 * cfg.fourier_frequencies;
  std::tie(p.box_w1, p.box_b1) =
      init::linear_params(s, "box_mlp.fc1", cfg.box_mlp_hidden, ebox, rng);
  std::tie(p.box_w2, p.box_b2) =
      init::linear_params(s, "box_mlp.fc2", D, cfg.box_mlp_hidden, rng);
  std::tie(p.w_seg, p.b_seg) = init::linear_params(s, "seg_proj", D,
                                                   cfg.seg_dim, rng);
  std::tie(p.q0_ln_g, p.q0_ln_b) = init::norm_params(s, "q0_norm", D);

  for (int l = 0; l < cfg.decoder_layers; ++l) {
    p.layers.push_back(TransformerLayerParams::create(
        s, "layer." + std::to_string(l), D, cfg.ffn_dim, rng));
  }

  std::tie(p.stem_w1, p.stem_b1) =
      init::conv3x3_params(s, "stem.conv1", cfg.stem_widths[0], 3, rng);
  std::tie(p.stem_w2, p.stem_b2) = init::conv3x3_params(
      s, "stem.conv2", cfg.stem_widths[1], cfg.stem_widths[0], rng);
  std::tie(p.stem_w3, p.stem_b3) = init::conv3x3_params(
      s, "stem.conv3", cfg.stem_widths[2], cfg.stem_widths[1], rng);

  const int64_t r1 = cfg.upsample_r1, r2 = cfg.upsample_r2;
  std::tie(p.up1_w, p.up1_b) =
      init::conv3x3_params(s, "up.conv1", cfg.up_mid, D / (r1 * r1), rng);
  std::tie(p.up2_w, p.up2_b) = init::conv3x3_params(
      s, "up.conv2", cfg.up_out, cfg.up_mid / (r2 * r2), rng);
  std::tie(p.mixer_w, p.mixer_b) = init::linear_params(
      s, "pixel_mixer", cfg.pixel_dim, cfg.up_out + cfg.stem_widths[2], rng);

  std::tie(p.kern_w1, p.kern_b1) =
      init::linear_params(s, "kernel_head.fc1", cfg.kernel_hidden, D, rng);
  std::tie(p.kern_w2, p.kern_b2) = init::linear_params(
      s, "kernel_head.fc2", cfg.pixel_dim + 1, cfg.kernel_hidden, rng);
  std::tie(p.ref_w1, p.ref_b1) =
      init::linear_params(s, "refine.fc1", cfg.ref_hidden, cfg.pixel_dim, rng);
  std::tie(p.ref_w2, p.ref_b2) =
      init::linear_params(s, "refine.fc2", D, cfg.ref_hidden, rng);
  std::tie(p.q2_ln_g, p.q2_ln_b) = init::norm_params(s, "q2_norm", D);
  std::tie(p.iou_w, p.iou_b) = init::linear_params(s, "iou_head", 1, D, rng);
  return p;
}

struct DecoderInputs {
  std::vector<Tensor> vis_features;  // L maps, level l is [C_l, Hm, Wm]
  Tensor t_mm;                       // [Hm*Wm, mm_dim]
  Tensor t_seg;                      // [1, seg_dim]
  std::vector<Box> boxes;
  Tensor image;  // [3, H, W], resized to the stem input resolution on entry
};

// Every named intermediate of one forward pass.
struct DecoderState {
  Tensor f_fuse;    // [D, Hm, Wm]
  Tensor f_mem;     // [Hm*Wm, D]
  Tensor q0, q1;    // [1, D]
  Tensor f_cnn;     // [stem_out, Hp, Wp]
  Tensor f_up;      // [up_out, Hp, Wp]
  Tensor gate;      // [Hp, Wp]
  Tensor f_pixel;   // [D', Hp, Wp]
  Tensor m1_logit;  // [Hp, Wp]
  Tensor f_tar;     // [D']
  Tensor q2;        // [1, D]
  Tensor m2_logit;  // [Hp, Wp]
  Tensor m_hat;     // [out_h, out_w]
  Tensor s_iou;     // [1]
};

// Eq-style injector: X0 + s * GELU(DWConv(GroupNorm(X0))) on the projected map.
inline Tensor inject_spatial_features(const Tensor& level_features,
                                      const InjectorParams& ip,
                                      const DecoderConfig& cfg) {
  Tensor x0 = ops::conv_1x1(level_features, ip.proj_w, ip.proj_b);
  Tensor branch = ops::gelu(ops::dwconv_3x3(
      ops::group_norm(x0, ip.gn_g, ip.gn_b, cfg.norm_groups, cfg.eps),
      ip.dw_w, ip.dw_b));
  return ops::add(x0, ops::scale_by(branch, ip.scale));
}

// Fuse adapted levels, add the projected multimodal map and the positional
// map, and flatten into transformer memory tokens.
inline std::pair<Tensor, Tensor> build_memory(
    const std::vector<Tensor>& adapted_levels, const Tensor& t_mm,
    const DecoderParams& p, const DecoderConfig& cfg) {
  for (const Tensor& t : adapted_levels) {
    if (t.dim(1) != cfg.memory_h || t.dim(2) != cfg.memory_w) {
      throw DimensionError("build_memory: level not on the memory grid");
    }
  }
  if (t_mm.rank() != 2 || t_mm.dim(0) != cfg.memory_tokens()) {
    throw DimensionError("build_memory: multimodal token count must be " +
                         std::to_string(cfg.memory_tokens()));
  }
  Tensor cat = ops::concat_channels(adapted_levels);
  Tensor fused = ops::conv_1x1(
      ops::gelu(ops::group_norm(
          ops::conv2d_3x3(cat, p.fuse_conv_w, p.fuse_conv_b, 1), p.fuse_gn_g,
          p.fuse_gn_b, cfg.norm_groups, cfg.eps)),
      p.fuse_out_w, p.fuse_out_b);
  Tensor mm_map = ops::tokens_to_chw(ops::linear(t_mm, p.w_mm, p.b_mm),
                                     cfg.memory_h, cfg.memory_w);
  Tensor mem = ops::add(ops::add(mm_map, fused), p.p_mem);
  return {fused, ops::chw_to_tokens(mem)};
}

// Q0 = LayerNorm(MLP_box(E_box) + W_seg * T_seg). Multiple boxes contribute
// their tight union to the query; the gate still sees each box.
inline Tensor build_query(const Tensor& t_seg, const std::vector<Box>& boxes,
                          const DecoderParams& p, const DecoderConfig& cfg) {
  if (boxes.empty()) throw DimensionError("build_query: at least one box");
  const Box query_box = Box::tight_union(boxes);
  std::vector<double> enc =
      encode_box(query_box, FourierConfig(cfg.fourier_frequencies));
  Tensor ebox = Tensor::from_data({1, static_cast<int64_t>(enc.size())},
                                  std::move(enc));
  Tensor geo = ops::linear(ops::gelu(ops::linear(ebox, p.box_w1, p.box_b1)),
                           p.box_w2, p.box_b2);
  Tensor sem = ops::linear(t_seg, p.w_seg, p.b_seg);
  return ops::layer_norm(ops::add(geo, sem), p.q0_ln_g, p.q0_ln_b, cfg.eps);
}

inline Tensor decode_query(const Tensor& q0, const Tensor& f_mem,
                           const DecoderParams& p, const DecoderConfig& cfg) {
  Tensor q = q0;
  for (const auto& layer : p.layers) {
    q = decoder_layer(q, f_mem, layer, cfg.attention_heads, cfg.eps);
  }
  return q;
}

struct PixelFeatures {
  Tensor f_cnn, f_up, gate, f_pixel;
};

// Stem over the image, box-gated shallow features, two-stage pixel-shuffle
// upsampling of the fused map, concat, and channel mixing down to D'.
inline PixelFeatures build_pixel_features(const Tensor& f_fuse,
                                          const Tensor& image,
                                          const std::vector<Box>& boxes,
                                          const DecoderParams& p,
                                          const DecoderConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("build_pixel_features: image must be [3,H,W]");
  }
  Tensor img = image;
  if (image.dim(1) != cfg.stem_input_h() || image.dim(2) != cfg.stem_input_w()) {
    img = ops::bilinear_resize(image, cfg.stem_input_h(), cfg.stem_input_w());
  }
  Tensor f_cnn = ops::gelu(ops::conv2d_3x3(
      ops::gelu(ops::conv2d_3x3(
          ops::gelu(ops::conv2d_3x3(img, p.stem_w1, p.stem_b1, 2)), p.stem_w2,
          p.stem_b2, 2)),
      p.stem_w3, p.stem_b3, 2));
  if (f_cnn.dim(1) != cfg.pixel_h || f_cnn.dim(2) != cfg.pixel_w) {
    throw DimensionError("build_pixel_features: stem output off the pixel grid");
  }

  GateField gate = rasterize_box_gates(boxes, cfg.pixel_h, cfg.pixel_w,
                                       cfg.gate_alpha, cfg.enlargement_ratio);

  Tensor up = ops::gelu(ops::conv2d_3x3(
      ops::pixel_shuffle(f_fuse, cfg.upsample_r1), p.up1_w, p.up1_b, 1));
  up = ops::gelu(ops::conv2d_3x3(ops::pixel_shuffle(up, cfg.upsample_r2),
                                 p.up2_w, p.up2_b, 1));
  if (up.dim(1) != cfg.pixel_h || up.dim(2) != cfg.pixel_w) {
    throw DimensionError("build_pixel_features: upsample output mismatch");
  }

  Tensor gated = ops::scale_spatial(f_cnn, gate.values);
  Tensor cat = ops::concat_channels({up, gated});
  Tensor mixed = ops::conv_1x1(cat, p.mixer_w, p.mixer_b);

  PixelFeatures out;
  out.f_cnn = f_cnn;
  out.f_up = up;
  out.gate = gate.values;
  out.f_pixel = mixed;
  return out;
}

// Dynamic mask prediction: the query generates a 1x1 kernel plus bias.
inline Tensor predict_mask(const Tensor& query, const Tensor& f_pixel,
                           const DecoderParams& p) {
  Tensor kb = ops::linear(ops::gelu(ops::linear(query, p.kern_w1, p.kern_b1)),
                          p.kern_w2, p.kern_b2);
  return ops::dynamic_mask_head(f_pixel, kb);
}

struct RefineResult {
  Tensor f_tar, q2, m2_logit;
};

// Mask-aware pooling of pixel evidence, projected back onto the query.
inline RefineResult refine(const Tensor& q1, const Tensor& m1_logit,
                           const Tensor& f_pixel, const DecoderParams& p,
                           const DecoderConfig& cfg) {
  Tensor soft = ops::sigmoid(m1_logit);
  Tensor num = ops::sum_spatial(ops::scale_spatial(f_pixel, soft));
  Tensor den = ops::add_scalar(ops::sum_all(soft), cfg.eps);
  Tensor f_tar = ops::div_by(num, den);
  Tensor proj = ops::linear(
      ops::gelu(ops::linear(ops::reshape(f_tar, {1, f_tar.numel()}), p.ref_w1,
                            p.ref_b1)),
      p.ref_w2, p.ref_b2);
  Tensor q2 = ops::layer_norm(ops::add(q1, proj), p.q2_ln_g, p.q2_ln_b,
                              cfg.eps);
  RefineResult r;
  r.f_tar = f_tar;
  r.q2 = q2;
  r.m2_logit = predict_mask(q2, f_pixel, p);
  return r;
}

// Bounded mask confidence from the refined query.
inline Tensor predict_iou(const Tensor& q2, const DecoderParams& p) {
  return ops::reshape(ops::sigmoid(ops::linear(q2, p.iou_w, p.iou_b)), {1});
}

inline DecoderState forward(const DecoderInputs& in, const DecoderParams& p,
                            const DecoderConfig& cfg, int64_t out_h,
                            int64_t out_w) {
  cfg.validate();
  if (in.vis_features.size() != static_cast<size_t>(cfg.num_vit_levels)) {
    throw DimensionError("forward: wrong number of feature levels");
  }
  for (int l = 0; l < cfg.num_vit_levels; ++l) {
    if (in.vis_features[l].dim(0) != cfg.vit_channels[l]) {
      throw DimensionError("forward: level channel mismatch at level " +
                           std::to_string(l));
    }
  }
  if (in.boxes.empty()) throw DimensionError("forward: at least one box");

  DecoderState st;
  std::vector<Tensor> adapted;
  for (int l = 0; l + 1 < cfg.num_vit_levels; ++l) {
    adapted.push_back(inject_spatial_features(in.vis_features[l],
                                              p.injectors[l], cfg));
  }
  adapted.push_back(ops::conv_1x1(in.vis_features[cfg.num_vit_levels - 1],
                                  p.top_proj_w, p.top_proj_b));
  std::tie(st.f_fuse, st.f_mem) = build_memory(adapted, in.t_mm, p, cfg);

  st.q0 = build_query(in.t_seg, in.boxes, p, cfg);
  st.q1 = decode_query(st.q0, st.f_mem, p, cfg);

  PixelFeatures px = build_pixel_features(st.f_fuse, in.image, in.boxes, p,
                                          cfg);
  st.f_cnn = px.f_cnn;
  st.f_up = px.f_up;
  st.gate = px.gate;
  st.f_pixel = px.f_pixel;

  st.m1_logit = predict_mask(st.q1, st.f_pixel, p);
  RefineResult r = refine(st.q1, st.m1_logit, st.f_pixel, p, cfg);
  st.f_tar = r.f_tar;
  st.q2 = r.q2;
  st.m2_logit = r.m2_logit;

  Tensor resized = ops::bilinear_resize(
      ops::reshape(st.m2_logit, {1, cfg.pixel_h, cfg.pixel_w}), out_h, out_w);
  st.m_hat = ops::reshape(resized, {out_h, out_w});
  st.s_iou = predict_iou(st.q2, p);
  return st;
}

}  // namespace boxseg
