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

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include "boxseg/decoder.hpp"
#include "boxseg/mask.hpp"

namespace boxseg {

// Rendered scene plus the fixed-projection pseudo features that stand in for
// backbone outputs.
struct SyntheticSample {
  Tensor image;           // [3, H, W] in [0,1]
  BinaryMask target_mask;  // at the decoder pixel grid
  Box target_box;          // tight box of target_mask, normalized
  int distractor_count = 0;
  int shape_id = 0;  // 0 circle, 1 rectangle, 2 triangle
  int color_id = 0;
  std::vector<Tensor> vis_features;
  Tensor t_mm;
  Tensor t_seg;
};

namespace synth {

struct ShapeSpec {
  int kind = 0;  // 0 circle, 1 rectangle, 2 triangle
  double cx = 0.5, cy = 0.5;
  double rx = 0.2, ry = 0.2;          // circle/rect extents
  std::array<double, 6> tri_xy{};     // triangle vertices
  int color_id = 0;
};

inline bool point_in_shape(const ShapeSpec& s, double x, double y) {
  switch (s.kind) {
    case 0: {
      const double dx = (x - s.cx) / s.rx, dy = (y - s.cy) / s.ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case 1:
      return std::abs(x - s.cx) <= s.rx && std::abs(y - s.cy) <= s.ry;
    default: {
      const double ax = s.tri_xy[0], ay = s.tri_xy[1];
      const double bx = s.tri_xy[2], by = s.tri_xy[3];
      const double cx = s.tri_xy[4], cy = s.tri_xy[5];
      const double d1 = (x - bx) * (ay - by) - (ax - bx) * (y - by);
      const double d2 = (x - cx) * (by - cy) - (bx - cx) * (y - cy);
      const double d3 = (x - ax) * (cy - ay) - (cx - ax) * (y - ay);
      const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
      const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
      return !(has_neg && has_pos);
    }
  }
}

inline const std::array<std::array<double, 3>, 6>& palette() {
  static const std::array<std::array<double, 3>, 6> p = {{
      {0.90, 0.15, 0.10},  // red
      {0.15, 0.75, 0.20},  // green
      {0.15, 0.30, 0.90},  // blue
      {0.95, 0.85, 0.15},  // yellow
      {0.85, 0.20, 0.85},  // magenta
      {0.15, 0.85, 0.85},  // cyan
  }};
  return p;
}

inline ShapeSpec random_shape(std::mt19937_64& rng, double target_ratio) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  ShapeSpec s;
  s.kind = static_cast<int>(uni(rng) * 3.0) % 3;
  // Size the shape so its analytic area is close to the requested ratio.
  const double stretch = 0.7 + 0.6 * uni(rng);
  switch (s.kind) {
    case 0: {
      const double r = std::sqrt(target_ratio / M_PI);
      s.rx = r * stretch;
      s.ry = r / stretch;
      break;
    }
    case 1: {
      const double h = 0.5 * std::sqrt(target_ratio);
      s.rx = h * stretch;
      s.ry = h / stretch;
      break;
    }
    default: {
      // Equilateral-ish triangle with jittered vertices.
      const double rad = std::sqrt(target_ratio / 1.3);
      s.rx = s.ry = rad;
      break;
    }
  }
  const double margin_x = std::min(0.45, s.rx * 1.1 + 0.02);
  const double margin_y = std::min(0.45, s.ry * 1.1 + 0.02);
  s.cx = margin_x + uni(rng) * (1.0 - 2 * margin_x);
  s.cy = margin_y + uni(rng) * (1.0 - 2 * margin_y);
  if (s.kind == 2) {
    const double base = uni(rng) * 2.0 * M_PI;
    for (int k = 0; k < 3; ++k) {
      const double ang = base + k * 2.0 * M_PI / 3.0 + (uni(rng) - 0.5) * 0.6;
      const double rr = s.rx * (0.8 + 0.4 * uni(rng));
      s.tri_xy[2 * k] = s.cx + rr * std::cos(ang);
      s.tri_xy[2 * k + 1] = s.cy + rr * std::sin(ang);
    }
  }
  return s;
}

// Per-cell descriptor: cell mean RGB, 2x2 sub-block mean RGB, and the cell
// center, averaged over a (2l+1)-cell neighborhood for level l.
inline constexpr int kDescriptorDim = 17;

inline std::vector<double> cell_descriptors(const Tensor& image, int64_t grid_h,
                                            int64_t grid_w, int level) {
  const int64_t H = image.dim(1), W = image.dim(2);
  const int64_t cell_h = H / grid_h, cell_w = W / grid_w;
  const double* img = image.data().data();
  auto mean_rgb = [&](int64_t y0, int64_t y1, int64_t x0, int64_t x1,
                      double* out) {
    y0 = std::max<int64_t>(0, y0);
    x0 = std::max<int64_t>(0, x0);
    y1 = std::min(H, y1);
    x1 = std::min(W, x1);
    const double n = static_cast<double>((y1 - y0) * (x1 - x0));
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      const double* plane = img + c * H * W;
      for (int64_t y = y0; y < y1; ++y)
        for (int64_t x = x0; x < x1; ++x) acc += plane[y * W + x];
      out[c] = acc / n;
    }
  };
  std::vector<double> desc(static_cast<size_t>(grid_h * grid_w) *
                           kDescriptorDim);
  const int64_t r = level;  // neighborhood radius in cells
  for (int64_t gy = 0; gy < grid_h; ++gy)
    for (int64_t gx = 0; gx < grid_w; ++gx) {
      double* d = desc.data() + (gy * grid_w + gx) * kDescriptorDim;
      const int64_t y0 = (gy - r) * cell_h, y1 = (gy + 1 + r) * cell_h;
      const int64_t x0 = (gx - r) * cell_w, x1 = (gx + 1 + r) * cell_w;
      mean_rgb(y0, y1, x0, x1, d);
      const int64_t my = gy * cell_h, mx = gx * cell_w;
      mean_rgb(my, my + cell_h / 2, mx, mx + cell_w / 2, d + 3);
      mean_rgb(my, my + cell_h / 2, mx + cell_w / 2, mx + cell_w, d + 6);
      mean_rgb(my + cell_h / 2, my + cell_h, mx, mx + cell_w / 2, d + 9);
      mean_rgb(my + cell_h / 2, my + cell_h, mx + cell_w / 2, mx + cell_w,
               d + 12);
      d[15] = (gx + 0.5) / static_cast<double>(grid_w);
      d[16] = (gy + 0.5) / static_cast<double>(grid_h);
    }
  return desc;
}

// Fixed projection matrices shared by every sample; the stand-in encoder is
// frozen, only the decoder trains. Cached per (rows, cols, salt).
inline Tensor fixed_projection(int64_t rows, int64_t cols, uint64_t salt) {
  static std::map<std::tuple<int64_t, int64_t, uint64_t>, Tensor> cache;
  auto key = std::make_tuple(rows, cols, salt);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::mt19937_64 rng(0xB0C5E600DEC0DEULL ^ salt);
  Tensor t = Tensor::randn({rows, cols}, rng, 1.0 / std::sqrt(double(cols)));
  cache.emplace(key, t);
  return t;
}

inline Tensor project_tokens(const std::vector<double>& desc, int64_t tokens,
                             const Tensor& proj) {
  const int64_t dim = proj.dim(0);
  std::vector<double> out(static_cast<size_t>(tokens * dim), 0.0);
  const double* p = proj.data().data();
  for (int64_t t = 0; t < tokens; ++t) {
    const double* d = desc.data() + t * kDescriptorDim;
    for (int64_t o = 0; o < dim; ++o) {
      const double* row = p + o * kDescriptorDim;
      double acc = 0.0;
      for (int k = 0; k < kDescriptorDim; ++k) acc += row[k] * d[k];
      out[t * dim + o] = acc;
    }
  }
  return Tensor::from_data({tokens, dim}, std::move(out));
}

}  // namespace synth

// Deterministic scene: one target plus 0-3 distractors with distinct colors,
// the target drawn last.
inline SyntheticSample generate_sample(uint64_t seed, uint64_t index,
                                       const DecoderConfig& cfg) {
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const int64_t H = cfg.stem_input_h(), W = cfg.stem_input_w();
  const int64_t Hp = cfg.pixel_h, Wp = cfg.pixel_w;
  const int64_t block = H / Hp;

  SyntheticSample s;
  for (int attempt = 0; attempt < 64; ++attempt) {
    // log-uniform target area in [0.02, 0.45] of the image
    const double ratio = std::exp(std::log(0.02) +
                                  uni(rng) * (std::log(0.45) - std::log(0.02)));
    synth::ShapeSpec target = synth::random_shape(rng, ratio);
    const int n_colors = static_cast<int>(synth::palette().size());
    target.color_id = static_cast<int>(uni(rng) * n_colors) % n_colors;

    const int n_distract = static_cast<int>(uni(rng) * 4.0) % 4;
    std::vector<synth::ShapeSpec> distractors;
    std::vector<int> used_colors = {target.color_id};
    for (int i = 0; i < n_distract; ++i) {
      const double dr = std::exp(std::log(0.01) +
                                 uni(rng) * (std::log(0.2) - std::log(0.01)));
      synth::ShapeSpec d = synth::random_shape(rng, dr);
      int col;
      do {
        col = static_cast<int>(uni(rng) * n_colors) % n_colors;
      } while (std::find(used_colors.begin(), used_colors.end(), col) !=
               used_colors.end());
      used_colors.push_back(col);
      d.color_id = col;
      distractors.push_back(d);
    }

    // Render: background, distractors, then the target on top.
    const double bg = 0.08 + 0.25 * uni(rng);
    std::array<double, 3> bg_rgb = {bg * (0.9 + 0.2 * uni(rng)),
                                    bg * (0.9 + 0.2 * uni(rng)),
                                    bg * (0.9 + 0.2 * uni(rng))};
    std::vector<double> img(static_cast<size_t>(3 * H * W));
    std::vector<uint8_t> target_hit(static_cast<size_t>(H * W), 0);
    std::normal_distribution<double> noise(0.0, 0.015);
    for (int64_t y = 0; y < H; ++y) {
      const double py = (y + 0.5) / static_cast<double>(H);
      for (int64_t x = 0; x < W; ++x) {
        const double px = (x + 0.5) / static_cast<double>(W);
        const std::array<double, 3>* rgb = &bg_rgb;
        for (const auto& d : distractors) {
          if (synth::point_in_shape(d, px, py)) {
            rgb = &synth::palette()[d.color_id];
          }
        }
        if (synth::point_in_shape(target, px, py)) {
          rgb = &synth::palette()[target.color_id];
          target_hit[y * W + x] = 1;
        }
        for (int c = 0; c < 3; ++c) {
          img[c * H * W + y * W + x] =
              std::clamp((*rgb)[c] + noise(rng), 0.0, 1.0);
        }
      }
    }

    // Majority coverage per pixel-grid cell.
    BinaryMask mask(static_cast<int>(Wp), static_cast<int>(Hp));
    const int64_t half_block = block * block / 2;
    for (int64_t my = 0; my < Hp; ++my)
      for (int64_t mx = 0; mx < Wp; ++mx) {
        int64_t cnt = 0;
        for (int64_t dy = 0; dy < block; ++dy)
          for (int64_t dx = 0; dx < block; ++dx)
            cnt += target_hit[(my * block + dy) * W + mx * block + dx];
        mask.set(static_cast<int>(mx), static_cast<int>(my),
                 cnt >= half_block ? 1 : 0);
      }

    const double mask_ratio =
        static_cast<double>(mask.area()) / static_cast<double>(Hp * Wp);
    if (mask.area() < 16 || mask_ratio < 0.015 || mask_ratio > 0.48) {
      continue;  // resample the scene
    }
    auto tb = mask.tight_box();
    s.image = Tensor::from_data({3, H, W}, std::move(img));
    s.target_mask = mask;
    s.target_box = Box((*tb)[0] / double(Wp), (*tb)[1] / double(Hp),
                       (*tb)[2] / double(Wp), (*tb)[3] / double(Hp));
    s.distractor_count = n_distract;
    s.shape_id = target.kind;
    s.color_id = target.color_id;
    break;
  }
  if (!s.image.defined()) {
    throw NumericError("synthetic generator failed to produce a valid scene");
  }

  // Pseudo backbone features from fixed random projections.
  for (int l = 0; l < cfg.num_vit_levels; ++l) {
    auto desc = synth::cell_descriptors(s.image, cfg.memory_h, cfg.memory_w, l);
    Tensor proj = synth::fixed_projection(cfg.vit_channels[l],
                                          synth::kDescriptorDim, 100 + l);
    Tensor tokens = synth::project_tokens(desc, cfg.memory_tokens(), proj);
    // feature map layout [C, Hm, Wm]
    std::vector<double> chw(static_cast<size_t>(cfg.vit_channels[l] *
                                                cfg.memory_tokens()));
    const int64_t HW = cfg.memory_tokens(), C = cfg.vit_channels[l];
    for (int64_t t = 0; t < HW; ++t)
      for (int64_t c = 0; c < C; ++c)
        chw[c * HW + t] = tokens.data()[t * C + c];
    s.vis_features.push_back(Tensor::from_data(
        {C, cfg.memory_h, cfg.memory_w}, std::move(chw)));
  }
  {
    auto desc = synth::cell_descriptors(s.image, cfg.memory_h, cfg.memory_w, 0);
    Tensor proj = synth::fixed_projection(cfg.mm_dim, synth::kDescriptorDim,
                                          200);
    s.t_mm = synth::project_tokens(desc, cfg.memory_tokens(), proj);
  }
  {
    std::vector<double> code(9, 0.0);
    code[s.shape_id] = 1.0;
    code[3 + s.color_id % 6] = 1.0;
    Tensor proj = synth::fixed_projection(cfg.seg_dim, 9, 300);
    std::vector<double> out(static_cast<size_t>(cfg.seg_dim), 0.0);
    for (int64_t o = 0; o < cfg.seg_dim; ++o) {
      double acc = 0.0;
      for (int k = 0; k < 9; ++k) acc += proj.data()[o * 9 + k] * code[k];
      out[o] = acc;
    }
    s.t_seg = Tensor::from_data({1, cfg.seg_dim}, std::move(out));
  }
  return s;
}

inline std::vector<SyntheticSample> generate_samples(uint64_t seed,
                                                     int64_t count,
                                                     const DecoderConfig& cfg,
                                                     int64_t start_index = 0) {
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    out.push_back(generate_sample(seed, static_cast<uint64_t>(start_index + i),
                                  cfg));
  }
  return out;
}

inline DecoderInputs sample_to_inputs(const SyntheticSample& s) {
  DecoderInputs in;
  in.vis_features = s.vis_features;
  in.t_mm = s.t_mm;
  in.t_seg = s.t_seg;
  in.boxes = {s.target_box};
  in.image = s.image;
  return in;
}

}  // namespace boxseg
