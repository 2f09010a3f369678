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
#include "boxseg/params.hpp"

namespace boxseg {

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams create(ParamStore& store, const std::string& prefix,
                                int64_t dim, std::mt19937_64& rng) {
    AttentionParams p;
    std::tie(p.wq, p.bq) = init::linear_params(store, prefix + ".q", dim, dim, rng);
    std::tie(p.wk, p.bk) = init::linear_params(store, prefix + ".k", dim, dim, rng);
    std::tie(p.wv, p.bv) = init::linear_params(store, prefix + ".v", dim, dim, rng);
    std::tie(p.wo, p.bo) = init::linear_params(store, prefix + ".out", dim, dim, rng);
    return p;
  }
};

// Scaled dot-product multi-head attention over token-major operands.
inline Tensor multi_head_attention(const Tensor& query, const Tensor& memory,
                                   const AttentionParams& p, int64_t heads) {
  const int64_t dim = query.dim(1);
  if (dim % heads != 0) {
    throw ConfigError("attention: model dim not divisible by head count");
  }
  const int64_t dh = dim / heads;
  Tensor q = ops::linear(query, p.wq, p.bq);
  Tensor k = ops::linear(memory, p.wk, p.bk);
  Tensor v = ops::linear(memory, p.wv, p.bv);
  Tensor qh = ops::split_heads(q, heads);
  Tensor kh = ops::split_heads(k, heads);
  Tensor vh = ops::split_heads(v, heads);
  Tensor scores =
      ops::mul_scalar(ops::bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor probs = ops::softmax_lastdim(scores);
  Tensor ctx = ops::bmm(probs, vh);
  return ops::linear(ops::merge_heads(ctx), p.wo, p.bo);
}

struct TransformerLayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;

  static TransformerLayerParams create(ParamStore& store,
                                       const std::string& prefix, int64_t dim,
                                       int64_t ffn_dim, std::mt19937_64& rng) {
    TransformerLayerParams p;
    p.self_attn = AttentionParams::create(store, prefix + ".self", dim, rng);
    p.cross_attn = AttentionParams::create(store, prefix + ".cross", dim, rng);
    std::tie(p.ffn_w1, p.ffn_b1) =
        init::linear_params(store, prefix + ".ffn1", ffn_dim, dim, rng);
    std::tie(p.ffn_w2, p.ffn_b2) =
        init::linear_params(store, prefix + ".ffn2", dim, ffn_dim, rng);
    std::tie(p.ln1_g, p.ln1_b) = init::norm_params(store, prefix + ".ln1", dim);
    std::tie(p.ln2_g, p.ln2_b) = init::norm_params(store, prefix + ".ln2", dim);
    std::tie(p.ln3_g, p.ln3_b) = init::norm_params(store, prefix + ".ln3", dim);
    return p;
  }
};

// Post-norm transformer decoder layer: self-attention, cross-attention to the
// memory, position-wise feed-forward, each wrapped in residual + LayerNorm.
inline Tensor decoder_layer(const Tensor& query, const Tensor& memory,
                            const TransformerLayerParams& p, int64_t heads,
                            double eps) {
  Tensor x = ops::layer_norm(
      ops::add(query, multi_head_attention(query, query, p.self_attn, heads)),
      p.ln1_g, p.ln1_b, eps);
  x = ops::layer_norm(
      ops::add(x, multi_head_attention(x, memory, p.cross_attn, heads)),
      p.ln2_g, p.ln2_b, eps);
  Tensor h = ops::linear(ops::gelu(ops::linear(x, p.ffn_w1, p.ffn_b1)),
                         p.ffn_w2, p.ffn_b2);
  return ops::layer_norm(ops::add(x, h), p.ln3_g, p.ln3_b, eps);
}

}  // namespace boxseg
