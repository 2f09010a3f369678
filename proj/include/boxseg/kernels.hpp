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

#include <cmath>

#include "boxseg/tensor.hpp"

namespace boxseg {
namespace ops {

namespace detail_ops {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

inline const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
inline const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);

inline double sigmoid_scalar(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail_ops

// ---------------------------------------------------------------------------
// Elementwise arithmetic (same-shape operands)
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.shape() == b.shape(),
                      "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  auto an = a.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(a.shape(), "add", {a, b},
                                   [an, bn](detail::TensorNode& y) {
                                     const auto& gy = y.grad;
                                     if (an->requires_grad)
                                       for (size_t i = 0; i < gy.size(); ++i)
                                         an->grad[i] += gy[i];
                                     if (bn->requires_grad)
                                       for (size_t i = 0; i < gy.size(); ++i)
                                         bn->grad[i] += gy[i];
                                   });
  auto& o = out.mutable_data();
  const auto& da = a.data();
  const auto& db = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
  out.check_finite("add");
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.shape() == b.shape(),
                      "sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  auto an = a.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(a.shape(), "sub", {a, b},
                                   [an, bn](detail::TensorNode& y) {
                                     const auto& gy = y.grad;
                                     if (an->requires_grad)
                                       for (size_t i = 0; i < gy.size(); ++i)
                                         an->grad[i] += gy[i];
                                     if (bn->requires_grad)
                                       for (size_t i = 0; i < gy.size(); ++i)
                                         bn->grad[i] -= gy[i];
                                   });
  auto& o = out.mutable_data();
  const auto& da = a.data();
  const auto& db = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] - db[i];
  out.check_finite("sub");
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.shape() == b.shape(),
                      "mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  auto an = a.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      a.shape(), "mul", {a, b}, [an, bn](detail::TensorNode& y) {
        const auto& gy = y.grad;
        if (an->requires_grad)
          for (size_t i = 0; i < gy.size(); ++i)
            an->grad[i] += gy[i] * bn->data[i];
        if (bn->requires_grad)
          for (size_t i = 0; i < gy.size(); ++i)
            bn->grad[i] += gy[i] * an->data[i];
      });
  auto& o = out.mutable_data();
  const auto& da = a.data();
  const auto& db = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] * db[i];
  out.check_finite("mul");
  return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
  auto an = a.node();
  Tensor out = Tensor::make_result(a.shape(), "add_scalar", {a},
                                   [an](detail::TensorNode& y) {
                                     if (!an->requires_grad) return;
                                     for (size_t i = 0; i < y.grad.size(); ++i)
                                       an->grad[i] += y.grad[i];
                                   });
  auto& o = out.mutable_data();
  const auto& da = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] + c;
  out.check_finite("add_scalar");
  return out;
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  auto an = a.node();
  Tensor out = Tensor::make_result(a.shape(), "mul_scalar", {a},
                                   [an, c](detail::TensorNode& y) {
                                     if (!an->requires_grad) return;
                                     for (size_t i = 0; i < y.grad.size(); ++i)
                                       an->grad[i] += y.grad[i] * c;
                                   });
  auto& o = out.mutable_data();
  const auto& da = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] * c;
  out.check_finite("mul_scalar");
  return out;
}

// Pointwise maximum; ties route the gradient to the first operand.
inline Tensor max_elem(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.shape() == b.shape(), "max_elem: shape mismatch");
  auto an = a.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      a.shape(), "max_elem", {a, b}, [an, bn](detail::TensorNode& y) {
        const auto& gy = y.grad;
        for (size_t i = 0; i < gy.size(); ++i) {
          if (an->data[i] >= bn->data[i]) {
            if (an->requires_grad) an->grad[i] += gy[i];
          } else if (bn->requires_grad) {
            bn->grad[i] += gy[i];
          }
        }
      });
  auto& o = out.mutable_data();
  const auto& da = a.data();
  const auto& db = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = std::max(da[i], db[i]);
  return out;
}

// Multiply a tensor by a learnable scalar (shape [1]).
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
  detail_ops::require(s.numel() == 1, "scale_by: scale must be a scalar");
  auto xn = x.node();
  auto sn = s.node();
  Tensor out = Tensor::make_result(
      x.shape(), "scale_by", {x, s}, [xn, sn](detail::TensorNode& y) {
        const auto& gy = y.grad;
        const double sv = sn->data[0];
        if (xn->requires_grad)
          for (size_t i = 0; i < gy.size(); ++i) xn->grad[i] += gy[i] * sv;
        if (sn->requires_grad) {
          double acc = 0.0;
          for (size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xn->data[i];
          sn->grad[0] += acc;
        }
      });
  auto& o = out.mutable_data();
  const auto& dx = x.data();
  const double sv = s.data()[0];
  for (size_t i = 0; i < o.size(); ++i) o[i] = dx[i] * sv;
  out.check_finite("scale_by");
  return out;
}

// Divide a tensor by a strictly positive scalar tensor (shape [1]).
inline Tensor div_by(const Tensor& x, const Tensor& s) {
  detail_ops::require(s.numel() == 1, "div_by: divisor must be a scalar");
  auto xn = x.node();
  auto sn = s.node();
  Tensor out = Tensor::make_result(
      x.shape(), "div_by", {x, s}, [xn, sn](detail::TensorNode& y) {
        const auto& gy = y.grad;
        const double sv = sn->data[0];
        if (xn->requires_grad)
          for (size_t i = 0; i < gy.size(); ++i) xn->grad[i] += gy[i] / sv;
        if (sn->requires_grad) {
          double acc = 0.0;
          for (size_t i = 0; i < gy.size(); ++i) acc += gy[i] * y.data[i];
          sn->grad[0] -= acc / sv;
        }
      });
  auto& o = out.mutable_data();
  const auto& dx = x.data();
  const double sv = s.data()[0];
  for (size_t i = 0; i < o.size(); ++i) o[i] = dx[i] / sv;
  out.check_finite("div_by");
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  auto xn = x.node();
  Tensor out = Tensor::make_result({1}, "sum_all", {x},
                                   [xn](detail::TensorNode& y) {
                                     if (!xn->requires_grad) return;
                                     const double g = y.grad[0];
                                     for (auto& v : xn->grad) v += g;
                                   });
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.mutable_data()[0] = acc;
  out.check_finite("sum_all");
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  auto xn = x.node();
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::make_result({1}, "mean_all", {x},
                                   [xn, inv_n](detail::TensorNode& y) {
                                     if (!xn->requires_grad) return;
                                     const double g = y.grad[0] * inv_n;
                                     for (auto& v : xn->grad) v += g;
                                   });
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.mutable_data()[0] = acc * inv_n;
  out.check_finite("mean_all");
  return out;
}

// [C,H,W] -> [C]: sum over the spatial axes.
inline Tensor sum_spatial(const Tensor& x) {
  detail_ops::require(x.rank() == 3, "sum_spatial expects [C,H,W]");
  const int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      {C}, "sum_spatial", {x}, [xn, C, HW](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t c = 0; c < C; ++c) {
          const double g = y.grad[c];
          double* gx = xn->grad.data() + c * HW;
          for (int64_t i = 0; i < HW; ++i) gx[i] += g;
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int64_t i = 0; i < HW; ++i) acc += dx[c * HW + i];
    o[c] = acc;
  }
  out.check_finite("sum_spatial");
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline Tensor sigmoid(const Tensor& x) {
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      x.shape(), "sigmoid", {x}, [xn](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (size_t i = 0; i < y.grad.size(); ++i) {
          const double s = y.data[i];
          xn->grad[i] += y.grad[i] * s * (1.0 - s);
        }
      });
  auto& o = out.mutable_data();
  const auto& dx = x.data();
  for (size_t i = 0; i < o.size(); ++i)
    o[i] = detail_ops::sigmoid_scalar(dx[i]);
  out.check_finite("sigmoid");
  return out;
}

inline Tensor gelu(const Tensor& x) {
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      x.shape(), "gelu", {x}, [xn](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (size_t i = 0; i < y.grad.size(); ++i) {
          const double v = xn->data[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * detail_ops::kInvSqrt2));
          const double pdf = detail_ops::kInvSqrt2Pi * std::exp(-0.5 * v * v);
          xn->grad[i] += y.grad[i] * (cdf + v * pdf);
        }
      });
  auto& o = out.mutable_data();
  const auto& dx = x.data();
  for (size_t i = 0; i < o.size(); ++i) {
    const double v = dx[i];
    o[i] = 0.5 * v * (1.0 + std::erf(v * detail_ops::kInvSqrt2));
  }
  out.check_finite("gelu");
  return out;
}

// Softmax over the last axis; rows are every leading-index combination.
inline Tensor softmax_lastdim(const Tensor& x) {
  detail_ops::require(x.rank() >= 1, "softmax: rank >= 1 required");
  const int64_t D = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / D;
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      x.shape(), "softmax", {x}, [xn, rows, D](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t r = 0; r < rows; ++r) {
          const double* s = y.data.data() + r * D;
          const double* gy = y.grad.data() + r * D;
          double dot = 0.0;
          for (int64_t j = 0; j < D; ++j) dot += gy[j] * s[j];
          double* gx = xn->grad.data() + r * D;
          for (int64_t j = 0; j < D; ++j) gx[j] += s[j] * (gy[j] - dot);
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = dx + r * D;
    double mx = row[0];
    for (int64_t j = 1; j < D; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < D; ++j) z += std::exp(row[j] - mx);
    const double inv_z = 1.0 / z;
    for (int64_t j = 0; j < D; ++j)
      o[r * D + j] = std::exp(row[j] - mx) * inv_z;
  }
  out.check_finite("softmax");
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.rank() == 2 && b.rank() == 2,
                      "matmul expects rank-2 operands");
  detail_ops::require(a.dim(1) == b.dim(0),
                      "matmul: inner extents disagree: " +
                          shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  auto an = a.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      {M, N}, "matmul", {a, b}, [an, bn, M, K, N](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        if (an->requires_grad) {
          // gA = gY * B^T
          double* ga = an->grad.data();
          const double* db = bn->data.data();
          for (int64_t m = 0; m < M; ++m)
            for (int64_t k = 0; k < K; ++k) {
              double acc = 0.0;
              for (int64_t n = 0; n < N; ++n)
                acc += gy[m * N + n] * db[k * N + n];
              ga[m * K + k] += acc;
            }
        }
        if (bn->requires_grad) {
          // gB = A^T * gY
          double* gb = bn->grad.data();
          const double* da = an->data.data();
          for (int64_t m = 0; m < M; ++m)
            for (int64_t k = 0; k < K; ++k) {
              const double av = da[m * K + k];
              for (int64_t n = 0; n < N; ++n)
                gb[k * N + n] += av * gy[m * N + n];
            }
        }
      });
  auto& o = out.mutable_data();
  const double* da = a.data().data();
  const double* db = b.data().data();
  for (int64_t m = 0; m < M; ++m) {
    double* orow = o.data() + m * N;
    for (int64_t k = 0; k < K; ++k) {
      const double av = da[m * K + k];
      const double* brow = db + k * N;
      for (int64_t n = 0; n < N; ++n) orow[n] += av * brow[n];
    }
  }
  out.check_finite("matmul");
  return out;
}

// Token-major affine map: y[N,Dout] = x[N,Din] * W^T + b.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail_ops::require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
                      "linear expects x[N,Din], w[Dout,Din], b[Dout]");
  detail_ops::require(x.dim(1) == w.dim(1) && w.dim(0) == b.dim(0),
                      "linear: dimension mismatch " + shape_str(x.shape()) +
                          " vs " + shape_str(w.shape()));
  const int64_t N = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      {N, Dout}, "linear", {x, w, b},
      [xn, wn, bn, N, Din, Dout](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        if (xn->requires_grad) {
          double* gx = xn->grad.data();
          const double* dw = wn->data.data();
          for (int64_t n = 0; n < N; ++n)
            for (int64_t o = 0; o < Dout; ++o) {
              const double g = gy[n * Dout + o];
              const double* wrow = dw + o * Din;
              double* gxrow = gx + n * Din;
              for (int64_t i = 0; i < Din; ++i) gxrow[i] += g * wrow[i];
            }
        }
        if (wn->requires_grad) {
          double* gw = wn->grad.data();
          const double* dx = xn->data.data();
          for (int64_t n = 0; n < N; ++n)
            for (int64_t o = 0; o < Dout; ++o) {
              const double g = gy[n * Dout + o];
              const double* xrow = dx + n * Din;
              double* gwrow = gw + o * Din;
              for (int64_t i = 0; i < Din; ++i) gwrow[i] += g * xrow[i];
            }
        }
        if (bn->requires_grad) {
          double* gb = bn->grad.data();
          for (int64_t n = 0; n < N; ++n)
            for (int64_t o = 0; o < Dout; ++o) gb[o] += gy[n * Dout + o];
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  const double* dw = w.data().data();
  const double* db = b.data().data();
  for (int64_t n = 0; n < N; ++n) {
    double* orow = o.data() + n * Dout;
    const double* xrow = dx + n * Din;
    for (int64_t oo = 0; oo < Dout; ++oo) {
      const double* wrow = dw + oo * Din;
      double acc = db[oo];
      for (int64_t i = 0; i < Din; ++i) acc += xrow[i] * wrow[i];
      orow[oo] = acc;
    }
  }
  out.check_finite("linear");
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// Per-pixel linear map: x[C,H,W], w[C',C], b[C'] -> [C',H,W].
inline Tensor conv_1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail_ops::require(x.rank() == 3 && w.rank() == 2 && b.rank() == 1,
                      "conv_1x1 expects x[C,H,W], w[C',C], b[C']");
  detail_ops::require(
      x.dim(0) == w.dim(1) && w.dim(0) == b.dim(0),
      "conv_1x1: channel mismatch " + shape_str(x.shape()) + " vs " +
          shape_str(w.shape()));
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int64_t C2 = w.dim(0), HW = H * W;
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      {C2, H, W}, "conv_1x1", {x, w, b},
      [xn, wn, bn, C, C2, HW](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        if (xn->requires_grad) {
          double* gx = xn->grad.data();
          const double* dw = wn->data.data();
          for (int64_t co = 0; co < C2; ++co)
            for (int64_t ci = 0; ci < C; ++ci) {
              const double wv = dw[co * C + ci];
              const double* gyp = gy + co * HW;
              double* gxp = gx + ci * HW;
              for (int64_t i = 0; i < HW; ++i) gxp[i] += wv * gyp[i];
            }
        }
        if (wn->requires_grad) {
          double* gw = wn->grad.data();
          const double* dx = xn->data.data();
          for (int64_t co = 0; co < C2; ++co)
            for (int64_t ci = 0; ci < C; ++ci) {
              const double* gyp = gy + co * HW;
              const double* dxp = dx + ci * HW;
              double acc = 0.0;
              for (int64_t i = 0; i < HW; ++i) acc += gyp[i] * dxp[i];
              gw[co * C + ci] += acc;
            }
        }
        if (bn->requires_grad) {
          double* gb = bn->grad.data();
          for (int64_t co = 0; co < C2; ++co) {
            const double* gyp = gy + co * HW;
            double acc = 0.0;
            for (int64_t i = 0; i < HW; ++i) acc += gyp[i];
            gb[co] += acc;
          }
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  const double* dw = w.data().data();
  const double* db = b.data().data();
  for (int64_t co = 0; co < C2; ++co) {
    double* op = o.data() + co * HW;
    for (int64_t i = 0; i < HW; ++i) op[i] = db[co];
    for (int64_t ci = 0; ci < C; ++ci) {
      const double wv = dw[co * C + ci];
      const double* xp = dx + ci * HW;
      for (int64_t i = 0; i < HW; ++i) op[i] += wv * xp[i];
    }
  }
  out.check_finite("conv_1x1");
  return out;
}

// 3x3 convolution, zero padding 1, stride 1 or 2.
// x[C,H,W], w[C',C,3,3], b[C'] -> [C',H',W'] with H' = (H-1)/stride + 1.
inline Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b,
                         int stride = 1) {
  detail_ops::require(x.rank() == 3 && w.rank() == 4 && b.rank() == 1,
                      "conv2d_3x3 expects x[C,H,W], w[C',C,3,3], b[C']");
  detail_ops::require(w.dim(2) == 3 && w.dim(3) == 3,
                      "conv2d_3x3: kernel must be 3x3");
  detail_ops::require(x.dim(0) == w.dim(1) && w.dim(0) == b.dim(0),
                      "conv2d_3x3: channel mismatch");
  detail_ops::require(stride == 1 || stride == 2,
                      "conv2d_3x3: stride must be 1 or 2");
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int64_t C2 = w.dim(0);
  const int64_t Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      {C2, Ho, Wo}, "conv2d_3x3", {x, w, b},
      [xn, wn, bn, C, H, W, C2, Ho, Wo, stride](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        const double* dx = xn->data.data();
        const double* dw = wn->data.data();
        for (int64_t co = 0; co < C2; ++co) {
          const double* gyp = gy + co * Ho * Wo;
          if (bn->requires_grad) {
            double acc = 0.0;
            for (int64_t i = 0; i < Ho * Wo; ++i) acc += gyp[i];
            bn->grad[co] += acc;
          }
          for (int64_t ci = 0; ci < C; ++ci) {
            const double* xp = dx + ci * H * W;
            double* gxp = xn->requires_grad ? xn->grad.data() + ci * H * W
                                            : nullptr;
            const double* wp = dw + (co * C + ci) * 9;
            double* gwp = wn->requires_grad ? wn->grad.data() + (co * C + ci) * 9
                                            : nullptr;
            for (int64_t oy = 0; oy < Ho; ++oy)
              for (int64_t ox = 0; ox < Wo; ++ox) {
                const double g = gyp[oy * Wo + ox];
                if (g == 0.0) continue;
                const int64_t iy0 = oy * stride - 1, ix0 = ox * stride - 1;
                for (int64_t ky = 0; ky < 3; ++ky) {
                  const int64_t iy = iy0 + ky;
                  if (iy < 0 || iy >= H) continue;
                  for (int64_t kx = 0; kx < 3; ++kx) {
                    const int64_t ix = ix0 + kx;
                    if (ix < 0 || ix >= W) continue;
                    if (gxp) gxp[iy * W + ix] += g * wp[ky * 3 + kx];
                    if (gwp) gwp[ky * 3 + kx] += g * xp[iy * W + ix];
                  }
                }
              }
          }
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  const double* dw = w.data().data();
  const double* db = b.data().data();
  for (int64_t co = 0; co < C2; ++co) {
    double* op = o.data() + co * Ho * Wo;
    for (int64_t i = 0; i < Ho * Wo; ++i) op[i] = db[co];
    for (int64_t ci = 0; ci < C; ++ci) {
      const double* xp = dx + ci * H * W;
      const double* wp = dw + (co * C + ci) * 9;
      for (int64_t oy = 0; oy < Ho; ++oy) {
        const int64_t iy0 = oy * stride - 1;
        double* orow = op + oy * Wo;
        for (int64_t ky = 0; ky < 3; ++ky) {
          const int64_t iy = iy0 + ky;
          if (iy < 0 || iy >= H) continue;
          const double* xrow = xp + iy * W;
          const double w0 = wp[ky * 3 + 0], w1 = wp[ky * 3 + 1],
                       w2 = wp[ky * 3 + 2];
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix0 = ox * stride - 1;
            double acc = 0.0;
            if (ix0 >= 0) acc += w0 * xrow[ix0];
            if (ix0 + 1 < W) acc += w1 * xrow[ix0 + 1];
            if (ix0 + 2 < W) acc += w2 * xrow[ix0 + 2];
            orow[ox] += acc;
          }
        }
      }
    }
  }
  out.check_finite("conv2d_3x3");
  return out;
}

// Depthwise 3x3, zero padding 1, stride 1: x[C,H,W], w[C,3,3], b[C].
inline Tensor dwconv_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail_ops::require(x.rank() == 3 && w.rank() == 3 && b.rank() == 1,
                      "dwconv_3x3 expects x[C,H,W], w[C,3,3], b[C]");
  detail_ops::require(w.dim(1) == 3 && w.dim(2) == 3,
                      "dwconv_3x3: kernel must be 3x3");
  detail_ops::require(x.dim(0) == w.dim(0) && x.dim(0) == b.dim(0),
                      "dwconv_3x3: channel mismatch");
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      {C, H, W}, "dwconv_3x3", {x, w, b},
      [xn, wn, bn, C, H, W](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        const double* dx = xn->data.data();
        const double* dw = wn->data.data();
        for (int64_t c = 0; c < C; ++c) {
          const double* gyp = gy + c * H * W;
          const double* xp = dx + c * H * W;
          const double* wp = dw + c * 9;
          double* gxp = xn->requires_grad ? xn->grad.data() + c * H * W
                                          : nullptr;
          double* gwp = wn->requires_grad ? wn->grad.data() + c * 9 : nullptr;
          if (bn->requires_grad) {
            double acc = 0.0;
            for (int64_t i = 0; i < H * W; ++i) acc += gyp[i];
            bn->grad[c] += acc;
          }
          for (int64_t oy = 0; oy < H; ++oy)
            for (int64_t ox = 0; ox < W; ++ox) {
              const double g = gyp[oy * W + ox];
              if (g == 0.0) continue;
              for (int64_t ky = 0; ky < 3; ++ky) {
                const int64_t iy = oy - 1 + ky;
                if (iy < 0 || iy >= H) continue;
                for (int64_t kx = 0; kx < 3; ++kx) {
                  const int64_t ix = ox - 1 + kx;
                  if (ix < 0 || ix >= W) continue;
                  if (gxp) gxp[iy * W + ix] += g * wp[ky * 3 + kx];
                  if (gwp) gwp[ky * 3 + kx] += g * xp[iy * W + ix];
                }
              }
            }
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  const double* dw = w.data().data();
  const double* db = b.data().data();
  for (int64_t c = 0; c < C; ++c) {
    double* op = o.data() + c * H * W;
    const double* xp = dx + c * H * W;
    const double* wp = dw + c * 9;
    for (int64_t oy = 0; oy < H; ++oy) {
      double* orow = op + oy * W;
      for (int64_t ox = 0; ox < W; ++ox) orow[ox] = db[c];
      for (int64_t ky = 0; ky < 3; ++ky) {
        const int64_t iy = oy - 1 + ky;
        if (iy < 0 || iy >= H) continue;
        const double* xrow = xp + iy * W;
        const double w0 = wp[ky * 3 + 0], w1 = wp[ky * 3 + 1],
                     w2 = wp[ky * 3 + 2];
        for (int64_t ox = 0; ox < W; ++ox) {
          double acc = 0.0;
          if (ox - 1 >= 0) acc += w0 * xrow[ox - 1];
          acc += w1 * xrow[ox];
          if (ox + 1 < W) acc += w2 * xrow[ox + 1];
          orow[ox] += acc;
        }
      }
    }
  }
  out.check_finite("dwconv_3x3");
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// GroupNorm with affine parameters. x[C,H,W], gamma[C], beta[C].
inline Tensor group_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, int64_t groups, double eps) {
  detail_ops::require(x.rank() == 3, "group_norm expects [C,H,W]");
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (groups < 1 || C % groups != 0) {
    throw ConfigError("group_norm: C=" + std::to_string(C) +
                      " not divisible by groups=" + std::to_string(groups));
  }
  if (eps <= 0) throw ConfigError("group_norm: eps must be positive");
  detail_ops::require(gamma.numel() == C && beta.numel() == C,
                      "group_norm: affine parameter shape mismatch");
  const int64_t cpg = C / groups;
  const int64_t group_elems = cpg * H * W;
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();

  // Cache per-group statistics for the backward pass.
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  auto means = std::make_shared<std::vector<double>>(groups);

  Tensor out = Tensor::make_result(
      {C, H, W}, "group_norm", {x, gamma, beta},
      [xn, gn, bn, groups, cpg, H, W, group_elems, inv_std,
       means](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        const double* dx = xn->data.data();
        const double* dgamma = gn->data.data();
        const int64_t HW = H * W;
        for (int64_t g = 0; g < groups; ++g) {
          const double mu = (*means)[g];
          const double is = (*inv_std)[g];
          // Accumulate the two reduction terms over the group.
          double sum_d = 0.0, sum_dx = 0.0;
          for (int64_t cc = 0; cc < cpg; ++cc) {
            const int64_t c = g * cpg + cc;
            const double gm = dgamma[c];
            const double* gyp = gy + c * HW;
            const double* xp = dx + c * HW;
            for (int64_t i = 0; i < HW; ++i) {
              const double d = gyp[i] * gm;
              const double xhat = (xp[i] - mu) * is;
              sum_d += d;
              sum_dx += d * xhat;
            }
          }
          const double mean_d = sum_d / group_elems;
          const double mean_dx = sum_dx / group_elems;
          for (int64_t cc = 0; cc < cpg; ++cc) {
            const int64_t c = g * cpg + cc;
            const double gm = dgamma[c];
            const double* gyp = gy + c * HW;
            const double* xp = dx + c * HW;
            if (xn->requires_grad) {
              double* gxp = xn->grad.data() + c * HW;
              for (int64_t i = 0; i < HW; ++i) {
                const double d = gyp[i] * gm;
                const double xhat = (xp[i] - mu) * is;
                gxp[i] += is * (d - mean_d - xhat * mean_dx);
              }
            }
            if (gn->requires_grad || bn->requires_grad) {
              double acc_g = 0.0, acc_b = 0.0;
              for (int64_t i = 0; i < HW; ++i) {
                const double xhat = (xp[i] - mu) * is;
                acc_g += gyp[i] * xhat;
                acc_b += gyp[i];
              }
              if (gn->requires_grad) gn->grad[c] += acc_g;
              if (bn->requires_grad) bn->grad[c] += acc_b;
            }
          }
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  const double* dgamma = gamma.data().data();
  const double* dbeta = beta.data().data();
  const int64_t HW = H * W;
  for (int64_t g = 0; g < groups; ++g) {
    const double* gp = dx + g * cpg * HW;
    double mu = 0.0;
    for (int64_t i = 0; i < group_elems; ++i) mu += gp[i];
    mu /= group_elems;
    double var = 0.0;
    for (int64_t i = 0; i < group_elems; ++i) {
      const double d = gp[i] - mu;
      var += d * d;
    }
    var /= group_elems;
    const double is = 1.0 / std::sqrt(var + eps);
    (*means)[g] = mu;
    (*inv_std)[g] = is;
    for (int64_t cc = 0; cc < cpg; ++cc) {
      const int64_t c = g * cpg + cc;
      const double gm = dgamma[c], bt = dbeta[c];
      const double* xp = dx + c * HW;
      double* op = o.data() + c * HW;
      for (int64_t i = 0; i < HW; ++i) op[i] = gm * (xp[i] - mu) * is + bt;
    }
  }
  out.check_finite("group_norm");
  return out;
}

// LayerNorm over the last axis with affine parameters gamma[D], beta[D].
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps) {
  detail_ops::require(x.rank() >= 1, "layer_norm: rank >= 1 required");
  if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");
  const int64_t D = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / D;
  detail_ops::require(gamma.numel() == D && beta.numel() == D,
                      "layer_norm: affine parameter shape mismatch");
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  auto means = std::make_shared<std::vector<double>>(rows);
  Tensor out = Tensor::make_result(
      x.shape(), "layer_norm", {x, gamma, beta},
      [xn, gn, bn, rows, D, inv_std, means](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        const double* dx = xn->data.data();
        const double* dgamma = gn->data.data();
        for (int64_t r = 0; r < rows; ++r) {
          const double mu = (*means)[r];
          const double is = (*inv_std)[r];
          const double* gyp = gy + r * D;
          const double* xp = dx + r * D;
          double sum_d = 0.0, sum_dx = 0.0;
          for (int64_t j = 0; j < D; ++j) {
            const double d = gyp[j] * dgamma[j];
            const double xhat = (xp[j] - mu) * is;
            sum_d += d;
            sum_dx += d * xhat;
          }
          const double mean_d = sum_d / D;
          const double mean_dx = sum_dx / D;
          if (xn->requires_grad) {
            double* gxp = xn->grad.data() + r * D;
            for (int64_t j = 0; j < D; ++j) {
              const double d = gyp[j] * dgamma[j];
              const double xhat = (xp[j] - mu) * is;
              gxp[j] += is * (d - mean_d - xhat * mean_dx);
            }
          }
          if (gn->requires_grad || bn->requires_grad) {
            for (int64_t j = 0; j < D; ++j) {
              const double xhat = (xp[j] - mu) * is;
              if (gn->requires_grad) gn->grad[j] += gyp[j] * xhat;
              if (bn->requires_grad) bn->grad[j] += gyp[j];
            }
          }
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  const double* dgamma = gamma.data().data();
  const double* dbeta = beta.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xp = dx + r * D;
    double mu = 0.0;
    for (int64_t j = 0; j < D; ++j) mu += xp[j];
    mu /= D;
    double var = 0.0;
    for (int64_t j = 0; j < D; ++j) {
      const double d = xp[j] - mu;
      var += d * d;
    }
    var /= D;
    const double is = 1.0 / std::sqrt(var + eps);
    (*means)[r] = mu;
    (*inv_std)[r] = is;
    double* op = o.data() + r * D;
    for (int64_t j = 0; j < D; ++j)
      op[j] = dgamma[j] * (xp[j] - mu) * is + dbeta[j];
  }
  out.check_finite("layer_norm");
  return out;
}

// ---------------------------------------------------------------------------
// Shape movement
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail_ops::require(shape_numel(shape) == x.numel(),
                      "reshape: element count mismatch");
  auto xn = x.node();
  Tensor out = Tensor::make_result(std::move(shape), "reshape", {x},
                                   [xn](detail::TensorNode& y) {
                                     if (!xn->requires_grad) return;
                                     for (size_t i = 0; i < y.grad.size(); ++i)
                                       xn->grad[i] += y.grad[i];
                                   });
  out.mutable_data() = x.data();
  return out;
}

// Channel concatenation of [C_i,H,W] maps.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  detail_ops::require(!parts.empty(), "concat_channels: empty input");
  const int64_t H = parts[0].dim(1), W = parts[0].dim(2);
  int64_t C = 0;
  for (const Tensor& p : parts) {
    detail_ops::require(p.rank() == 3 && p.dim(1) == H && p.dim(2) == W,
                        "concat_channels: spatial mismatch");
    C += p.dim(0);
  }
  std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  const int64_t HW = H * W;
  Tensor out = Tensor::make_result(
      {C, H, W}, "concat_channels", parts,
      [nodes, HW](detail::TensorNode& y) {
        int64_t off = 0;
        for (auto& pn : nodes) {
          const int64_t n = static_cast<int64_t>(pn->data.size());
          if (pn->requires_grad) {
            for (int64_t i = 0; i < n; ++i) pn->grad[i] += y.grad[off + i];
          }
          off += n;
        }
      });
  auto& o = out.mutable_data();
  int64_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + off);
    off += p.numel();
  }
  return out;
}

// [C,H,W] -> [H*W,C] row-major tokens.
inline Tensor chw_to_tokens(const Tensor& x) {
  detail_ops::require(x.rank() == 3, "chw_to_tokens expects [C,H,W]");
  const int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      {HW, C}, "chw_to_tokens", {x}, [xn, C, HW](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t t = 0; t < HW; ++t)
          for (int64_t c = 0; c < C; ++c)
            xn->grad[c * HW + t] += y.grad[t * C + c];
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t t = 0; t < HW; ++t)
    for (int64_t c = 0; c < C; ++c) o[t * C + c] = dx[c * HW + t];
  return out;
}

// [H*W,C] tokens -> [C,H,W].
inline Tensor tokens_to_chw(const Tensor& x, int64_t H, int64_t W) {
  detail_ops::require(x.rank() == 2 && x.dim(0) == H * W,
                      "tokens_to_chw: token count mismatch");
  const int64_t C = x.dim(1), HW = H * W;
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      {C, H, W}, "tokens_to_chw", {x}, [xn, C, HW](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t t = 0; t < HW; ++t)
            xn->grad[t * C + c] += y.grad[c * HW + t];
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t t = 0; t < HW; ++t) o[c * HW + t] = dx[t * C + c];
  return out;
}

// ---------------------------------------------------------------------------
// Pixel shuffle / bilinear resize
// ---------------------------------------------------------------------------

// [C*r^2,H,W] -> [C,rH,rW]; input channel group index (i*r + j) lands at
// cell offset (row i, col j) inside each r x r output cell.
inline Tensor pixel_shuffle(const Tensor& x, int64_t r) {
  detail_ops::require(x.rank() == 3, "pixel_shuffle expects [C,H,W]");
  const int64_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (r < 1 || Cin % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: channels " + std::to_string(Cin) +
                         " not divisible by r^2=" + std::to_string(r * r));
  }
  const int64_t C = Cin / (r * r);
  const int64_t Ho = H * r, Wo = W * r;
  auto xn = x.node();
  auto fwd_index = [C, H, W, r, Wo](int64_t c, int64_t oy, int64_t ox) {
    const int64_t iy = oy / r, dy = oy % r;
    const int64_t ix = ox / r, dx = ox % r;
    const int64_t ci = c * r * r + dy * r + dx;
    return ci * H * W + iy * W + ix;
  };
  Tensor out = Tensor::make_result(
      {C, Ho, Wo}, "pixel_shuffle", {x},
      [xn, C, Ho, Wo, fwd_index](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox)
              xn->grad[fwd_index(c, oy, ox)] +=
                  y.grad[(c * Ho + oy) * Wo + ox];
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox)
        o[(c * Ho + oy) * Wo + ox] = dx[fwd_index(c, oy, ox)];
  return out;
}

// Exact inverse rearrangement of pixel_shuffle.
inline Tensor pixel_unshuffle(const Tensor& x, int64_t r) {
  detail_ops::require(x.rank() == 3, "pixel_unshuffle expects [C,H,W]");
  const int64_t C = x.dim(0), Ho = x.dim(1), Wo = x.dim(2);
  if (r < 1 || Ho % r != 0 || Wo % r != 0) {
    throw DimensionError("pixel_unshuffle: spatial extents not divisible");
  }
  const int64_t H = Ho / r, W = Wo / r;
  auto xn = x.node();
  auto src_index = [C, Ho, Wo, r, W](int64_t ci, int64_t iy, int64_t ix) {
    const int64_t c = ci / (r * r);
    const int64_t rem = ci % (r * r);
    const int64_t dy = rem / r, dx = rem % r;
    return (c * Ho + iy * r + dy) * Wo + ix * r + dx;
  };
  Tensor out = Tensor::make_result(
      {C * r * r, H, W}, "pixel_unshuffle", {x},
      [xn, C, r, H, W, src_index](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t ci = 0; ci < C * r * r; ++ci)
          for (int64_t iy = 0; iy < H; ++iy)
            for (int64_t ix = 0; ix < W; ++ix)
              xn->grad[src_index(ci, iy, ix)] +=
                  y.grad[(ci * H + iy) * W + ix];
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t ci = 0; ci < C * r * r; ++ci)
    for (int64_t iy = 0; iy < H; ++iy)
      for (int64_t ix = 0; ix < W; ++ix)
        o[(ci * H + iy) * W + ix] = dx[src_index(ci, iy, ix)];
  return out;
}

// Bilinear interpolation, align-corners-false (half-pixel centers).
inline Tensor bilinear_resize(const Tensor& x, int64_t Ho, int64_t Wo) {
  detail_ops::require(x.rank() == 3, "bilinear_resize expects [C,H,W]");
  detail_ops::require(Ho >= 1 && Wo >= 1, "bilinear_resize: target >= 1");
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);

  struct Taps {
    std::vector<int64_t> i0, i1;
    std::vector<double> f;
  };
  auto make_taps = [](int64_t in, int64_t out) {
    Taps t;
    t.i0.resize(out);
    t.i1.resize(out);
    t.f.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      int64_t lo = static_cast<int64_t>(src);
      if (lo > in - 1) lo = in - 1;
      t.i0[o] = lo;
      t.i1[o] = std::min(lo + 1, in - 1);
      t.f[o] = src - static_cast<double>(lo);
    }
    return t;
  };
  auto ty = std::make_shared<Taps>(make_taps(H, Ho));
  auto tx = std::make_shared<Taps>(make_taps(W, Wo));
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      {C, Ho, Wo}, "bilinear_resize", {x},
      [xn, C, H, W, Ho, Wo, ty, tx](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t c = 0; c < C; ++c) {
          double* gx = xn->grad.data() + c * H * W;
          const double* gy = y.grad.data() + c * Ho * Wo;
          for (int64_t oy = 0; oy < Ho; ++oy) {
            const int64_t y0 = ty->i0[oy], y1 = ty->i1[oy];
            const double fy = ty->f[oy];
            for (int64_t ox = 0; ox < Wo; ++ox) {
              const int64_t x0 = tx->i0[ox], x1 = tx->i1[ox];
              const double fx = tx->f[ox];
              const double g = gy[oy * Wo + ox];
              gx[y0 * W + x0] += g * (1 - fy) * (1 - fx);
              gx[y0 * W + x1] += g * (1 - fy) * fx;
              gx[y1 * W + x0] += g * fy * (1 - fx);
              gx[y1 * W + x1] += g * fy * fx;
            }
          }
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t c = 0; c < C; ++c) {
    const double* xp = dx + c * H * W;
    double* op = o.data() + c * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      const int64_t y0 = ty->i0[oy], y1 = ty->i1[oy];
      const double fy = ty->f[oy];
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const int64_t x0 = tx->i0[ox], x1 = tx->i1[ox];
        const double fx = tx->f[ox];
        op[oy * Wo + ox] = (1 - fy) * ((1 - fx) * xp[y0 * W + x0] +
                                       fx * xp[y0 * W + x1]) +
                           fy * ((1 - fx) * xp[y1 * W + x0] +
                                 fx * xp[y1 * W + x1]);
      }
    }
  }
  out.check_finite("bilinear_resize");
  return out;
}

// ---------------------------------------------------------------------------
// Attention building blocks
// ---------------------------------------------------------------------------

// [N,D] -> [H,N,dh] head-major layout.
inline Tensor split_heads(const Tensor& x, int64_t heads) {
  detail_ops::require(x.rank() == 2, "split_heads expects [N,D]");
  const int64_t N = x.dim(0), D = x.dim(1);
  detail_ops::require(D % heads == 0, "split_heads: D not divisible by heads");
  const int64_t dh = D / heads;
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      {heads, N, dh}, "split_heads", {x},
      [xn, heads, N, dh, D](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t n = 0; n < N; ++n)
            for (int64_t k = 0; k < dh; ++k)
              xn->grad[n * D + h * dh + k] += y.grad[(h * N + n) * dh + k];
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t h = 0; h < heads; ++h)
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < dh; ++k)
        o[(h * N + n) * dh + k] = dx[n * D + h * dh + k];
  return out;
}

// [H,N,dh] -> [N,D].
inline Tensor merge_heads(const Tensor& x) {
  detail_ops::require(x.rank() == 3, "merge_heads expects [H,N,dh]");
  const int64_t heads = x.dim(0), N = x.dim(1), dh = x.dim(2);
  const int64_t D = heads * dh;
  auto xn = x.node();
  Tensor out = Tensor::make_result(
      {N, D}, "merge_heads", {x},
      [xn, heads, N, dh, D](detail::TensorNode& y) {
        if (!xn->requires_grad) return;
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t n = 0; n < N; ++n)
            for (int64_t k = 0; k < dh; ++k)
              xn->grad[(h * N + n) * dh + k] += y.grad[n * D + h * dh + k];
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  for (int64_t h = 0; h < heads; ++h)
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < dh; ++k)
        o[n * D + h * dh + k] = dx[(h * N + n) * dh + k];
  return out;
}

// Batched matmul: a[B,M,K] * b[B,K,N] -> [B,M,N].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                          a.dim(2) == b.dim(1),
                      "bmm: shape mismatch");
  const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  auto an = a.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      {B, M, N}, "bmm", {a, b}, [an, bn, B, M, K, N](detail::TensorNode& y) {
        for (int64_t s = 0; s < B; ++s) {
          const double* gy = y.grad.data() + s * M * N;
          const double* da = an->data.data() + s * M * K;
          const double* db = bn->data.data() + s * K * N;
          if (an->requires_grad) {
            double* ga = an->grad.data() + s * M * K;
            for (int64_t m = 0; m < M; ++m)
              for (int64_t k = 0; k < K; ++k) {
                double acc = 0.0;
                for (int64_t n = 0; n < N; ++n)
                  acc += gy[m * N + n] * db[k * N + n];
                ga[m * K + k] += acc;
              }
          }
          if (bn->requires_grad) {
            double* gb = bn->grad.data() + s * K * N;
            for (int64_t m = 0; m < M; ++m)
              for (int64_t k = 0; k < K; ++k) {
                const double av = da[m * K + k];
                for (int64_t n = 0; n < N; ++n)
                  gb[k * N + n] += av * gy[m * N + n];
              }
          }
        }
      });
  auto& o = out.mutable_data();
  const double* da = a.data().data();
  const double* db = b.data().data();
  for (int64_t s = 0; s < B; ++s) {
    double* op = o.data() + s * M * N;
    const double* ap = da + s * M * K;
    const double* bp = db + s * K * N;
    for (int64_t m = 0; m < M; ++m)
      for (int64_t k = 0; k < K; ++k) {
        const double av = ap[m * K + k];
        const double* brow = bp + k * N;
        double* orow = op + m * N;
        for (int64_t n = 0; n < N; ++n) orow[n] += av * brow[n];
      }
  }
  out.check_finite("bmm");
  return out;
}

// Batched matmul with transposed second operand: a[B,M,K] * b[B,N,K]^T.
inline Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                          a.dim(2) == b.dim(2),
                      "bmm_nt: shape mismatch");
  const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(1);
  auto an = a.node();
  auto bn = b.node();
  Tensor out = Tensor::make_result(
      {B, M, N}, "bmm_nt", {a, b},
      [an, bn, B, M, K, N](detail::TensorNode& y) {
        for (int64_t s = 0; s < B; ++s) {
          const double* gy = y.grad.data() + s * M * N;
          const double* da = an->data.data() + s * M * K;
          const double* db = bn->data.data() + s * N * K;
          if (an->requires_grad) {
            double* ga = an->grad.data() + s * M * K;
            for (int64_t m = 0; m < M; ++m)
              for (int64_t n = 0; n < N; ++n) {
                const double g = gy[m * N + n];
                for (int64_t k = 0; k < K; ++k)
                  ga[m * K + k] += g * db[n * K + k];
              }
          }
          if (bn->requires_grad) {
            double* gb = bn->grad.data() + s * N * K;
            for (int64_t m = 0; m < M; ++m)
              for (int64_t n = 0; n < N; ++n) {
                const double g = gy[m * N + n];
                for (int64_t k = 0; k < K; ++k)
                  gb[n * K + k] += g * da[m * K + k];
              }
          }
        }
      });
  auto& o = out.mutable_data();
  const double* da = a.data().data();
  const double* db = b.data().data();
  for (int64_t s = 0; s < B; ++s) {
    double* op = o.data() + s * M * N;
    const double* ap = da + s * M * K;
    const double* bp = db + s * N * K;
    for (int64_t m = 0; m < M; ++m)
      for (int64_t n = 0; n < N; ++n) {
        const double* arow = ap + m * K;
        const double* brow = bp + n * K;
        double acc = 0.0;
        for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
        op[m * N + n] = acc;
      }
  }
  out.check_finite("bmm_nt");
  return out;
}

// ---------------------------------------------------------------------------
// Fused decoder-specific kernels
// ---------------------------------------------------------------------------

// Broadcast multiply of a [H,W] field over every channel of x[C,H,W].
inline Tensor scale_spatial(const Tensor& x, const Tensor& field) {
  detail_ops::require(x.rank() == 3 && field.rank() == 2 &&
                          x.dim(1) == field.dim(0) && x.dim(2) == field.dim(1),
                      "scale_spatial: shape mismatch");
  const int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  auto xn = x.node();
  auto fn = field.node();
  Tensor out = Tensor::make_result(
      x.shape(), "scale_spatial", {x, field},
      [xn, fn, C, HW](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        const double* df = fn->data.data();
        const double* dx = xn->data.data();
        if (xn->requires_grad) {
          double* gx = xn->grad.data();
          for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < HW; ++i)
              gx[c * HW + i] += gy[c * HW + i] * df[i];
        }
        if (fn->requires_grad) {
          double* gf = fn->grad.data();
          for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < HW; ++i)
              gf[i] += gy[c * HW + i] * dx[c * HW + i];
        }
      });
  auto& o = out.mutable_data();
  const double* dx = x.data().data();
  const double* df = field.data().data();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < HW; ++i) o[c * HW + i] = dx[c * HW + i] * df[i];
  out.check_finite("scale_spatial");
  return out;
}

// Dynamic 1x1 mask head: kb[1,C+1] holds kernel weights and a trailing bias;
// logits(h,w) = <F(:,h,w), k> + b.
inline Tensor dynamic_mask_head(const Tensor& features, const Tensor& kb) {
  detail_ops::require(features.rank() == 3 && kb.rank() == 2 && kb.dim(0) == 1,
                      "dynamic_mask_head expects F[C,H,W], kb[1,C+1]");
  const int64_t C = features.dim(0), H = features.dim(1), W = features.dim(2);
  detail_ops::require(kb.dim(1) == C + 1,
                      "dynamic_mask_head: kernel length mismatch");
  const int64_t HW = H * W;
  auto fn = features.node();
  auto kn = kb.node();
  Tensor out = Tensor::make_result(
      {H, W}, "dynamic_mask_head", {features, kb},
      [fn, kn, C, HW](detail::TensorNode& y) {
        const double* gy = y.grad.data();
        const double* dk = kn->data.data();
        const double* df = fn->data.data();
        if (fn->requires_grad) {
          double* gf = fn->grad.data();
          for (int64_t c = 0; c < C; ++c) {
            const double kv = dk[c];
            for (int64_t i = 0; i < HW; ++i) gf[c * HW + i] += gy[i] * kv;
          }
        }
        if (kn->requires_grad) {
          double* gk = kn->grad.data();
          for (int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int64_t i = 0; i < HW; ++i) acc += gy[i] * df[c * HW + i];
            gk[c] += acc;
          }
          double acc = 0.0;
          for (int64_t i = 0; i < HW; ++i) acc += gy[i];
          gk[C] += acc;
        }
      });
  auto& o = out.mutable_data();
  const double* df = features.data().data();
  const double* dk = kb.data().data();
  for (int64_t i = 0; i < HW; ++i) o[i] = dk[C];
  for (int64_t c = 0; c < C; ++c) {
    const double kv = dk[c];
    const double* fp = df + c * HW;
    for (int64_t i = 0; i < HW; ++i) o[i] += kv * fp[i];
  }
  out.check_finite("dynamic_mask_head");
  return out;
}

// Mean binary cross-entropy on logits against a constant target in [0,1].
inline Tensor bce_with_logits_mean(const Tensor& logits,
                                   const Tensor& target) {
  detail_ops::require(logits.shape() == target.shape(),
                      "bce_with_logits_mean: shape mismatch");
  if (target.requires_grad()) {
    throw ConfigError("bce_with_logits_mean: target must be constant");
  }
  const int64_t n = logits.numel();
  auto zn = logits.node();
  auto tn = target.node();
  Tensor out = Tensor::make_result(
      {1}, "bce_with_logits_mean", {logits, target},
      [zn, tn, n](detail::TensorNode& y) {
        if (!zn->requires_grad) return;
        const double g = y.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
          const double s = detail_ops::sigmoid_scalar(zn->data[i]);
          zn->grad[i] += g * (s - tn->data[i]);
        }
      });
  const auto& z = logits.data();
  const auto& t = target.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double zi = z[i];
    acc += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  out.mutable_data()[0] = acc / static_cast<double>(n);
  out.check_finite("bce_with_logits_mean");
  return out;
}

}  // namespace ops
}  // namespace boxseg
