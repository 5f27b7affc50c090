// Copyright 2026 The GanMask Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Layer primitives over Tensor<T>. Convolutions lower to im2col + GEMM.

#pragma once

#include <Eigen/Core>
#include <algorithm>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ganmask/tensor.hpp"

namespace ganmask {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose tap kj lands inside a row of `extent` pixels.
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t k, std::size_t stride, std::size_t pad,
                                                      std::size_t extent, std::size_t out) {
  const long off = static_cast<long>(k) - static_cast<long>(pad), s = static_cast<long>(stride);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(extent) - off + s - 1) / s;
  hi = std::clamp(hi, 0L, static_cast<long>(out));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Signed offset of tap (ki, kj) for output row oy at output column 0.
inline long tap_offset(const ConvGeometry& g, std::size_t oy, std::size_t ki, std::size_t kj) {
  const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
  return iy * static_cast<long>(g.width) + static_cast<long>(kj) - static_cast<long>(g.pad);
}

// Writes the patch matrix of one image into columns [col0, col0 + positions)
// of a row-major matrix with `ld` columns.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols, std::size_t ld, std::size_t col0) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = img + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [ylo, yhi] = valid_span(ki, g.stride, g.pad, g.height, g.out_h);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [xlo, xhi] = valid_span(kj, g.stride, g.pad, g.width, g.out_w);
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld + col0;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          T* dst = row + oy * g.out_w;
          if (oy < ylo || oy >= yhi) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = plane + tap_offset(g, oy, ki, kj);
          std::fill_n(dst, xlo, T(0));
          for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * g.stride];
          std::fill(dst + xhi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into an image.
template <typename T>
void col2im(const T* cols, std::size_t ld, std::size_t col0, const ConvGeometry& g, T* img) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = img + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [ylo, yhi] = valid_span(ki, g.stride, g.pad, g.height, g.out_h);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [xlo, xhi] = valid_span(kj, g.stride, g.pad, g.width, g.out_w);
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld + col0;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const T* src = row + oy * g.out_w;
          T* dst = plane + tap_offset(g, oy, ki, kj);
          for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride] += src[ox];
        }
      }
    }
  }
}

// [N, C, P] <-> [C, N*P]
template <typename T>
void to_channel_major(const T* src, std::size_t n, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      std::copy_n(src + (i * c + k) * p, p, dst + k * n * p + i * p);
}

template <typename T>
void from_channel_major(const T* src, std::size_t n, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      std::copy_n(src + k * n * p + i * p, p, dst + (i * c + k) * p);
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  GANMASK_REQUIRE(s.size() == rank, DimensionError, op, ": ", what, " must have rank ", rank,
                  ", got ", shape_str(s));
}

}  // namespace detail

// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] (or empty tensor).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  using namespace detail;
  require_rank(input.shape(), 4, "conv2d", "input");
  require_rank(weight.shape(), 4, "conv2d", "weight");
  GANMASK_REQUIRE(stride >= 1, ContractError, "conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  GANMASK_REQUIRE(weight.dim(1) == cin, DimensionError, "conv2d: weight in-channels ",
                  weight.dim(1), " != input channels ", cin);
  GANMASK_REQUIRE(kh <= h + 2 * padding && kw <= w + 2 * padding, DimensionError,
                  "conv2d: kernel ", kh, "x", kw, " larger than padded input ", h + 2 * padding,
                  "x", w + 2 * padding);
  const bool has_bias = bias.numel() > 0;
  GANMASK_REQUIRE(!has_bias || bias.numel() == cout, DimensionError, "conv2d: bias has ",
                  bias.numel(), " entries, expected ", cout);
  ConvGeometry g{cin, h, w, kh, kw, stride, padding, (h + 2 * padding - kh) / stride + 1,
                 (w + 2 * padding - kw) / stride + 1};
  const std::size_t k = g.patch(), p = g.positions(), np = n * p;

  auto cols = std::make_shared<std::vector<T>>(k * np);
  for (std::size_t i = 0; i < n; ++i) im2col(input.values().data() + i * cin * h * w, g, cols->data(), np, i * p);

  std::vector<T> out_cm(cout * np);
  MapMat<T>(out_cm.data(), cout, np).noalias() =
      ConstMapMat<T>(weight.values().data(), cout, k) * ConstMapMat<T>(cols->data(), k, np);
  if (has_bias)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t j = 0; j < np; ++j) out_cm[co * np + j] += bias[co];
  std::vector<T> out(cout * np);
  from_channel_major(out_cm.data(), n, cout, p, out.data());

  std::vector<Tensor<T>> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(
      Shape{n, cout, g.out_h, g.out_w}, std::move(out), std::move(inputs), "conv2d",
      [g, n, cout, k, p, np, cols, has_bias](Node<T>& self) {
        std::vector<T> gcm(cout * np);
        to_channel_major(self.grad.data(), n, cout, p, gcm.data());
        ConstMapMat<T> grad_mat(gcm.data(), cout, np);
        if (wants_grad(self, 1)) {
          MapMat<T>(self.inputs[1]->grad_buffer().data(), cout, k).noalias() +=
              grad_mat * ConstMapMat<T>(cols->data(), k, np).transpose();
        }
        if (has_bias && wants_grad(self, 2)) {
          auto& gb = self.inputs[2]->grad_buffer();
          for (std::size_t co = 0; co < cout; ++co) gb[co] += grad_mat.row(co).sum();
        }
        if (wants_grad(self, 0)) {
          std::vector<T> dcols(k * np);
          MapMat<T>(dcols.data(), k, np).noalias() =
              ConstMapMat<T>(self.inputs[1]->data.data(), cout, k).transpose() * grad_mat;
          auto& gx = self.inputs[0]->grad_buffer();
          const std::size_t img = g.channels * g.height * g.width;
          for (std::size_t i = 0; i < n; ++i) col2im(dcols.data(), np, i * p, g, gx.data() + i * img);
        }
      });
}

// input [N,Cin,H,W], weight [Cin,Cout,kh,kw]; output spatial (H-1)*stride - 2*pad + kh.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride = 1, std::size_t padding = 0) {
  using namespace detail;
  require_rank(input.shape(), 4, "conv_transpose2d", "input");
  require_rank(weight.shape(), 4, "conv_transpose2d", "weight");
  GANMASK_REQUIRE(stride >= 1, ContractError, "conv_transpose2d: stride must be >= 1");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  GANMASK_REQUIRE(weight.dim(0) == cin, DimensionError, "conv_transpose2d: weight in-channels ",
                  weight.dim(0), " != input channels ", cin);
  const long oh = static_cast<long>((h - 1) * stride + kh) - 2 * static_cast<long>(padding);
  const long ow = static_cast<long>((w - 1) * stride + kw) - 2 * static_cast<long>(padding);
  GANMASK_REQUIRE(oh > 0 && ow > 0, DimensionError, "conv_transpose2d: empty output for input ",
                  shape_str(input.shape()));
  const bool has_bias = bias.numel() > 0;
  GANMASK_REQUIRE(!has_bias || bias.numel() == cout, DimensionError,
                  "conv_transpose2d: bias has ", bias.numel(), " entries, expected ", cout);
  // Geometry of the equivalent forward convolution on the output image.
  ConvGeometry g{cout, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), kh, kw,
                 stride, padding, h, w};
  const std::size_t k = g.patch(), p = h * w, np = n * p;

  auto x_cm = std::make_shared<std::vector<T>>(cin * np);
  to_channel_major(input.values().data(), n, cin, p, x_cm->data());
  std::vector<T> cols(k * np);
  MapMat<T>(cols.data(), k, np).noalias() =
      ConstMapMat<T>(weight.values().data(), cin, k).transpose() *
      ConstMapMat<T>(x_cm->data(), cin, np);
  const std::size_t img = cout * g.height * g.width;
  std::vector<T> out(n * img, T(0));
  for (std::size_t i = 0; i < n; ++i) col2im(cols.data(), np, i * p, g, out.data() + i * img);
  if (has_bias)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t j = 0; j < g.height * g.width; ++j)
          out[i * img + co * g.height * g.width + j] += bias[co];

  std::vector<Tensor<T>> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(
      Shape{n, cout, g.height, g.width}, std::move(out), std::move(inputs), "conv_transpose2d",
      [g, n, cin, cout, k, p, np, img, x_cm, has_bias](Node<T>& self) {
        std::vector<T> gcols(k * np);
        for (std::size_t i = 0; i < n; ++i) im2col(self.grad.data() + i * img, g, gcols.data(), np, i * p);
        ConstMapMat<T> gcols_mat(gcols.data(), k, np);
        if (wants_grad(self, 1)) {
          MapMat<T>(self.inputs[1]->grad_buffer().data(), cin, k).noalias() +=
              ConstMapMat<T>(x_cm->data(), cin, np) * gcols_mat.transpose();
        }
        if (has_bias && wants_grad(self, 2)) {
          auto& gb = self.inputs[2]->grad_buffer();
          const std::size_t hw = g.height * g.width;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t co = 0; co < cout; ++co) {
              T s = 0;
              for (std::size_t j = 0; j < hw; ++j) s += self.grad[i * img + co * hw + j];
              gb[co] += s;
            }
        }
        if (wants_grad(self, 0)) {
          std::vector<T> dx_cm(cin * np);
          MapMat<T>(dx_cm.data(), cin, np).noalias() =
              ConstMapMat<T>(self.inputs[1]->data.data(), cin, k) * gcols_mat;
          auto& gx = self.inputs[0]->grad_buffer();
          std::vector<T> dx(cin * np);
          from_channel_major(dx_cm.data(), n, cin, p, dx.data());
          for (std::size_t j = 0; j < dx.size(); ++j) gx[j] += dx[j];
        }
      });
}

enum class NormMode { kTrain, kEval };

// Per-channel running statistics owned by a BatchNorm layer.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels, double momentum_ = 0.1, double eps_ = 1e-5)
      : running_mean(channels, T(0)), running_var(channels, T(1)), momentum(momentum_), eps(eps_) {}
};

// input [N,C,H,W]. In train mode normalizes by batch statistics and, when
// update_running is set, folds them into the running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, NormMode mode, bool update_running = true) {
  using namespace detail;
  require_rank(input.shape(), 4, "batch_norm", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  GANMASK_REQUIRE(gamma.numel() == c && beta.numel() == c, DimensionError,
                  "batch_norm: gamma/beta need ", c, " entries");
  GANMASK_REQUIRE(state.running_mean.size() == c, DimensionError,
                  "batch_norm: running stats sized ", state.running_mean.size(), ", expected ", c);
  const std::size_t count = n * hw;
  const T eps = static_cast<T>(state.eps);
  const auto& x = input.values();
  std::vector<T> out(x.size());

  if (mode == NormMode::kEval) {
    std::vector<T> scale(c), shift(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      scale[ch] = gamma[ch] / std::sqrt(state.running_var[ch] + eps);
      shift[ch] = beta[ch] - state.running_mean[ch] * scale[ch];
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t idx = (i * c + ch) * hw + j;
          out[idx] = x[idx] * scale[ch] + shift[ch];
        }
    std::vector<T> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + eps);
    std::vector<T> mean = state.running_mean;
    return make_result<T>(input.shape(), std::move(out), {input, gamma, beta}, "batch_norm_eval",
                          [n, c, hw, inv_std, mean](Node<T>& self) {
                            const auto& xs = self.inputs[0]->data;
                            const auto& gm = self.inputs[1]->data;
                            const bool gx = wants_grad(self, 0), gg = wants_grad(self, 1),
                                       gbt = wants_grad(self, 2);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t ch = 0; ch < c; ++ch)
                                for (std::size_t j = 0; j < hw; ++j) {
                                  const std::size_t idx = (i * c + ch) * hw + j;
                                  const T go = self.grad[idx];
                                  if (gx) self.inputs[0]->grad_buffer()[idx] += go * gm[ch] * inv_std[ch];
                                  if (gg) self.inputs[1]->grad_buffer()[ch] += go * (xs[idx] - mean[ch]) * inv_std[ch];
                                  if (gbt) self.inputs[2]->grad_buffer()[ch] += go;
                                }
                          });
  }

  GANMASK_REQUIRE(count >= 2, ContractError,
                  "batch_norm: degenerate batch statistics (N*H*W = ", count, " < 2) in train mode");
  std::vector<T> mean(c, T(0)), var(c, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < hw; ++j) mean[ch] += x[(i * c + ch) * hw + j];
  for (auto& m : mean) m /= static_cast<T>(count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < hw; ++j) {
        const T d = x[(i * c + ch) * hw + j] - mean[ch];
        var[ch] += d * d;
      }
  for (auto& v : var) v /= static_cast<T>(count);
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < hw; ++j) {
        const std::size_t idx = (i * c + ch) * hw + j;
        (*xhat)[idx] = (x[idx] - mean[ch]) * inv_std[ch];
        out[idx] = gamma[ch] * (*xhat)[idx] + beta[ch];
      }
  if (update_running) {
    const T mom = static_cast<T>(state.momentum);
    const T unbias = static_cast<T>(count) / static_cast<T>(count - 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      state.running_mean[ch] = (T(1) - mom) * state.running_mean[ch] + mom * mean[ch];
      state.running_var[ch] = (T(1) - mom) * state.running_var[ch] + mom * var[ch] * unbias;
    }
  }
  return make_result<T>(
      input.shape(), std::move(out), {input, gamma, beta}, "batch_norm_train",
      [n, c, hw, count, xhat, inv_std](Node<T>& self) {
        const auto& gm = self.inputs[1]->data;
        std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t j = 0; j < hw; ++j) {
              const std::size_t idx = (i * c + ch) * hw + j;
              sum_g[ch] += self.grad[idx];
              sum_gx[ch] += self.grad[idx] * (*xhat)[idx];
            }
        if (wants_grad(self, 1)) {
          auto& gg = self.inputs[1]->grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
        }
        if (wants_grad(self, 2)) {
          auto& gb = self.inputs[2]->grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (wants_grad(self, 0)) {
          auto& gx = self.inputs[0]->grad_buffer();
          const T m = static_cast<T>(count);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T k = gm[ch] * inv_std[ch] / m;
              for (std::size_t j = 0; j < hw; ++j) {
                const std::size_t idx = (i * c + ch) * hw + j;
                gx[idx] += k * (m * self.grad[idx] - sum_g[ch] - (*xhat)[idx] * sum_gx[ch]);
              }
            }
        }
      });
}

namespace detail {

// Elementwise unary op given value and derivative-from-(input, output).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, DF df) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, name, [df](Node<T>& self) {
    const auto& xs = self.inputs[0]->data;
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += self.grad[i] * df(xs[i], self.data[i]);
  });
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  GANMASK_REQUIRE(a == b, DimensionError, op, ": shape mismatch ", shape_str(a), " vs ",
                  shape_str(b));
}

}  // namespace detail

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  if (kink_tracking())
    for (T v : x.values()) detail::note_kink_region(v >= T(0));
  return detail::unary<T>(
      x, "leaky_relu", [slope](T v) { return v >= T(0) ? v : slope * v; },
      [slope](T v, T) { return v >= T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (kink_tracking())
    for (T v : x.values()) detail::note_kink_region(v > T(0));
  return detail::unary<T>(
      x, "relu", [](T v) { return v <= T(0) ? T(0) : v; },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
T sigmoid_value(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      x, "sigmoid", [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.values())
    GANMASK_REQUIRE(v > T(0), ContractError, "log: non-positive argument ", v);
  return detail::unary<T>(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// Gradient is zero where the value was clamped.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (kink_tracking())
    for (T v : x.values()) detail::note_kink_region(v < lo ? 0 : (v > hi ? 2 : 1));
  return detail::unary<T>(
      x, "clamp", [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  if (kink_tracking())
    for (T v : x.values()) detail::note_kink_region(v > T(0) ? 1 : (v < T(0) ? -1 : 0));
  return detail::unary<T>(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// a * x + b elementwise
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  return detail::unary<T>(
      x, "affine", [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T a) {
  return affine(x, a, T(0));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](detail::Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(self, k)) continue;
      auto& g = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, "sub", [](detail::Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(self, k)) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      auto& g = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node<T>& self) {
    const auto& av = self.inputs[0]->data;
    const auto& bv = self.inputs[1]->data;
    if (detail::wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

// mask [N,1,H,W] broadcast over the channels of x [N,C,H,W].
template <typename T>
Tensor<T> mul_channel_broadcast(const Tensor<T>& mask, const Tensor<T>& x) {
  detail::require_rank(mask.shape(), 4, "mul_channel_broadcast", "mask");
  detail::require_rank(x.shape(), 4, "mul_channel_broadcast", "features");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  GANMASK_REQUIRE(mask.dim(0) == n && mask.dim(1) == 1 && mask.dim(2) == x.dim(2) &&
                      mask.dim(3) == x.dim(3),
                  DimensionError, "mul_channel_broadcast: mask ", shape_str(mask.shape()),
                  " incompatible with features ", shape_str(x.shape()));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < hw; ++j)
        out[(i * c + ch) * hw + j] = mask[i * hw + j] * x[(i * c + ch) * hw + j];
  return detail::make_result<T>(
      x.shape(), std::move(out), {mask, x}, "mul_channel_broadcast",
      [n, c, hw](detail::Node<T>& self) {
        const auto& mv = self.inputs[0]->data;
        const auto& xv = self.inputs[1]->data;
        const bool gm = detail::wants_grad(self, 0), gx = detail::wants_grad(self, 1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t j = 0; j < hw; ++j) {
              const std::size_t idx = (i * c + ch) * hw + j;
              if (gm) self.inputs[0]->grad_buffer()[i * hw + j] += self.grad[idx] * xv[idx];
              if (gx) self.inputs[1]->grad_buffer()[idx] += self.grad[idx] * mv[i * hw + j];
            }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  return detail::make_result<T>(Shape{1}, {s}, {x}, "sum", [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  GANMASK_REQUIRE(x.numel() > 0, ContractError, "mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  GANMASK_REQUIRE(numel_of(shape) == x.numel(), DimensionError, "reshape: cannot view ",
                  shape_str(x.shape()), " as ", shape_str(shape));
  return detail::make_result<T>(std::move(shape), x.values(), {x}, "reshape",
                                [](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                });
}

// [N, ...] -> [N, prod(...)]
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  GANMASK_REQUIRE(x.ndim() >= 1, DimensionError, "flatten: rank-0 tensor");
  const std::size_t n = x.dim(0);
  return reshape(x, Shape{n, n == 0 ? 0 : x.numel() / n});
}

// Concatenates [N, Ai] tensors along the second axis.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  GANMASK_REQUIRE(!parts.empty(), ContractError, "concat_cols: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 2, "concat_cols", "part");
    GANMASK_REQUIRE(p.dim(0) == n, DimensionError, "concat_cols: row count ", p.dim(0), " != ", n);
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(n * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(parts[k].values().data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  return detail::make_result<T>(Shape{n, total}, std::move(out), parts, "concat_cols",
                                [n, total, widths](detail::Node<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    if (detail::wants_grad(self, k)) {
                                      auto& g = self.inputs[k]->grad_buffer();
                                      for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          g[i * widths[k] + j] += self.grad[i * total + off + j];
                                    }
                                    off += widths[k];
                                  }
                                });
}

// Selects rows (first-axis slices) in the given order.
template <typename T>
Tensor<T> index_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  GANMASK_REQUIRE(x.ndim() >= 1, DimensionError, "index_rows: rank-0 tensor");
  const std::size_t n = x.dim(0), row = n == 0 ? 0 : x.numel() / n;
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<T> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    GANMASK_REQUIRE(rows[i] < n, ContractError, "index_rows: row ", rows[i], " out of ", n);
    std::copy_n(x.values().data() + rows[i] * row, row, out.data() + i * row);
  }
  return detail::make_result<T>(std::move(shape), std::move(out), {x}, "index_rows",
                                [rows, row](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::size_t i = 0; i < rows.size(); ++i)
                                    for (std::size_t j = 0; j < row; ++j)
                                      g[rows[i] * row + j] += self.grad[i * row + j];
                                });
}

// x [N,K,H,W], one channel per sample -> [N,1,H,W].
template <typename T>
Tensor<T> select_channel(const Tensor<T>& x, const std::vector<std::size_t>& channel) {
  detail::require_rank(x.shape(), 4, "select_channel", "input");
  const std::size_t n = x.dim(0), k = x.dim(1), hw = x.dim(2) * x.dim(3);
  GANMASK_REQUIRE(channel.size() == n, DimensionError, "select_channel: ", channel.size(),
                  " indices for ", n, " samples");
  std::vector<T> out(n * hw);
  for (std::size_t i = 0; i < n; ++i) {
    GANMASK_REQUIRE(channel[i] < k, ContractError, "select_channel: channel ", channel[i],
                    " out of ", k);
    std::copy_n(x.values().data() + (i * k + channel[i]) * hw, hw, out.data() + i * hw);
  }
  return detail::make_result<T>(Shape{n, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
                                "select_channel", [channel, k, hw](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::size_t i = 0; i < channel.size(); ++i)
                                    for (std::size_t j = 0; j < hw; ++j)
                                      g[(i * k + channel[i]) * hw + j] += self.grad[i * hw + j];
                                });
}

// [N,C,H,W] -> [N,C,2H,2W]
template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "upsample_nearest2x", "input");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(nc * 4 * h * w);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
  return detail::make_result<T>(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x},
                                "upsample_nearest2x", [nc, h, w](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::size_t p = 0; p < nc; ++p)
                                    for (std::size_t y = 0; y < 2 * h; ++y)
                                      for (std::size_t xx = 0; xx < 2 * w; ++xx)
                                        g[(p * h + y / 2) * w + xx / 2] +=
                                            self.grad[(p * 2 * h + y) * 2 * w + xx];
                                });
}

// x [N,In], weight [Out,In], bias [Out] -> [N,Out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  using namespace detail;
  require_rank(x.shape(), 2, "linear", "input");
  require_rank(weight.shape(), 2, "linear", "weight");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  GANMASK_REQUIRE(weight.dim(1) == in, DimensionError, "linear: weight expects ", weight.dim(1),
                  " inputs, got ", in);
  GANMASK_REQUIRE(bias.numel() == out_dim, DimensionError, "linear: bias has ", bias.numel(),
                  " entries, expected ", out_dim);
  std::vector<T> out(n * out_dim);
  MapMat<T> om(out.data(), n, out_dim);
  om.noalias() = ConstMapMat<T>(x.values().data(), n, in) *
                 ConstMapMat<T>(weight.values().data(), out_dim, in).transpose();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out_dim; ++j) om(i, j) += bias[j];
  return make_result<T>(Shape{n, out_dim}, std::move(out), {x, weight, bias}, "linear",
                        [n, in, out_dim](Node<T>& self) {
                          ConstMapMat<T> g(self.grad.data(), n, out_dim);
                          if (wants_grad(self, 0))
                            MapMat<T>(self.inputs[0]->grad_buffer().data(), n, in).noalias() +=
                                g * ConstMapMat<T>(self.inputs[1]->data.data(), out_dim, in);
                          if (wants_grad(self, 1))
                            MapMat<T>(self.inputs[1]->grad_buffer().data(), out_dim, in).noalias() +=
                                g.transpose() * ConstMapMat<T>(self.inputs[0]->data.data(), n, in);
                          if (wants_grad(self, 2)) {
                            auto& gb = self.inputs[2]->grad_buffer();
                            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g.col(j).sum();
                          }
                        });
}

// Mean softmax cross-entropy of logits [N,K] against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  detail::require_rank(logits.shape(), 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  GANMASK_REQUIRE(labels.size() == n && n > 0, DimensionError, "softmax_cross_entropy: ",
                  labels.size(), " labels for ", n, " rows");
  auto probs = std::make_shared<std::vector<T>>(n * k);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    GANMASK_REQUIRE(labels[i] < k, ContractError, "softmax_cross_entropy: label ", labels[i],
                    " out of ", k);
    const T* row = logits.values().data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - mx) / z;
    loss += -(row[labels[i]] - mx - std::log(z));
  }
  loss /= static_cast<T>(n);
  return detail::make_result<T>(Shape{1}, {loss}, {logits}, "softmax_cross_entropy",
                                [probs, labels, n, k](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  const T s = self.grad[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < k; ++j)
                                      g[i * k + j] += s * ((*probs)[i * k + j] - (j == labels[i] ? T(1) : T(0)));
                                });
}

// Mean binary cross-entropy with logits against constant targets in [0,1].
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<T>& targets) {
  GANMASK_REQUIRE(targets.size() == logits.numel() && !targets.empty(), DimensionError,
                  "bce_with_logits: ", targets.size(), " targets for ", logits.numel(), " logits");
  T loss = 0;
  const auto& z = logits.values();
  for (std::size_t i = 0; i < z.size(); ++i) {
    // max(z,0) - z*t + log(1 + exp(-|z|))
    loss += std::max(z[i], T(0)) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const std::size_t count = z.size();
  loss /= static_cast<T>(count);
  return detail::make_result<T>(Shape{1}, {loss}, {logits}, "bce_with_logits",
                                [targets, count](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  const auto& zz = self.inputs[0]->data;
                                  const T s = self.grad[0] / static_cast<T>(count);
                                  for (std::size_t i = 0; i < count; ++i)
                                    g[i] += s * (sigmoid_value(zz[i]) - targets[i]);
                                });
}

// Smooth-L1 summed over the last axis of pred [N,D], averaged over rows.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const std::vector<T>& target, T beta) {
  detail::require_rank(pred.shape(), 2, "smooth_l1", "pred");
  GANMASK_REQUIRE(target.size() == pred.numel() && pred.dim(0) > 0, DimensionError,
                  "smooth_l1: ", target.size(), " targets for ", pred.numel(), " predictions");
  GANMASK_REQUIRE(beta > T(0), ContractError, "smooth_l1: beta must be positive");
  const std::size_t n = pred.dim(0);
  T loss = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const T d = std::abs(pred[i] - target[i]);
    loss += d < beta ? T(0.5) * d * d / beta : d - T(0.5) * beta;
  }
  loss /= static_cast<T>(n);
  return detail::make_result<T>(Shape{1}, {loss}, {pred}, "smooth_l1",
                                [target, beta, n](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  const auto& p = self.inputs[0]->data;
                                  const T s = self.grad[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < target.size(); ++i) {
                                    const T d = p[i] - target[i];
                                    const T dd = std::abs(d) < beta ? d / beta : (d > 0 ? T(1) : T(-1));
                                    g[i] += s * dd;
                                  }
                                });
}

}  // namespace ganmask
