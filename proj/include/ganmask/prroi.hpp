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
// Precise RoI pooling.
//
// The feature map is the bilinear interpolant of its samples, which sit at
// integer coordinates (j, i); beyond the last sample the interpolant is held
// constant, so it is defined on [0, W] x [0, H]. Each output bin is the exact
// integral of the interpolant over the bin divided by the bin area.
//
// The interpolant is a sum of separable tent functions, so the integral over
// [a,b] x [c,d] is sum_{i,j} F[i][j] * (Pj(b) - Pj(a)) * (Pi(d) - Pi(c)) with
// P the antiderivative of a tent. Moving a bin edge changes the integral by
// the line integral of the interpolant along that edge, which is the same
// sum with the antiderivative difference replaced by the tent value.

#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <utility>
#include <vector>

#include "ganmask/box.hpp"
#include "ganmask/tensor.hpp"

namespace ganmask {

inline constexpr double kMinRoiSide = 1e-3;

namespace prroi_detail {

// Antiderivative of the tent basis for sample g; the last sample's basis
// stays at 1 to the right of g.
inline double basis_primitive(double x, long g, bool last) {
  const double u = x - static_cast<double>(g);
  if (last && u > 0) return 0.5 + u;
  if (u <= -1) return 0;
  if (u <= 0) return 0.5 * (u + 1) * (u + 1);
  if (u <= 1) return 1 - 0.5 * (1 - u) * (1 - u);
  return 1;
}

inline double basis_value(double x, long g, bool last) {
  const double u = x - static_cast<double>(g);
  if (last && u >= 0) return 1;
  return std::max(0.0, 1 - std::abs(u));
}

// Sparse weights over samples [begin, begin + w.size()).
struct Weights {
  long begin = 0;
  std::vector<double> w;
};

inline Weights integral_weights(double a, double b, long n) {
  Weights out;
  const long lo = std::max(0L, static_cast<long>(std::floor(a)) - 1);
  const long hi = std::min(n - 1, static_cast<long>(std::ceil(b)) + 1);
  out.begin = lo;
  for (long g = lo; g <= hi; ++g)
    out.w.push_back(basis_primitive(b, g, g == n - 1) - basis_primitive(a, g, g == n - 1));
  return out;
}

inline Weights point_weights(double x, long n) {
  Weights out;
  const long lo = std::max(0L, static_cast<long>(std::floor(x)) - 1);
  const long hi = std::min(n - 1, static_cast<long>(std::floor(x)) + 1);
  out.begin = lo;
  for (long g = lo; g <= hi; ++g) out.w.push_back(basis_value(x, g, g == n - 1));
  return out;
}

// sum_{gy, gx} wy[gy] * plane[gy][gx] * wx[gx]
template <typename T>
double contract(const T* plane, long width, const Weights& wy, const Weights& wx) {
  double total = 0;
  for (std::size_t a = 0; a < wy.w.size(); ++a) {
    if (wy.w[a] == 0) continue;
    const T* row = plane + (wy.begin + static_cast<long>(a)) * width + wx.begin;
    double acc = 0;
    for (std::size_t b = 0; b < wx.w.size(); ++b) acc += wx.w[b] * static_cast<double>(row[b]);
    total += wy.w[a] * acc;
  }
  return total;
}

template <typename T>
void scatter(T* plane, long width, const Weights& wy, const Weights& wx, double value) {
  for (std::size_t a = 0; a < wy.w.size(); ++a) {
    if (wy.w[a] == 0) continue;
    T* row = plane + (wy.begin + static_cast<long>(a)) * width + wx.begin;
    const double s = value * wy.w[a];
    for (std::size_t b = 0; b < wx.w.size(); ++b) row[b] += static_cast<T>(s * wx.w[b]);
  }
}

inline std::atomic<double>& box_grad_fault() {
  static std::atomic<double> scale{1.0};
  return scale;
}

}  // namespace prroi_detail

// Test hook: multiplies every box-coordinate gradient produced by prRoI
// backward. 1.0 disables the fault.
inline void set_prroi_box_grad_fault(double scale) { prroi_detail::box_grad_fault() = scale; }

// Box after clamping into [0, W] x [0, H] with a minimum side. `free[k]` is
// false for coordinates the clamp moved; those receive no gradient.
struct ClampedBox {
  Box box;
  std::array<bool, 4> free{true, true, true, true};
};

inline ClampedBox clamp_feature_box(const Box& b, double width, double height,
                                    double min_side = kMinRoiSide) {
  ClampedBox out;
  const double lim[4] = {width, height, width, height};
  const double in[4] = {b.x1, b.y1, b.x2, b.y2};
  double c[4];
  for (int k = 0; k < 4; ++k) {
    c[k] = std::clamp(in[k], 0.0, lim[k]);
    out.free[k] = c[k] == in[k];
  }
  for (int axis = 0; axis < 2; ++axis) {
    double& lo = c[axis];
    double& hi = c[axis + 2];
    if (hi - lo < min_side) {
      hi = lo + min_side;
      if (hi > lim[axis]) {
        hi = lim[axis];
        lo = hi - min_side;
      }
      out.free[axis] = out.free[axis + 2] = false;
    }
  }
  out.box = {c[0], c[1], c[2], c[3]};
  return out;
}

// Exact integral over [a,b] x [c,d] of the interpolant of `feature` [H,W].
template <typename T>
double bilinear_integral(const T* feature, long height, long width, double a, double b, double c,
                         double d) {
  GANMASK_REQUIRE(b > a && d > c, ContractError, "bilinear_integral: degenerate rectangle [", a,
                  ",", b, "]x[", c, ",", d, "]");
  GANMASK_REQUIRE(a >= 0 && b <= width && c >= 0 && d <= height, ContractError,
                  "bilinear_integral: rectangle outside [0,", width, "]x[0,", height, "]");
  return prroi_detail::contract(feature, width, prroi_detail::integral_weights(c, d, height),
                                prroi_detail::integral_weights(a, b, width));
}

template <typename T>
double bilinear_integral(const Tensor<T>& feature, double a, double b, double c, double d) {
  GANMASK_REQUIRE(feature.ndim() == 2, DimensionError, "bilinear_integral: feature must be [H,W]");
  return bilinear_integral(feature.values().data(), static_cast<long>(feature.dim(0)),
                           static_cast<long>(feature.dim(1)), a, b, c, d);
}

// Point evaluation of the interpolant (used by oracles and mask resampling).
template <typename T>
double bilinear_sample(const T* feature, long height, long width, double x, double y) {
  return prroi_detail::contract(feature, width, prroi_detail::point_weights(y, height),
                                prroi_detail::point_weights(x, width));
}

namespace prroi_detail {

struct BinGrid {
  std::vector<Weights> rows, cols;          // integral weights per bin row/col
  std::vector<Weights> row_edges, col_edges;  // point weights at the S+1 edges
  double bin_w = 0, bin_h = 0;
};

inline BinGrid make_grid(const Box& b, long height, long width, std::size_t s, bool edges) {
  BinGrid g;
  g.bin_w = b.width() / static_cast<double>(s);
  g.bin_h = b.height() / static_cast<double>(s);
  for (std::size_t k = 0; k < s; ++k) {
    const double x0 = b.x1 + static_cast<double>(k) * g.bin_w;
    const double x1 = k + 1 == s ? b.x2 : b.x1 + static_cast<double>(k + 1) * g.bin_w;
    const double y0 = b.y1 + static_cast<double>(k) * g.bin_h;
    const double y1 = k + 1 == s ? b.y2 : b.y1 + static_cast<double>(k + 1) * g.bin_h;
    g.cols.push_back(integral_weights(x0, x1, width));
    g.rows.push_back(integral_weights(y0, y1, height));
  }
  if (edges) {
    for (std::size_t k = 0; k <= s; ++k) {
      g.col_edges.push_back(point_weights(k == s ? b.x2 : b.x1 + static_cast<double>(k) * g.bin_w, width));
      g.row_edges.push_back(point_weights(k == s ? b.y2 : b.y1 + static_cast<double>(k) * g.bin_h, height));
    }
  }
  return g;
}

}  // namespace prroi_detail

// features: C planes of [H,W]; out: C x S x S. `box` must already be clamped.
template <typename T>
void prroi_forward(const T* features, std::size_t channels, long height, long width, const Box& box,
                   std::size_t s, T* out) {
  GANMASK_REQUIRE(box.valid() && box.x1 >= 0 && box.y1 >= 0 && box.x2 <= width && box.y2 <= height,
                  ContractError, "prroi_pool: box (", box.x1, ",", box.y1, ",", box.x2, ",", box.y2,
                  ") outside feature domain [0,", width, "]x[0,", height, "]");
  const auto grid = prroi_detail::make_grid(box, height, width, s, false);
  const double area = grid.bin_w * grid.bin_h;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = features + c * static_cast<std::size_t>(height * width);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j)
        out[(c * s + i) * s + j] =
            static_cast<T>(prroi_detail::contract(plane, width, grid.rows[i], grid.cols[j]) / area);
  }
}

// Accumulates into grad_features (may be null) and grad_box (may be null).
// `pooled` holds the forward output for the same box.
template <typename T>
void prroi_backward(const T* features, std::size_t channels, long height, long width,
                    const ClampedBox& cb, std::size_t s, const T* upstream, const T* pooled,
                    T* grad_features, double* grad_box) {
  const Box& box = cb.box;
  const auto grid = prroi_detail::make_grid(box, height, width, s, grad_box != nullptr);
  const double area = grid.bin_w * grid.bin_h;
  const double sd = static_cast<double>(s);
  double g[4] = {0, 0, 0, 0};
  const std::size_t plane_size = static_cast<std::size_t>(height * width);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = features + c * plane_size;
    const T* up = upstream + c * s * s;
    if (grad_features) {
      T* gplane = grad_features + c * plane_size;
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const double u = static_cast<double>(up[i * s + j]);
          if (u != 0) prroi_detail::scatter(gplane, width, grid.rows[i], grid.cols[j], u / area);
        }
    }
    if (grad_box) {
      const T* val = pooled + c * s * s;
      // Line integrals along vertical edges (per bin row) and horizontal edges (per bin col).
      for (std::size_t i = 0; i < s; ++i) {
        std::vector<double> vline(s + 1);
        for (std::size_t k = 0; k <= s; ++k)
          vline[k] = prroi_detail::contract(plane, width, grid.rows[i], grid.col_edges[k]);
        for (std::size_t j = 0; j < s; ++j) {
          const double u = static_cast<double>(up[i * s + j]);
          if (u == 0) continue;
          const double v = static_cast<double>(val[i * s + j]);
          const double jd = static_cast<double>(j);
          const double left = -vline[j], right = vline[j + 1];
          g[0] += u * ((left * (1 - jd / sd) + right * (1 - (jd + 1) / sd)) / area + v / box.width());
          g[2] += u * ((left * (jd / sd) + right * ((jd + 1) / sd)) / area - v / box.width());
        }
      }
      for (std::size_t j = 0; j < s; ++j) {
        std::vector<double> hline(s + 1);
        for (std::size_t k = 0; k <= s; ++k)
          hline[k] = prroi_detail::contract(plane, width, grid.row_edges[k], grid.cols[j]);
        for (std::size_t i = 0; i < s; ++i) {
          const double u = static_cast<double>(up[i * s + j]);
          if (u == 0) continue;
          const double v = static_cast<double>(val[i * s + j]);
          const double id = static_cast<double>(i);
          const double top = -hline[i], bottom = hline[i + 1];
          g[1] += u * ((top * (1 - id / sd) + bottom * (1 - (id + 1) / sd)) / area + v / box.height());
          g[3] += u * ((top * (id / sd) + bottom * ((id + 1) / sd)) / area - v / box.height());
        }
      }
    }
  }
  if (grad_box) {
    const double fault = prroi_detail::box_grad_fault().load();
    for (int k = 0; k < 4; ++k)
      if (cb.free[k]) grad_box[k] += g[k] * fault;
  }
}

// Pooled region of one box: data [C,S,S] plus the pyramid level it came from.
template <typename T>
struct PooledRegion {
  Tensor<T> data;
  int source_level = 0;
};

// Single-map convenience: features [C,H,W], box in feature coordinates.
template <typename T>
PooledRegion<T> prroi_pool(const Tensor<T>& features, const Box& box, std::size_t output_size,
                           int level = 0) {
  GANMASK_REQUIRE(features.ndim() == 3, DimensionError, "prroi_pool: features must be [C,H,W], got ",
                  shape_str(features.shape()));
  const std::size_t c = features.dim(0);
  const long h = static_cast<long>(features.dim(1)), w = static_cast<long>(features.dim(2));
  GANMASK_REQUIRE(box.valid(), ContractError, "prroi_pool: box must have positive area");
  const auto cb = clamp_feature_box(box, static_cast<double>(w), static_cast<double>(h));
  std::vector<T> out(c * output_size * output_size);
  prroi_forward(features.values().data(), c, h, w, cb.box, output_size, out.data());
  return {Tensor<T>(Shape{c, output_size, output_size}, std::move(out)), level};
}

template <typename T>
struct PrRoIGrads {
  Tensor<T> features;
  std::array<double, 4> box{0, 0, 0, 0};
};

template <typename T>
PrRoIGrads<T> prroi_backward(const Tensor<T>& features, const Box& box, std::size_t output_size,
                             const Tensor<T>& upstream) {
  const std::size_t c = features.dim(0);
  const long h = static_cast<long>(features.dim(1)), w = static_cast<long>(features.dim(2));
  GANMASK_REQUIRE(upstream.numel() == c * output_size * output_size, DimensionError,
                  "prroi_backward: upstream gradient must be ", c, "x", output_size, "x",
                  output_size);
  const auto cb = clamp_feature_box(box, static_cast<double>(w), static_cast<double>(h));
  std::vector<T> pooled(c * output_size * output_size);
  prroi_forward(features.values().data(), c, h, w, cb.box, output_size, pooled.data());
  PrRoIGrads<T> out{Tensor<T>(features.shape()), {0, 0, 0, 0}};
  prroi_backward(features.values().data(), c, h, w, cb, output_size, upstream.values().data(),
                 pooled.data(), out.features.values().data(), out.box.data());
  return out;
}

struct RoiRef {
  std::size_t image = 0;
  std::size_t level = 0;
};

// Differentiable batched pooling. levels[l] is [B,C,Hl,Wl] with stride
// strides[l]; boxes [N,4] are image coordinates; output [N,C,S,S].
template <typename T>
Tensor<T> pool_rois(const std::vector<Tensor<T>>& levels, const std::vector<double>& strides,
                    const std::vector<RoiRef>& refs, const Tensor<T>& boxes, std::size_t s) {
  GANMASK_REQUIRE(levels.size() == strides.size() && !levels.empty(), DimensionError,
                  "pool_rois: ", levels.size(), " levels vs ", strides.size(), " strides");
  GANMASK_REQUIRE(boxes.ndim() == 2 && boxes.dim(1) == 4 && boxes.dim(0) == refs.size(),
                  DimensionError, "pool_rois: boxes ", shape_str(boxes.shape()), " for ",
                  refs.size(), " rois");
  const std::size_t c = levels[0].dim(1);
  const std::size_t n = refs.size();
  std::vector<ClampedBox> clamped(n);
  std::vector<T> out(n * c * s * s);
  for (std::size_t r = 0; r < n; ++r) {
    GANMASK_REQUIRE(refs[r].level < levels.size() && refs[r].image < levels[refs[r].level].dim(0),
                    ContractError, "pool_rois: roi ", r, " references a missing map");
    const auto& lvl = levels[refs[r].level];
    const long h = static_cast<long>(lvl.dim(2)), w = static_cast<long>(lvl.dim(3));
    const double inv = 1.0 / strides[refs[r].level];
    Box fb{boxes[r * 4] * inv, boxes[r * 4 + 1] * inv, boxes[r * 4 + 2] * inv, boxes[r * 4 + 3] * inv};
    clamped[r] = clamp_feature_box(fb, static_cast<double>(w), static_cast<double>(h));
    if (kink_tracking())
      for (bool f : clamped[r].free) detail::note_kink_region(f);
    prroi_forward(lvl.values().data() + refs[r].image * c * static_cast<std::size_t>(h * w), c, h, w,
                  clamped[r].box, s, out.data() + r * c * s * s);
  }
  std::vector<Tensor<T>> inputs = levels;
  inputs.push_back(boxes);
  const std::size_t nlev = levels.size();
  auto pooled = std::make_shared<std::vector<T>>(out);
  return detail::make_result<T>(
      Shape{n, c, s, s}, std::move(out), std::move(inputs), "pool_rois",
      [refs, clamped, strides, c, s, n, nlev, pooled](detail::Node<T>& self) {
        const bool want_box = detail::wants_grad(self, nlev);
        for (std::size_t r = 0; r < n; ++r) {
          const auto& lvl = *self.inputs[refs[r].level];
          const long h = static_cast<long>(lvl.shape[2]), w = static_cast<long>(lvl.shape[3]);
          const std::size_t off = refs[r].image * c * static_cast<std::size_t>(h * w);
          T* gfeat = detail::wants_grad(self, refs[r].level)
                         ? self.inputs[refs[r].level]->grad_buffer().data() + off
                         : nullptr;
          double gbox[4] = {0, 0, 0, 0};
          if (!gfeat && !want_box) continue;
          prroi_backward(lvl.data.data() + off, c, h, w, clamped[r], s,
                         self.grad.data() + r * c * s * s, pooled->data() + r * c * s * s, gfeat,
                         want_box ? gbox : nullptr);
          if (want_box) {
            auto& gb = self.inputs[nlev]->grad_buffer();
            const double inv = 1.0 / strides[refs[r].level];
            for (int k = 0; k < 4; ++k) gb[r * 4 + k] += static_cast<T>(gbox[k] * inv);
          }
        }
      });
}

}  // namespace ganmask
