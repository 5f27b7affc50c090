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
// The generator: a 3-level convolutional pyramid, jittered ground-truth
// proposals, a box head (class logits + class-agnostic deltas) and a mask head
// (per-class 28x28 logits).

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ganmask/box.hpp"
#include "ganmask/layers.hpp"
#include "ganmask/prroi.hpp"
#include "ganmask/synthdata.hpp"

namespace ganmask {

// Per-level feature maps, batched: levels[l] is [B,C,Hl,Wl].
template <typename T>
struct PyramidFeatures {
  std::vector<Tensor<T>> levels;
  std::vector<double> strides;

  PyramidFeatures detached() const {
    PyramidFeatures out{{}, strides};
    for (const auto& l : levels) out.levels.push_back(l.detach());
    return out;
  }
};

struct JitterConfig {
  double scale = 0.15;  // side lengths scaled by U[1-s, 1+s]
  double shift = 0.1;   // center shifted by U[-t, t] * side
  std::size_t per_gt = 4;
  double min_iou = 0.5;
  std::size_t max_retries = 50;
  std::size_t background_per_image = 4;
  double background_max_iou = 0.3;
  double background_min_side = 6.0;
  double background_max_side = 32.0;
};

struct Proposal {
  Box box;
  std::optional<int> matched_gt;
  int assigned_level = 0;
  int label = 0;  // gt class, 0 for background
};

inline int assign_level(const Box& box, std::size_t num_levels, double base = 16.0) {
  GANMASK_REQUIRE(box.valid(), ContractError, "assign_level: box must have positive area");
  const double lvl = std::floor(std::log2(std::sqrt(box.area()) / base));
  return static_cast<int>(std::clamp(lvl, 0.0, static_cast<double>(num_levels) - 1.0));
}

inline Box jitter_box(const Box& gt, const JitterConfig& j, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> sc(1.0 - j.scale, 1.0 + j.scale);
  std::uniform_real_distribution<double> sh(-j.shift, j.shift);
  const double w = gt.width() * sc(rng), h = gt.height() * sc(rng);
  const double cx = gt.cx() + sh(rng) * gt.width(), cy = gt.cy() + sh(rng) * gt.height();
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// Positive proposals: per_gt jittered copies of every gt box, resampled until
// IoU >= min_iou (falling back to the gt box itself), then clipped to the
// image. Background proposals overlap every gt by less than background_max_iou.
// nullopt for an image with no instances, which callers skip.
inline std::optional<std::vector<Proposal>> sample_proposals(const std::vector<Instance>& gts,
                                                             const JitterConfig& j, std::mt19937_64& rng,
                                                             double image_w, double image_h,
                                                             std::size_t num_levels = 3) {
  if (gts.empty()) return std::nullopt;
  std::vector<Proposal> out;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t k = 0; k < j.per_gt; ++k) {
      Box b = gts[g].box;
      for (std::size_t attempt = 0; attempt < j.max_retries; ++attempt) {
        const Box cand = clamp_to_image(jitter_box(gts[g].box, j, rng), image_w, image_h);
        if (cand.valid() && box_iou(cand, gts[g].box) >= j.min_iou) {
          b = cand;
          break;
        }
      }
      out.push_back({b, static_cast<int>(g), assign_level(b, num_levels), gts[g].class_id});
    }
  }
  std::uniform_real_distribution<double> side(j.background_min_side, j.background_max_side);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < j.background_per_image; ++k) {
    for (std::size_t attempt = 0; attempt < j.max_retries; ++attempt) {
      const double w = std::min(side(rng), image_w), h = std::min(side(rng), image_h);
      const double x = unit(rng) * (image_w - w), y = unit(rng) * (image_h - h);
      const Box cand{x, y, x + w, y + h};
      double worst = 0;
      for (const auto& gt : gts) worst = std::max(worst, box_iou(cand, gt.box));
      if (worst < j.background_max_iou) {
        out.push_back({cand, std::nullopt, assign_level(cand, num_levels), 0});
        break;
      }
    }
  }
  return out;
}

// Differentiable decode of deltas [N,4] against fixed reference boxes -> [N,4]
// of (x1, y1, x2, y2). Log-size deltas are clipped to [-max_log_ratio, max_log_ratio].
template <typename T>
Tensor<T> decode_boxes(const Tensor<T>& deltas, const std::vector<Box>& refs,
                       double max_log_ratio = 4.135166556742356) {
  GANMASK_REQUIRE(deltas.ndim() == 2 && deltas.dim(1) == 4 && deltas.dim(0) == refs.size(), DimensionError,
                  "decode_boxes: deltas ", shape_str(deltas.shape()), " for ", refs.size(), " boxes");
  const std::size_t n = refs.size();
  std::vector<T> out(n * 4);
  std::vector<std::array<double, 2>> size(n);
  std::vector<std::array<bool, 2>> clipped(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Box& r = refs[i];
    const double d[4] = {double(deltas[i * 4]), double(deltas[i * 4 + 1]), double(deltas[i * 4 + 2]),
                         double(deltas[i * 4 + 3])};
    clipped[i] = {std::abs(d[2]) > max_log_ratio, std::abs(d[3]) > max_log_ratio};
    const double cx = r.cx() + d[0] * r.width(), cy = r.cy() + d[1] * r.height();
    const double w = r.width() * std::exp(std::clamp(d[2], -max_log_ratio, max_log_ratio));
    const double h = r.height() * std::exp(std::clamp(d[3], -max_log_ratio, max_log_ratio));
    size[i] = {w, h};
    out[i * 4] = static_cast<T>(cx - 0.5 * w);
    out[i * 4 + 1] = static_cast<T>(cy - 0.5 * h);
    out[i * 4 + 2] = static_cast<T>(cx + 0.5 * w);
    out[i * 4 + 3] = static_cast<T>(cy + 0.5 * h);
    if (kink_tracking()) {
      detail::note_kink_region(clipped[i][0]);
      detail::note_kink_region(clipped[i][1]);
    }
  }
  return detail::make_result<T>(Shape{n, 4}, std::move(out), {deltas}, "decode_boxes",
                                [refs, size, clipped, n](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::size_t i = 0; i < n; ++i) {
                                    const T* go = self.grad.data() + i * 4;
                                    g[i * 4] += static_cast<T>((go[0] + go[2]) * refs[i].width());
                                    g[i * 4 + 1] += static_cast<T>((go[1] + go[3]) * refs[i].height());
                                    if (!clipped[i][0]) g[i * 4 + 2] += static_cast<T>(0.5 * size[i][0] * (go[2] - go[0]));
                                    if (!clipped[i][1]) g[i * 4 + 3] += static_cast<T>(0.5 * size[i][1] * (go[3] - go[1]));
                                  }
                                });
}

template <typename T>
Tensor<T> boxes_tensor(const std::vector<Box>& boxes) {
  Tensor<T> t(Shape{boxes.size(), 4});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    t[i * 4] = static_cast<T>(boxes[i].x1);
    t[i * 4 + 1] = static_cast<T>(boxes[i].y1);
    t[i * 4 + 2] = static_cast<T>(boxes[i].x2);
    t[i * 4 + 3] = static_cast<T>(boxes[i].y2);
  }
  return t;
}

template <typename T>
Box box_row(const Tensor<T>& boxes, std::size_t i) {
  return {double(boxes[i * 4]), double(boxes[i * 4 + 1]), double(boxes[i * 4 + 2]), double(boxes[i * 4 + 3])};
}

// Stacks scene images into [B,3,H,W].
template <typename T>
Tensor<T> image_batch(const std::vector<const Scene*>& scenes) {
  GANMASK_REQUIRE(!scenes.empty(), ContractError, "image_batch: no scenes");
  const Shape s = scenes[0]->image.shape();
  Tensor<T> out(Shape{scenes.size(), s[0], s[1], s[2]});
  const std::size_t per = numel_of(s);
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    GANMASK_REQUIRE(scenes[b]->image.shape() == s, DimensionError, "image_batch: mixed image sizes");
    std::copy(scenes[b]->image.values().begin(), scenes[b]->image.values().end(), out.values().begin() + b * per);
  }
  return out;
}

// Resamples a gt mask onto an M x M grid over `box`: bin centers bilinearly
// sample the mask (pixel centers at c + 0.5) and threshold at 0.5.
template <typename T>
std::vector<T> mask_target(const BinaryMask& m, const Box& box, std::size_t size = 28) {
  std::vector<T> out(size * size);
  const double bw = box.width() / double(size), bh = box.height() / double(size);
  auto px = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= long(m.height) || c >= long(m.width)) return 0.0;
    return m.at(std::size_t(r), std::size_t(c));
  };
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double x = box.x1 + (double(j) + 0.5) * bw - 0.5, y = box.y1 + (double(i) + 0.5) * bh - 0.5;
      const long c0 = long(std::floor(x)), r0 = long(std::floor(y));
      const double fx = x - double(c0), fy = y - double(r0);
      const double v = (1 - fy) * ((1 - fx) * px(r0, c0) + fx * px(r0, c0 + 1)) +
                       fy * ((1 - fx) * px(r0 + 1, c0) + fx * px(r0 + 1, c0 + 1));
      out[i * size + j] = v >= 0.5 ? T(1) : T(0);
    }
  return out;
}

// Pastes an M x M probability map into `box` on an H x W canvas: each pixel
// center inside the box bilinearly samples the map (edge-clamped); >= threshold
// sets the pixel.
template <typename T>
BinaryMask paste_mask(std::span<const T> probs, std::size_t size, const Box& box, std::size_t height,
                      std::size_t width, double threshold = 0.5) {
  GANMASK_REQUIRE(probs.size() == size * size, DimensionError, "paste_mask: expected ", size * size, " values");
  BinaryMask out(height, width);
  if (!box.valid()) return out;
  const long c_lo = std::max(0L, long(std::floor(box.x1 - 0.5)));
  const long c_hi = std::min(long(width) - 1, long(std::ceil(box.x2)));
  const long r_lo = std::max(0L, long(std::floor(box.y1 - 0.5)));
  const long r_hi = std::min(long(height) - 1, long(std::ceil(box.y2)));
  const double sx = double(size) / box.width(), sy = double(size) / box.height();
  const long last = long(size) - 1;
  auto at = [&](long i, long j) {
    return double(probs[std::size_t(std::clamp(i, 0L, last)) * size + std::size_t(std::clamp(j, 0L, last))]);
  };
  for (long r = r_lo; r <= r_hi; ++r)
    for (long c = c_lo; c <= c_hi; ++c) {
      const double x = double(c) + 0.5, y = double(r) + 0.5;
      if (x < box.x1 || x > box.x2 || y < box.y1 || y > box.y2) continue;
      const double u = (x - box.x1) * sx - 0.5, v = (y - box.y1) * sy - 0.5;
      const long j0 = long(std::floor(u)), i0 = long(std::floor(v));
      const double fu = u - double(j0), fv = v - double(i0);
      const double p = (1 - fv) * ((1 - fu) * at(i0, j0) + fu * at(i0, j0 + 1)) +
                       fv * ((1 - fu) * at(i0 + 1, j0) + fu * at(i0 + 1, j0 + 1));
      if (p >= threshold) out.at(std::size_t(r), std::size_t(c)) = 1;
    }
  return out;
}

struct GeneratorConfig {
  int num_classes = 3;
  std::size_t channels = 32;
  std::vector<double> strides{4, 8, 16};
  std::size_t box_pool = 7;
  std::size_t box_fc = 1024;
  std::size_t mask_pool = 14;
  std::size_t mask_width = 256;
  std::size_t mask_convs = 4;
  std::size_t mask_size = 28;  // mask_pool * 2 after the transposed conv
  std::uint64_t init_seed = 1;
};

template <typename T>
struct BoxHeadResult {
  Tensor<T> class_logits;  // [N,K+1]
  Tensor<T> deltas;        // [N,4]
};

template <typename T>
class Generator {
 public:
  explicit Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
    GANMASK_REQUIRE(cfg.strides.size() == 3, ConfigError, "generator: exactly 3 pyramid levels supported");
    GANMASK_REQUIRE(cfg.mask_size == 2 * cfg.mask_pool, ConfigError, "generator: mask_size must be 2 * mask_pool");
    std::mt19937_64 rng(cfg.init_seed);
    const std::size_t c = cfg.channels;
    auto& s = store_;
    stem_ = Conv2d<T>(s, "backbone.stem", 3, 16, 3, 2, 1, kReluGain, rng);
    c2a_ = Conv2d<T>(s, "backbone.c2a", 16, 32, 3, 2, 1, kReluGain, rng);
    c2b_ = Conv2d<T>(s, "backbone.c2b", 32, 32, 3, 1, 1, kReluGain, rng);
    c3a_ = Conv2d<T>(s, "backbone.c3a", 32, 64, 3, 2, 1, kReluGain, rng);
    c3b_ = Conv2d<T>(s, "backbone.c3b", 64, 64, 3, 1, 1, kReluGain, rng);
    c4a_ = Conv2d<T>(s, "backbone.c4a", 64, 64, 3, 2, 1, kReluGain, rng);
    c4b_ = Conv2d<T>(s, "backbone.c4b", 64, 64, 3, 1, 1, kReluGain, rng);
    lat_[0] = Conv2d<T>(s, "backbone.lat2", 32, c, 1, 1, 0, 1.0, rng);
    lat_[1] = Conv2d<T>(s, "backbone.lat3", 64, c, 1, 1, 0, 1.0, rng);
    lat_[2] = Conv2d<T>(s, "backbone.lat4", 64, c, 1, 1, 0, 1.0, rng);
    for (int l = 0; l < 3; ++l)
      out_[l] = Conv2d<T>(s, detail::concat("backbone.out", l + 2), c, c, 3, 1, 1, 1.0, rng);

    const std::size_t k = static_cast<std::size_t>(cfg.num_classes);
    fc1_ = Linear<T>(s, "box.fc1", c * cfg.box_pool * cfg.box_pool, cfg.box_fc, kReluGain, rng);
    fc2_ = Linear<T>(s, "box.fc2", cfg.box_fc, cfg.box_fc, kReluGain, rng);
    cls_ = Linear<T>(s, "box.cls", cfg.box_fc, k + 1, 1.0, rng);
    reg_ = Linear<T>(s, "box.reg", cfg.box_fc, 4, 0.1, rng);

    std::size_t in = c;
    for (std::size_t i = 0; i < cfg.mask_convs; ++i) {
      mask_convs_.push_back(
          Conv2d<T>(s, detail::concat("mask.conv", i + 1), in, cfg.mask_width, 3, 1, 1, kReluGain, rng));
      in = cfg.mask_width;
    }
    mask_up_ = ConvTranspose2d<T>(s, "mask.deconv", in, cfg.mask_width, 2, 2, kReluGain, rng);
    mask_out_ = Conv2d<T>(s, "mask.logits", cfg.mask_width, k, 1, 1, 0, 1.0, rng);
  }

  const GeneratorConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  ParamRefs<T> params() { return store_.refs(); }

  // images [B,3,H,W] -> three levels of C channels at the configured strides.
  PyramidFeatures<T> backbone(const Tensor<T>& images) const {
    GANMASK_REQUIRE(images.ndim() == 4 && images.dim(1) == 3, DimensionError,
                    "backbone: images must be [B,3,H,W], got ", shape_str(images.shape()));
    const double largest = cfg_.strides.back();
    GANMASK_REQUIRE(std::fmod(double(images.dim(2)), largest) == 0 && std::fmod(double(images.dim(3)), largest) == 0,
                    ConfigError, "backbone: image ", images.dim(2), "x", images.dim(3),
                    " not divisible by stride ", largest);
    auto x = relu(stem_(affine(images, T(1), T(-0.5))));
    auto c2 = relu(c2b_(relu(c2a_(x))));
    auto c3 = relu(c3b_(relu(c3a_(c2))));
    auto c4 = relu(c4b_(relu(c4a_(c3))));
    auto p4 = lat_[2](c4);
    auto p3 = add(lat_[1](c3), upsample_nearest2x(p4));
    auto p2 = add(lat_[0](c2), upsample_nearest2x(p3));
    return {{out_[0](p2), out_[1](p3), out_[2](p4)}, cfg_.strides};
  }

  BoxHeadResult<T> box_head(const PyramidFeatures<T>& pyr, const std::vector<RoiRef>& refs,
                            const Tensor<T>& boxes) const {
    return box_head_pooled(pool_rois(pyr.levels, pyr.strides, refs, boxes, cfg_.box_pool));
  }

  // roi [N,C,S,S] at S = box_pool.
  BoxHeadResult<T> box_head_pooled(const Tensor<T>& roi) const {
    GANMASK_REQUIRE(roi.ndim() == 4 && roi.dim(1) == cfg_.channels && roi.dim(2) == cfg_.box_pool &&
                        roi.dim(3) == cfg_.box_pool,
                    DimensionError, "box_head: roi must be [N,", cfg_.channels, ",", cfg_.box_pool, ",",
                    cfg_.box_pool, "], got ", shape_str(roi.shape()));
    auto h = relu(fc2_(relu(fc1_(flatten(roi)))));
    return {cls_(h), reg_(h)};
  }

  // Mask logits [N,K,M,M].
  Tensor<T> mask_head(const PyramidFeatures<T>& pyr, const std::vector<RoiRef>& refs,
                      const Tensor<T>& boxes) const {
    return mask_head_pooled(pool_rois(pyr.levels, pyr.strides, refs, boxes, cfg_.mask_pool));
  }

  Tensor<T> mask_head_pooled(const Tensor<T>& roi) const {
    GANMASK_REQUIRE(roi.ndim() == 4 && roi.dim(1) == cfg_.channels && roi.dim(2) == cfg_.mask_pool &&
                        roi.dim(3) == cfg_.mask_pool,
                    DimensionError, "mask_head: roi must be [N,", cfg_.channels, ",", cfg_.mask_pool, ",",
                    cfg_.mask_pool, "], got ", shape_str(roi.shape()));
    Tensor<T> x = roi;
    for (const auto& conv : mask_convs_) x = relu(conv(x));
    return mask_out_(relu(mask_up_(x)));
  }

 private:
  GeneratorConfig cfg_;
  ParamStore<T> store_;
  Conv2d<T> stem_, c2a_, c2b_, c3a_, c3b_, c4a_, c4b_;
  Conv2d<T> lat_[3], out_[3];
  Linear<T> fc1_, fc2_, cls_, reg_;
  std::vector<Conv2d<T>> mask_convs_;
  ConvTranspose2d<T> mask_up_;
  Conv2d<T> mask_out_;
};

// Channel indices (class_id - 1) for select_channel.
inline std::vector<std::size_t> class_channels(const std::vector<int>& class_ids) {
  std::vector<std::size_t> out;
  out.reserve(class_ids.size());
  for (int c : class_ids) {
    GANMASK_REQUIRE(c >= 1, ContractError, "class_channels: class id ", c, " is background");
    out.push_back(static_cast<std::size_t>(c - 1));
  }
  return out;
}

}  // namespace ganmask
