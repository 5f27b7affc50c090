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
// Box discriminator (pooled region -> score in (0,1)) and mask discriminator
// (mask-modulated region -> concatenated per-layer activations).

#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "ganmask/layers.hpp"
#include "ganmask/heads.hpp"
#include "ganmask/prroi.hpp"

namespace ganmask {

struct DiscriminatorConfig {
  std::size_t in_channels = 32;
  std::size_t input_size = 28;
  int depth = 5;  // 3, 4 or 5 conv layers
  double leaky_slope = 0.2;
  std::uint64_t init_seed = 2;

  void validate() const {
    GANMASK_REQUIRE(depth >= 3 && depth <= 5, ConfigError, "discriminator: depth must be 3, 4 or 5, got ", depth);
    GANMASK_REQUIRE(input_size == 28, ConfigError, "discriminator: input size must be 28");
  }
};

namespace disc_detail {

template <typename T>
void check_input(const Tensor<T>& x, const DiscriminatorConfig& cfg, const char* who) {
  GANMASK_REQUIRE(x.ndim() == 4 && x.dim(1) == cfg.in_channels && x.dim(2) == cfg.input_size &&
                      x.dim(3) == cfg.input_size,
                  DimensionError, who, ": input must be [N,", cfg.in_channels, ",", cfg.input_size, ",",
                  cfg.input_size, "], got ", shape_str(x.shape()));
}

}  // namespace disc_detail

// Layers 28 -> 14 -> 7 -> 3 -> 1 with 64, 128, 256, 512 channels, then a
// final conv to one channel whose kernel covers the remaining extent.
// Shallower variants keep the leading blocks.
template <typename T>
class BoxDiscriminator {
 public:
  explicit BoxDiscriminator(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.init_seed);
    struct Block {
      std::size_t out, k, stride, pad;
    };
    const Block schedule[4] = {{64, 4, 2, 1}, {128, 4, 2, 1}, {256, 3, 2, 0}, {512, 3, 1, 0}};
    std::size_t in = cfg.in_channels, size = cfg.input_size;
    for (int i = 0; i < cfg.depth - 1; ++i) {
      const auto& sp = schedule[i];
      convs_.push_back(Conv2d<T>(store_, detail::concat("boxd.conv", i + 1), in, sp.out, sp.k, sp.stride, sp.pad,
                                 kReluGain, rng));
      bns_.push_back(BatchNorm2d<T>(store_, detail::concat("boxd.bn", i + 1), sp.out));
      in = sp.out;
      size = (size + 2 * sp.pad - sp.k) / sp.stride + 1;
      spatial_.push_back(size);
    }
    head_ = Conv2d<T>(store_, detail::concat("boxd.conv", cfg.depth), in, 1, size, 1, 0, 1.0, rng);
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  ParamRefs<T> params() { return store_.refs(); }
  const std::vector<std::size_t>& spatial_sizes() const { return spatial_; }
  std::size_t forward_calls() const { return forward_calls_; }

  // x [N,C,28,28] -> scores [N] in (0,1).
  Tensor<T> forward(const Tensor<T>& x, NormMode mode, bool update_running = true) const {
    disc_detail::check_input(x, cfg_, "box_discriminator");
    ++forward_calls_;
    Tensor<T> h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      h = leaky_relu(bns_[i](convs_[i](h), mode, update_running), static_cast<T>(cfg_.leaky_slope));
    return sigmoid(reshape(head_(h), Shape{x.dim(0)}));
  }

 private:
  DiscriminatorConfig cfg_;
  ParamStore<T> store_;
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm2d<T>> bns_;
  Conv2d<T> head_;
  std::vector<std::size_t> spatial_;
  mutable std::size_t forward_calls_ = 0;
};

template <typename T>
struct HierFeatures {
  Tensor<T> concat;                     // [N, sum(layer_sizes)]
  std::vector<std::size_t> layer_sizes;  // per-sample sizes, shallowest first
};

// Conv(3x3, stride 2, pad 1) + BN + LeakyReLU blocks, 28 -> 14 -> 7 -> 4 -> 2 -> 1
// with 64, 64, 128, 128, 256 channels; every block's activation is kept.
template <typename T>
class MaskDiscriminator {
 public:
  explicit MaskDiscriminator(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.init_seed + 1);
    const std::size_t widths[5] = {64, 64, 128, 128, 256};
    std::size_t in = cfg.in_channels, size = cfg.input_size;
    for (int i = 0; i < cfg.depth; ++i) {
      convs_.push_back(
          Conv2d<T>(store_, detail::concat("maskd.conv", i + 1), in, widths[i], 3, 2, 1, kReluGain, rng));
      bns_.push_back(BatchNorm2d<T>(store_, detail::concat("maskd.bn", i + 1), widths[i]));
      in = widths[i];
      size = (size + 1) / 2;
      layer_sizes_.push_back(widths[i] * size * size);
    }
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  ParamRefs<T> params() { return store_.refs(); }
  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
  std::size_t forward_calls() const { return forward_calls_; }

  HierFeatures<T> forward(const Tensor<T>& x, NormMode mode, bool update_running = true) const {
    disc_detail::check_input(x, cfg_, "mask_discriminator");
    ++forward_calls_;
    std::vector<Tensor<T>> parts;
    Tensor<T> h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = leaky_relu(bns_[i](convs_[i](h), mode, update_running), static_cast<T>(cfg_.leaky_slope));
      parts.push_back(reshape(h, Shape{x.dim(0), layer_sizes_[i]}));
    }
    return {concat_cols(parts), layer_sizes_};
  }

 private:
  DiscriminatorConfig cfg_;
  ParamStore<T> store_;
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm2d<T>> bns_;
  std::vector<std::size_t> layer_sizes_;
  mutable std::size_t forward_calls_ = 0;
};

// Pools `boxes` (image coordinates, [N,4]) at `size` from the given levels.
// Pass a tensor with requires_grad for fake boxes and a constant for real ones.
template <typename T>
Tensor<T> prepare_box_disc_input(const std::vector<Tensor<T>>& levels, const std::vector<double>& strides,
                                 const std::vector<RoiRef>& refs, const Tensor<T>& boxes, std::size_t size = 28) {
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const double s = strides.at(refs[i].level);
    const Box b = box_row(boxes, i);
    GANMASK_REQUIRE(b.valid(), ContractError, "prepare_box_disc_input: box ", i, " is degenerate: (", b.x1, ",",
                    b.y1, ",", b.x2, ",", b.y2, ")");
    GANMASK_REQUIRE((double(boxes[i * 4 + 2]) - double(boxes[i * 4])) / s > 0, ContractError,
                    "prepare_box_disc_input: box ", i, " degenerate after scaling");
  }
  return pool_rois(levels, strides, refs, boxes, size);
}

// mask28 [N,1,28,28] in [0,1] times roi [N,C,28,28].
template <typename T>
Tensor<T> prepare_mask_disc_input(const Tensor<T>& mask28, const Tensor<T>& roi) {
  for (std::size_t i = 0; i < mask28.numel(); ++i)
    GANMASK_REQUIRE(mask28[i] >= T(0) && mask28[i] <= T(1), ContractError,
                    "prepare_mask_disc_input: mask value ", mask28[i], " outside [0,1]; apply sigmoid first");
  return mul_channel_broadcast(mask28, roi);
}

}  // namespace ganmask
