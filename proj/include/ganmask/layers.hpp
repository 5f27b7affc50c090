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
// Parameter ownership and the small set of layers the networks are built from.

#pragma once

#include <cstddef>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "ganmask/checkpoint.hpp"
#include "ganmask/ops.hpp"
#include "ganmask/optim.hpp"

namespace ganmask {

// Owns parameters at stable addresses, plus BatchNorm buffers for checkpointing.
template <typename T>
class ParamStore {
 public:
  Parameter<T>* add(std::string name, Tensor<T> value) {
    items_.emplace_back(std::move(name), std::move(value));
    return &items_.back();
  }

  BatchNormState<T>* add_bn(std::string name, std::size_t channels) {
    bn_.emplace_back(channels);
    bn_names_.push_back(std::move(name));
    return &bn_.back();
  }

  ParamRefs<T> refs() {
    ParamRefs<T> out;
    for (auto& p : items_) out.push_back(&p);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
  }

  // Parameters, momentum buffers and BN running statistics.
  std::vector<NamedTensor<T>> export_state(const std::string& prefix) const {
    std::vector<NamedTensor<T>> out;
    for (const auto& p : items_) {
      out.push_back({prefix + p.name, p.tensor.shape(), p.tensor.values()});
      out.push_back({prefix + p.name + "#momentum", p.tensor.shape(), p.momentum_buffer});
    }
    for (std::size_t i = 0; i < bn_.size(); ++i) {
      out.push_back({prefix + bn_names_[i] + "#running_mean", Shape{bn_[i].running_mean.size()},
                     bn_[i].running_mean});
      out.push_back({prefix + bn_names_[i] + "#running_var", Shape{bn_[i].running_var.size()},
                     bn_[i].running_var});
    }
    return out;
  }

  void import_state(const std::string& prefix, const std::vector<NamedTensor<T>>& entries) {
    auto find = [&](const std::string& name) -> const NamedTensor<T>& {
      for (const auto& e : entries)
        if (e.name == name) return e;
      throw ConfigError(detail::concat("checkpoint: missing tensor '", name, "'"));
    };
    auto assign = [](std::vector<T>& dst, const NamedTensor<T>& src) {
      GANMASK_REQUIRE(dst.size() == src.values.size(), ConfigError, "checkpoint: tensor '", src.name,
                      "' has ", src.values.size(), " values, expected ", dst.size());
      dst = src.values;
    };
    for (auto& p : items_) {
      assign(p.tensor.values(), find(prefix + p.name));
      assign(p.momentum_buffer, find(prefix + p.name + "#momentum"));
    }
    for (std::size_t i = 0; i < bn_.size(); ++i) {
      assign(bn_[i].running_mean, find(prefix + bn_names_[i] + "#running_mean"));
      assign(bn_[i].running_var, find(prefix + bn_names_[i] + "#running_var"));
    }
  }

 private:
  std::deque<Parameter<T>> items_;
  std::deque<BatchNormState<T>> bn_;
  std::vector<std::string> bn_names_;
};

template <typename T>
struct Conv2d {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  std::size_t stride = 1, padding = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
         std::size_t stride_, std::size_t padding_, double gain, std::mt19937_64& rng)
      : stride(stride_), padding(padding_) {
    weight = store.add(name + ".weight", uniform_fan_in<T>(Shape{cout, cin, k, k}, cin * k * k, gain, rng));
    bias = store.add(name + ".bias", Tensor<T>(Shape{cout}));
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight->tensor, bias->tensor, stride, padding);
  }
};

template <typename T>
struct ConvTranspose2d {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  std::size_t stride = 2, padding = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout,
                  std::size_t k, std::size_t stride_, double gain, std::mt19937_64& rng)
      : stride(stride_) {
    // Each output pixel sees cin * (k/stride)^2 taps.
    const std::size_t fan = cin * std::max<std::size_t>(1, (k / stride_) * (k / stride_));
    weight = store.add(name + ".weight", uniform_fan_in<T>(Shape{cin, cout, k, k}, fan, gain, rng));
    bias = store.add(name + ".bias", Tensor<T>(Shape{cout}));
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv_transpose2d(x, weight->tensor, bias->tensor, stride, padding);
  }
};

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, double gain,
         std::mt19937_64& rng) {
    weight = store.add(name + ".weight", uniform_fan_in<T>(Shape{out, in}, in, gain, rng));
    bias = store.add(name + ".bias", Tensor<T>(Shape{out}));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight->tensor, bias->tensor); }
};

template <typename T>
struct BatchNorm2d {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  BatchNormState<T>* state = nullptr;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& store, const std::string& name, std::size_t channels) {
    gamma = store.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
    beta = store.add(name + ".beta", Tensor<T>(Shape{channels}));
    state = store.add_bn(name, channels);
  }
  Tensor<T> operator()(const Tensor<T>& x, NormMode mode, bool update_running) const {
    return batch_norm(x, gamma->tensor, beta->tensor, *state, mode, update_running);
  }
};

// Uniform bound sqrt(6/fan_in): variance 2/fan_in ahead of a ReLU.
inline constexpr double kReluGain = 2.449489742783178;

}  // namespace ganmask
