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
#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "ganmask/tensor.hpp"

namespace ganmask {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> momentum_buffer;

  Parameter() = default;
  Parameter(std::string name_, Tensor<T> t)
      : name(std::move(name_)), tensor(std::move(t)), momentum_buffer(tensor.numel(), T(0)) {
    tensor.set_requires_grad(true);
  }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

template <typename T>
void set_trainable(const ParamRefs<T>& params, bool on) {
  for (auto* p : params) {
    p->tensor.set_requires_grad(on);
    if (!on) p->tensor.zero_grad();
  }
}

template <typename T>
void zero_grads(const ParamRefs<T>& params) {
  for (auto* p : params) p->tensor.zero_grad();
}

// buffer <- momentum*buffer + grad + weight_decay*param; param <- param - lr*buffer.
// Frozen parameters (requires_grad off) are skipped. A trainable parameter
// without a gradient is an error, or left untouched under MissingGrad::kSkip.
enum class MissingGrad { kError, kSkip };

template <typename T>
void sgd_step(const ParamRefs<T>& params, double lr, double momentum, double weight_decay,
              MissingGrad missing = MissingGrad::kError) {
  for (auto* p : params) {
    if (!p->tensor.requires_grad() || missing == MissingGrad::kSkip) continue;
    GANMASK_REQUIRE(p->tensor.has_grad(), ContractError, "sgd_step: parameter '", p->name,
                    "' has no gradient");
  }
  const T lr_t = static_cast<T>(lr), mom = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
  for (auto* p : params) {
    if (!p->tensor.requires_grad() || !p->tensor.has_grad()) continue;
    auto& w = p->tensor.values();
    auto g = p->tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      p->momentum_buffer[i] = mom * p->momentum_buffer[i] + g[i] + wd * w[i];
      w[i] -= lr_t * p->momentum_buffer[i];
    }
    p->tensor.zero_grad();
  }
}

// Centered uniform init with bound gain*sqrt(1/fan_in).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, double gain, std::mt19937_64& rng) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
double l1_distance(const ParamRefs<T>& params, const std::vector<std::vector<T>>& snapshot) {
  double total = 0;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < snapshot[k].size(); ++i)
      total += std::abs(static_cast<double>(params[k]->tensor[i]) - static_cast<double>(snapshot[k][i]));
  return total;
}

template <typename T>
std::vector<std::vector<T>> snapshot_values(const ParamRefs<T>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (auto* p : params) out.push_back(p->tensor.values());
  return out;
}

}  // namespace ganmask
