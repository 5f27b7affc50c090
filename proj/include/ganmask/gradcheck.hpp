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
// Central-difference gradient verification for double-precision graphs.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ganmask/tensor.hpp"

namespace ganmask {

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every entry; otherwise a seeded random subset per input.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 0;
  // Entries whose gradient is tiny relative to the largest one over all
  // inputs are compared against floor_ratio * max|grad| instead of themselves.
  double floor_ratio = 1e-3;
  double abs_floor = 1e-10;
  // Kinked ops are probed at +-max(eps, kink_radius); an entry whose probe
  // changes any activation pattern is skipped.
  double kink_radius = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_location;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool finite = true;
  std::string failure;

  bool passed(double tolerance) const { return finite && failure.empty() && max_rel_error <= tolerance; }
};

// `f` rebuilds the scalar loss from the current values of `inputs` on every
// call. Analytic gradients come from one backward pass.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> inputs,
                                  const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor<double> loss = f();
  if (!loss.all_finite()) {
    report.finite = false;
    report.failure = "non-finite loss at the base point";
    return report;
  }
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    analytic.emplace_back(in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                        : std::vector<double>(in.numel(), 0.0));
    in.zero_grad();
  }

  auto eval = [&](std::uint64_t* pattern) {
    NoGradGuard guard;
    KinkPatternScope scope;
    const double v = f().item();
    if (pattern) *pattern = scope.pattern();
    return v;
  };

  std::uint64_t base_pattern = 0;
  eval(&base_pattern);
  const double probe = std::max(opts.eps, opts.kink_radius);

  double max_abs = 0;
  for (const auto& a : analytic)
    for (double g : a) max_abs = std::max(max_abs, std::abs(g));
  const double floor = std::max(opts.abs_floor, opts.floor_ratio * max_abs);

  std::mt19937_64 rng(opts.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& values = inputs[k].values();
    std::vector<std::size_t> entries(values.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.max_entries_per_input && entries.size() > opts.max_entries_per_input) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries_per_input);
    }

    for (std::size_t idx : entries) {
      const double x0 = values[idx];
      std::uint64_t pat_plus = 0, pat_minus = 0;
      values[idx] = x0 + opts.eps;
      const double fp = eval(&pat_plus);
      values[idx] = x0 - opts.eps;
      const double fm = eval(&pat_minus);
      bool crosses_kink = pat_plus != base_pattern || pat_minus != base_pattern;
      if (probe > opts.eps && !crosses_kink) {
        std::uint64_t wide = 0;
        values[idx] = x0 + probe;
        eval(&wide);
        crosses_kink = wide != base_pattern;
        values[idx] = x0 - probe;
        eval(&wide);
        crosses_kink = crosses_kink || wide != base_pattern;
      }
      values[idx] = x0;
      const double a = analytic[k][idx];
      const std::string where = detail::concat("input ", k, " entry ", idx);
      if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
        report.finite = false;
        report.failure = "non-finite value at " + where;
        return report;
      }
      if (crosses_kink) {
        ++report.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2 * opts.eps);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_location = where;
      }
    }
  }
  if (report.checked == 0) report.failure = "no entries checked";
  return report;
}

}  // namespace ganmask
