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
// Baseline detection losses, the adversarial box/mask terms, and the
// generator/discriminator totals.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ganmask/ops.hpp"

namespace ganmask {

inline constexpr double kLogEps = 1e-7;

enum class LossMode { kFull, kAdversarialOnly, kBaselineOnly };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::kFull: return "full";
    case LossMode::kAdversarialOnly: return "adversarial_only";
    case LossMode::kBaselineOnly: return "baseline_only";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "full") return LossMode::kFull;
  if (s == "adversarial_only") return LossMode::kAdversarialOnly;
  if (s == "baseline_only") return LossMode::kBaselineOnly;
  throw ConfigError("loss_mode: expected full, adversarial_only or baseline_only, got '" + s + "'");
}

// Logged per-step values.
struct LossBatch {
  std::size_t n = 0;
  double l_cls = 0, l_bbox = 0, l_mask = 0;
  double l_adv_gb = 0, l_adv_gm = 0, l_adv_db = 0, l_adv_dm = 0;
};

template <typename T>
struct BaselineLosses {
  Tensor<T> l_cls, l_bbox, l_mask;
  bool no_positives = false;
};

// class_logits [N,K+1] vs labels (0 = background); deltas of the positive rows
// [P,4] vs encoded targets; selected mask logits [P,1,M,M] vs binary targets.
template <typename T>
BaselineLosses<T> baseline_losses(const Tensor<T>& class_logits, const std::vector<std::size_t>& labels,
                                  const Tensor<T>& pos_deltas, const std::vector<T>& delta_targets,
                                  const Tensor<T>& pos_mask_logits, const std::vector<T>& mask_targets,
                                  T smooth_l1_beta = T(1.0 / 9.0)) {
  BaselineLosses<T> out;
  out.l_cls = softmax_cross_entropy(class_logits, labels);
  if (pos_deltas.numel() == 0) {
    out.l_bbox = Tensor<T>::scalar(0);
    out.l_mask = Tensor<T>::scalar(0);
    out.no_positives = true;
    return out;
  }
  out.l_bbox = smooth_l1(pos_deltas, delta_targets, smooth_l1_beta);
  out.l_mask = bce_with_logits(pos_mask_logits, mask_targets);
  return out;
}

namespace loss_detail {

template <typename T>
void require_scores(const Tensor<T>& s, const char* who) {
  GANMASK_REQUIRE(s.numel() > 0, ContractError, who, ": empty score list");
  for (std::size_t i = 0; i < s.numel(); ++i)
    GANMASK_REQUIRE(s[i] >= T(0) && s[i] <= T(1), ContractError, who, ": score ", s[i], " outside [0,1]");
}

template <typename T>
Tensor<T> safe_log(const Tensor<T>& x) {
  return log(clamp(x, static_cast<T>(kLogEps), static_cast<T>(1 - kLogEps)));
}

}  // namespace loss_detail

// mean_i -log(D_b(fake_i)), scores clamped to [eps, 1-eps].
template <typename T>
Tensor<T> adv_box_generator_loss(const Tensor<T>& scores_fake) {
  loss_detail::require_scores(scores_fake, "adv_box_generator_loss");
  return scale(mean(loss_detail::safe_log(scores_fake)), T(-1));
}

// mean_i -(log D_b(real_i) + log(1 - D_b(fake_i))).
template <typename T>
Tensor<T> adv_box_discriminator_loss(const Tensor<T>& scores_real, const Tensor<T>& scores_fake) {
  GANMASK_REQUIRE(scores_real.numel() == scores_fake.numel(), ContractError,
                  "adv_box_discriminator_loss: ", scores_real.numel(), " real vs ", scores_fake.numel(), " fake scores");
  loss_detail::require_scores(scores_real, "adv_box_discriminator_loss");
  loss_detail::require_scores(scores_fake, "adv_box_discriminator_loss");
  auto real_term = loss_detail::safe_log(scores_real);
  auto fake_term = loss_detail::safe_log(affine(scores_fake, T(-1), T(1)));
  return scale(mean(add(real_term, fake_term)), T(-1));
}

// (1/N) sum_i ||real_i - fake_i||_1 over [N,D] feature rows.
template <typename T>
Tensor<T> adv_mask_generator_loss(const Tensor<T>& feat_real, const Tensor<T>& feat_fake) {
  GANMASK_REQUIRE(feat_real.shape() == feat_fake.shape() && feat_real.ndim() == 2, ContractError,
                  "adv_mask_generator_loss: feature shapes ", shape_str(feat_real.shape()), " vs ",
                  shape_str(feat_fake.shape()));
  GANMASK_REQUIRE(feat_real.dim(0) > 0, ContractError, "adv_mask_generator_loss: empty batch");
  return scale(sum(abs(sub(feat_real, feat_fake))), T(1) / static_cast<T>(feat_real.dim(0)));
}

template <typename T>
Tensor<T> adv_mask_discriminator_loss(const Tensor<T>& l_adv_gm) {
  GANMASK_REQUIRE(l_adv_gm.numel() == 1 && std::isfinite(double(l_adv_gm.item())), ContractError,
                  "adv_mask_discriminator_loss: need a finite scalar");
  return scale(l_adv_gm, T(-1));
}

struct LossWeights {
  double cls = 1, bbox = 1, mask = 1, adv_gb = 1, adv_gm = 1, adv_db = 1, adv_dm = 1;
};

template <typename T>
struct GeneratorTerms {
  std::optional<Tensor<T>> l_cls, l_bbox, l_mask, l_adv_gb, l_adv_gm;
};

namespace loss_detail {

template <typename T>
void accumulate(std::optional<Tensor<T>>& total, const std::optional<Tensor<T>>& term, double w, const char* name) {
  GANMASK_REQUIRE(term.has_value(), ContractError, "total loss: missing term ", name);
  const Tensor<T> t = w == 1.0 ? *term : scale(*term, static_cast<T>(w));
  total = total ? add(*total, t) : t;
}

}  // namespace loss_detail

// full: cls + bbox + mask + adv_gb + adv_gm; adversarial_only: cls + adv_gb +
// adv_gm; baseline_only: cls + bbox + mask.
template <typename T>
Tensor<T> total_generator_loss(const GeneratorTerms<T>& terms, LossMode mode, const LossWeights& w = {}) {
  std::optional<Tensor<T>> total;
  loss_detail::accumulate(total, terms.l_cls, w.cls, "l_cls");
  if (mode != LossMode::kAdversarialOnly) {
    loss_detail::accumulate(total, terms.l_bbox, w.bbox, "l_bbox");
    loss_detail::accumulate(total, terms.l_mask, w.mask, "l_mask");
  }
  if (mode != LossMode::kBaselineOnly) {
    loss_detail::accumulate(total, terms.l_adv_gb, w.adv_gb, "l_adv_gb");
    loss_detail::accumulate(total, terms.l_adv_gm, w.adv_gm, "l_adv_gm");
  }
  return *total;
}

template <typename T>
Tensor<T> total_discriminator_loss(const std::optional<Tensor<T>>& l_adv_db, const std::optional<Tensor<T>>& l_adv_dm,
                                   const LossWeights& w = {}) {
  std::optional<Tensor<T>> total;
  loss_detail::accumulate(total, l_adv_db, w.adv_db, "l_adv_db");
  loss_detail::accumulate(total, l_adv_dm, w.adv_dm, "l_adv_dm");
  return *total;
}

}  // namespace ganmask
