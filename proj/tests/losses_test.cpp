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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ganmask/discriminators.hpp"
#include "ganmask/gradcheck.hpp"
#include "ganmask/heads.hpp"
#include "ganmask/losses.hpp"

namespace ganmask {
namespace {

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{n}, std::move(v));
}

Tensor<double> rows(std::size_t n, std::size_t d, std::vector<double> v) { return Tensor<double>(Shape{n, d}, std::move(v)); }

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

TEST(BaselineLosses, ConfidentCorrectClass) {
  const Tensor<double> two(Shape{1, 2}, {10, 0});
  const double expected2 = std::log1p(std::exp(-10.0));
  EXPECT_NEAR(softmax_cross_entropy(two, {0}).item(), expected2, 1e-15);
  EXPECT_NEAR(expected2, 4.54e-5, 1e-7);
  // K + 1 = 4 classes: the three wrong logits each contribute e^-10.
  const Tensor<double> four(Shape{1, 4}, {0, 0, 10, 0});
  EXPECT_NEAR(softmax_cross_entropy(four, {2}).item(), std::log1p(3 * std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(softmax_cross_entropy(four, {2}).item(), 1.362e-4, 1e-7);
}

TEST(BaselineLosses, ZeroResidualAndConfidentMask) {
  const std::vector<double> targets{0.1, -0.2, 0.3, 0.05, 0, 0, 0.7, -0.7};
  const auto deltas = rows(2, 4, targets);
  std::vector<double> mask_t(2 * 28 * 28);
  Tensor<double> mask_logits(Shape{2, 1, 28, 28});
  for (std::size_t i = 0; i < mask_t.size(); ++i) {
    mask_t[i] = (i % 5 < 2) ? 1.0 : 0.0;
    mask_logits[i] = mask_t[i] > 0 ? 10 : -10;
  }
  const auto l = baseline_losses(Tensor<double>(Shape{2, 4}), {1, 3}, deltas, targets, mask_logits, mask_t);
  EXPECT_FALSE(l.no_positives);
  EXPECT_EQ(l.l_bbox.item(), 0.0);
  EXPECT_LE(l.l_mask.item(), 1e-4);
  EXPECT_NEAR(l.l_mask.item(), std::log1p(std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(l.l_cls.item(), std::log(4.0), 1e-15);
}

TEST(BaselineLosses, SmoothL1Closed) {
  // |d| = 0.05 < beta: 0.5 d^2 / beta; |d| = 1: |d| - beta / 2.
  const auto l = baseline_losses(Tensor<double>(Shape{1, 4}), {1}, rows(1, 4, {0.05, 1, 0, 0}),
                                 std::vector<double>{0, 0, 0, 0}, Tensor<double>(Shape{1, 1, 28, 28}),
                                 std::vector<double>(784, 0.0), 1.0 / 9.0);
  EXPECT_NEAR(l.l_bbox.item(), 0.5 * 0.0025 * 9 + (1 - 0.5 / 9), 1e-15);
  EXPECT_NEAR(l.l_mask.item(), std::log(2.0), 1e-12);
}

TEST(BaselineLosses, NoPositivesZeroesRegressionTerms) {
  const auto l = baseline_losses(Tensor<double>(Shape{3, 4}), {0, 0, 0}, Tensor<double>(Shape{0, 4}), {},
                                 Tensor<double>(Shape{0, 1, 28, 28}), {});
  EXPECT_TRUE(l.no_positives);
  EXPECT_EQ(l.l_bbox.item(), 0.0);
  EXPECT_EQ(l.l_mask.item(), 0.0);
}

TEST(AdvBoxGenerator, Examples) {
  EXPECT_NEAR(adv_box_generator_loss(vec({std::exp(-1.0), std::exp(-1.0)})).item(), 1.0, 1e-12);
  EXPECT_NEAR(adv_box_generator_loss(vec({0.5, 0.25})).item(), 1.5 * std::log(2.0), 1e-12);
  EXPECT_NEAR(adv_box_generator_loss(vec({0.5, 0.25})).item(), 1.0397, 1e-4);
  EXPECT_NEAR(adv_box_generator_loss(vec({1.0, 1.0})).item(), -std::log(1 - kLogEps), 1e-15);
  EXPECT_LT(adv_box_generator_loss(vec({1 - 1e-9})).item(), 1e-6);
  EXPECT_NEAR(adv_box_generator_loss(vec({0.0})).item(), -std::log(kLogEps), 1e-12);
  EXPECT_THROW(adv_box_generator_loss(Tensor<double>(Shape{0})), ContractError);
  EXPECT_THROW(adv_box_generator_loss(vec({1.2})), ContractError);
}

TEST(AdvBoxDiscriminator, Examples) {
  EXPECT_NEAR(adv_box_discriminator_loss(vec({0.5, 0.5}), vec({0.5, 0.5})).item(), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(adv_box_discriminator_loss(vec({0.9}), vec({0.1})).item(), -2 * std::log(0.9), 1e-12);
  EXPECT_NEAR(adv_box_discriminator_loss(vec({0.9}), vec({0.1})).item(), 0.2107, 1e-4);
  EXPECT_LT(adv_box_discriminator_loss(vec({1.0}), vec({0.0})).item(), 1e-6);
  EXPECT_THROW(adv_box_discriminator_loss(vec({0.5, 0.5}), vec({0.5})), ContractError);
}

TEST(AdvMask, L1Examples) {
  EXPECT_EQ(adv_mask_generator_loss(rows(1, 2, {1, 2}), rows(1, 2, {0, 0})).item(), 3.0);
  const auto a = random_tensor<double>(Shape{3, 50}, 1), b = random_tensor<double>(Shape{3, 50}, 2);
  double brute = 0;
  for (std::size_t i = 0; i < 150; ++i) brute += std::abs(a[i] - b[i]);
  EXPECT_NEAR(adv_mask_generator_loss(a, b).item(), brute / 3, 1e-12);
  EXPECT_EQ(adv_mask_generator_loss(a, a).item(), 0.0);
  EXPECT_THROW(adv_mask_generator_loss(a, rows(1, 2, {0, 0})), ContractError);
}

TEST(AdvMask, DiscriminatorNegation) {
  EXPECT_EQ(adv_mask_discriminator_loss(Tensor<double>::scalar(3)).item(), -3.0);
  EXPECT_EQ(adv_mask_discriminator_loss(Tensor<double>::scalar(0)).item(), 0.0);
  const auto a = random_tensor<double>(Shape{2, 40}, 3), b = random_tensor<double>(Shape{2, 40}, 4);
  const auto gm = adv_mask_generator_loss(a, b);
  EXPECT_EQ(gm.item() + adv_mask_discriminator_loss(gm).item(), 0.0);
}

TEST(AdvMask, IdenticalMasksGiveZeroThroughDiscriminator) {
  DiscriminatorConfig cfg;
  cfg.in_channels = 4;
  MaskDiscriminator<double> d(cfg);
  const auto roi = random_tensor<double>(Shape{2, 4, 28, 28}, 5);
  Tensor<double> gt(Shape{2, 1, 28, 28});
  for (std::size_t i = 0; i < gt.numel(); ++i) gt[i] = (i / 28) % 3 == 0 ? 1.0 : 0.0;
  const auto real = d.forward(prepare_mask_disc_input(gt, roi), NormMode::kEval);
  const auto fake = d.forward(prepare_mask_disc_input(gt.detach(), roi), NormMode::kEval);
  const auto gm = adv_mask_generator_loss(real.concat, fake.concat);
  EXPECT_EQ(gm.item(), 0.0);
  EXPECT_EQ(adv_mask_discriminator_loss(gm).item(), -0.0);
}

GeneratorTerms<double> all_terms(double v) {
  GeneratorTerms<double> t;
  t.l_cls = t.l_bbox = t.l_mask = t.l_adv_gb = t.l_adv_gm = Tensor<double>::scalar(v);
  return t;
}

TEST(TotalLoss, GeneratorModes) {
  EXPECT_EQ(total_generator_loss(all_terms(1), LossMode::kFull).item(), 5.0);
  auto t = all_terms(1);
  t.l_bbox = Tensor<double>::scalar(999);
  t.l_mask = Tensor<double>::scalar(999);
  EXPECT_EQ(total_generator_loss(t, LossMode::kAdversarialOnly).item(), 3.0);
  EXPECT_EQ(total_generator_loss(all_terms(1), LossMode::kBaselineOnly).item(), 3.0);
  GeneratorTerms<double> partial = all_terms(1);
  partial.l_adv_gm.reset();
  EXPECT_THROW(total_generator_loss(partial, LossMode::kFull), ContractError);
  EXPECT_EQ(total_generator_loss(partial, LossMode::kBaselineOnly).item(), 3.0);
  LossWeights w;
  w.adv_gm = 0.5;
  EXPECT_EQ(total_generator_loss(all_terms(2), LossMode::kFull, w).item(), 9.0);
}

TEST(TotalLoss, AdversarialOnlyExcludesRegressionGradients) {
  auto t = all_terms(1);
  Tensor<double> bbox = Tensor<double>::scalar(999, true), cls = Tensor<double>::scalar(0.3, true);
  t.l_bbox = bbox;
  t.l_cls = cls;
  auto total = total_generator_loss(t, LossMode::kAdversarialOnly);
  backward(total);
  EXPECT_FALSE(bbox.has_grad());
  ASSERT_TRUE(cls.has_grad());
  EXPECT_EQ(cls.grad()[0], 1.0);
}

TEST(TotalLoss, DiscriminatorSum) {
  EXPECT_NEAR(total_discriminator_loss<double>(Tensor<double>::scalar(0.5), Tensor<double>::scalar(-0.2)).item(), 0.3,
              1e-15);
  EXPECT_THROW(total_discriminator_loss<double>(Tensor<double>::scalar(0.5), std::nullopt), ContractError);
}

struct AdvFixture {
  GeneratorConfig gcfg;
  DiscriminatorConfig dcfg;
  std::unique_ptr<Generator<double>> gen;
  std::unique_ptr<BoxDiscriminator<double>> boxd;
  std::unique_ptr<MaskDiscriminator<double>> maskd;
  Tensor<double> images;
  std::vector<Box> props{{6, 8, 30, 33}, {20, 14, 50, 40}};
  std::vector<Box> gts{{7, 9, 31, 30}, {18, 15, 52, 42}};
  std::vector<RoiRef> refs{{0, 0}, {0, 1}};

  AdvFixture() {
    gcfg.box_fc = 16;
    gcfg.mask_width = 4;
    gcfg.mask_convs = 1;
    gen = std::make_unique<Generator<double>>(gcfg);
    dcfg.depth = 3;
    boxd = std::make_unique<BoxDiscriminator<double>>(dcfg);
    maskd = std::make_unique<MaskDiscriminator<double>>(dcfg);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (auto* p : gen->params())
      if (p->name.ends_with(".bias")) {
        for (auto& v : p->tensor.values()) v = u(rng);
      }
    images = random_tensor<double>(Shape{1, 3, 64, 64}, 8, 0, 1);
  }
};

TEST(AdversarialPath, BoxCoordinateGradientThroughGeneratorLoss) {
  AdvFixture f;
  const auto pyr = f.gen->backbone(f.images).detached();
  auto boxes = boxes_tensor<double>({{5.5, 7.25, 31.5, 30.75}, {19.1, 13.3, 49.9, 41.7}});
  auto loss = [&] {
    return adv_box_generator_loss(
        f.boxd->forward(prepare_box_disc_input(pyr.levels, pyr.strides, f.refs, boxes), NormMode::kEval));
  };
  const auto rep = grad_check(loss, {boxes}, GradCheckOptions{.eps = 1e-6, .kink_radius = 1e-5});
  EXPECT_TRUE(rep.passed(1e-4)) << rep.max_rel_error << " at " << rep.worst_location;
  EXPECT_GE(rep.checked, 6u);
  boxes.set_requires_grad(true);
  boxes.zero_grad();
  auto l = loss();
  backward(l);
  double norm = 0;
  for (double g : boxes.grad()) norm += std::abs(g);
  EXPECT_GT(norm, 0);
}

TEST(AdversarialPath, FullModeReachesBoxHeadDeltas) {
  AdvFixture f;
  const auto pyr = f.gen->backbone(f.images);
  const auto head = f.gen->box_head(pyr, f.refs, boxes_tensor<double>(f.props));
  auto deltas = head.deltas.detach();
  const auto det = pyr.detached();
  auto loss = [&] {
    GeneratorTerms<double> t = all_terms(0);
    const auto dec = decode_boxes(deltas, f.props);
    t.l_adv_gb = adv_box_generator_loss(f.boxd->forward(prepare_box_disc_input(det.levels, det.strides, f.refs, dec),
                                                        NormMode::kEval));
    return total_generator_loss(t, LossMode::kFull);
  };
  const auto rep = grad_check(loss, {deltas}, GradCheckOptions{.eps = 1e-6, .kink_radius = 1e-5});
  EXPECT_TRUE(rep.passed(1e-4)) << rep.max_rel_error << " at " << rep.worst_location;
}

TEST(AdversarialPath, DiscriminatorLossLeavesGeneratorUntouched) {
  AdvFixture f;
  PyramidFeatures<double> pyr;
  Tensor<double> fake_boxes, fake_masks;
  {
    NoGradGuard no_grad;
    pyr = f.gen->backbone(f.images);
    const auto head = f.gen->box_head(pyr, f.refs, boxes_tensor<double>(f.props));
    fake_boxes = decode_boxes(head.deltas, f.props);
    fake_masks = sigmoid(select_channel(f.gen->mask_head(pyr, f.refs, boxes_tensor<double>(f.gts)), {0, 2}));
  }
  const auto real_boxes = boxes_tensor<double>(f.gts);
  const auto roi = pool_rois(pyr.levels, pyr.strides, f.refs, real_boxes, 28);
  Tensor<double> gt_masks(Shape{2, 1, 28, 28});
  for (std::size_t i = 0; i < gt_masks.numel(); ++i) gt_masks[i] = (i % 28) > 8 ? 1.0 : 0.0;

  auto dloss = [&] {
    const auto real = f.boxd->forward(prepare_box_disc_input(pyr.levels, pyr.strides, f.refs, real_boxes),
                                      NormMode::kTrain, false);
    const auto fake = f.boxd->forward(prepare_box_disc_input(pyr.levels, pyr.strides, f.refs, fake_boxes),
                                      NormMode::kTrain, false);
    const auto l_db = adv_box_discriminator_loss(real, fake);
    const auto fr = f.maskd->forward(prepare_mask_disc_input(gt_masks, roi), NormMode::kTrain, false);
    const auto ff = f.maskd->forward(prepare_mask_disc_input(fake_masks, roi), NormMode::kTrain, false);
    const auto l_dm = adv_mask_discriminator_loss(adv_mask_generator_loss(fr.concat, ff.concat));
    return total_discriminator_loss<double>(l_db, l_dm);
  };
  auto total = dloss();
  backward(total);
  for (auto* p : f.gen->params()) EXPECT_FALSE(p->tensor.has_grad()) << p->name;
  std::size_t with_grad = 0;
  for (auto* p : f.boxd->params()) with_grad += p->tensor.has_grad();
  for (auto* p : f.maskd->params()) with_grad += p->tensor.has_grad();
  EXPECT_EQ(with_grad, f.boxd->params().size() + f.maskd->params().size());

  std::vector<Tensor<double>> inputs;
  for (auto* p : f.boxd->params()) inputs.push_back(p->tensor);
  for (auto* p : f.maskd->params()) inputs.push_back(p->tensor);
  const auto rep = grad_check(dloss, inputs, GradCheckOptions{.max_entries_per_input = 6, .seed = 5,
                                                               .kink_radius = 1e-5});
  EXPECT_TRUE(rep.passed(1e-4)) << rep.max_rel_error << " at " << rep.worst_location;
  EXPECT_GT(rep.checked, 40u);
}

}  // namespace
}  // namespace ganmask
