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
#include <cstdio>
#include <random>

#include "ganmask/checkpoint.hpp"
#include "ganmask/gradcheck.hpp"
#include "ganmask/ops.hpp"
#include "ganmask/optim.hpp"

namespace ganmask {
namespace {

using TD = Tensor<double>;

TD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  TD t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

TD empty_bias() { return TD(Shape{0}); }

// Direct-summation convolution, independent of im2col.
std::vector<double> naive_conv(const TD& x, const TD& w, const TD& b, std::size_t stride,
                               std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * co * oh * ow, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = b.numel() ? b[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t bb = 0; bb < kw; ++bb) {
                const long iy = long(y * stride + a) - long(pad), ix = long(xx * stride + bb) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                s += x[((i * ci + c) * h + iy) * wd + ix] * w[((o * ci + c) * kh + a) * kw + bb];
              }
          out[((i * co + o) * oh + y) * ow + xx] = s;
        }
  return out;
}

TEST(Conv2d, OnesTimesTwo) {
  TD x(Shape{1, 1, 3, 3}, 1.0);
  TD w(Shape{1, 1, 1, 1}, 2.0);
  TD b(Shape{1}, 0.0);
  auto y = conv2d(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (double v : y.values()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, IdentityKernelSum) {
  TD x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  TD w(Shape{1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  auto y = conv2d(x, w, TD(Shape{1}, 0.0));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 5.0);
}

TEST(Conv2d, StridedShape) {
  TD x(Shape{2, 8, 28, 28}, 0.5);
  TD w(Shape{16, 8, 3, 3}, 0.1);
  auto y = conv2d(x, w, TD(Shape{16}, 0.0), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 16, 14, 14}));
}

TEST(Conv2d, MatchesDirectSummation) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 7, 6}, rng);
  auto w = random_tensor({4, 3, 3, 2}, rng);
  auto b = random_tensor({4}, rng);
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u}) {
      auto y = conv2d(x, w, b, stride, pad);
      auto ref = naive_conv(x, w, b, stride, pad);
      ASSERT_EQ(y.numel(), ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
}

TEST(Conv2d, ShapeErrorsNameDims) {
  TD x(Shape{1, 3, 5, 5});
  TD w(Shape{2, 4, 3, 3});
  try {
    conv2d(x, w, empty_bias());
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
  EXPECT_THROW(conv2d(TD(Shape{1, 1, 2, 2}), TD(Shape{1, 1, 5, 5}), empty_bias()), DimensionError);
  EXPECT_THROW(conv2d(TD(Shape{1, 1, 4, 4}), TD(Shape{1, 1, 3, 3}), empty_bias(), 0), ContractError);
}

TEST(ConvTranspose2d, Shape) {
  TD x(Shape{1, 1, 14, 14}, 1.0);
  TD w(Shape{1, 1, 2, 2}, 1.0);
  EXPECT_EQ(conv_transpose2d(x, w, TD(Shape{1}, 0.0), 2, 0).shape(), (Shape{1, 1, 28, 28}));
}

TEST(ConvTranspose2d, ScatterOracle) {
  TD x(Shape{1, 1, 1, 1}, 3.0);
  TD w(Shape{1, 1, 2, 2}, 1.0);
  auto y = conv_transpose2d(x, w, TD(Shape{1}, 0.0), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 3.0);
}

// <conv2d(g, W), x> == <g, conv_transpose2d(x, W)>, and the input gradient of
// conv_transpose2d is exactly conv2d of the upstream gradient.
TEST(ConvTranspose2d, AdjointOfConv) {
  std::mt19937_64 rng(11);
  for (std::size_t stride : {1u, 2u}) {
    auto x = random_tensor({2, 3, 5, 4}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    x.set_requires_grad(true);
    auto y = conv_transpose2d(x, w, empty_bias(), stride, 1);
    auto g = random_tensor(y.shape(), rng);
    auto loss = sum(mul(y, g));
    backward(loss);
    auto ref = conv2d(g, w, empty_bias(), stride, 1);
    ASSERT_EQ(ref.shape(), x.shape());
    for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(x.grad()[i], ref[i], 1e-10);
  }
}

TEST(ConvTranspose2d, GradCheck) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 2, 3, 3}, rng);
  auto w = random_tensor({2, 3, 2, 2}, rng);
  auto b = random_tensor({3}, rng);
  auto probe = random_tensor({2, 3, 6, 6}, rng);
  auto rep = grad_check([&] { return sum(mul(conv_transpose2d(x, w, b, 2, 0), probe)); }, {x, w, b});
  EXPECT_LE(rep.max_rel_error, 1e-5) << rep.worst_location;
}

TEST(BatchNorm, NormalizesBatchStatistics) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(5.0, 2.0);
  TD x(Shape{4, 2, 5, 5});
  for (auto& v : x.values()) v = nd(rng);
  BatchNormState<double> st(2);
  auto y = batch_norm(x, TD(Shape{2}, 1.0), TD(Shape{2}, 0.0), st, NormMode::kTrain);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, sq = 0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 25; ++j) m += y[(i * 2 + c) * 25 + j];
    m /= 100;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 25; ++j) sq += std::pow(y[(i * 2 + c) * 25 + j] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(sq / 100), 1.0, 1e-4);  // eps=1e-5 inside the sqrt
  }
}

TEST(BatchNorm, AffineParameters) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({3, 1, 4, 4}, rng);
  BatchNormState<double> st(1);
  auto y = batch_norm(x, TD(Shape{1}, 3.0), TD(Shape{1}, 1.0), st, NormMode::kTrain);
  double m = 0, sq = 0;
  for (double v : y.values()) m += v;
  m /= y.numel();
  for (double v : y.values()) sq += (v - m) * (v - m);
  EXPECT_NEAR(m, 1.0, 1e-6);
  EXPECT_NEAR(std::sqrt(sq / y.numel()), 3.0, 1e-3);
}

TEST(BatchNorm, DegenerateBatchRejected) {
  BatchNormState<double> st(2);
  TD x(Shape{1, 2, 1, 1}, 1.0);
  EXPECT_THROW(batch_norm(x, TD(Shape{2}, 1.0), TD(Shape{2}, 0.0), st, NormMode::kTrain),
               ContractError);
  EXPECT_NO_THROW(batch_norm(x, TD(Shape{2}, 1.0), TD(Shape{2}, 0.0), st, NormMode::kEval));
}

TEST(BatchNorm, RunningStatsUpdate) {
  TD x(Shape{2, 1, 1, 2}, std::vector<double>{1, 3, 5, 7});
  BatchNormState<double> st(1);
  batch_norm(x, TD(Shape{1}, 1.0), TD(Shape{1}, 0.0), st, NormMode::kTrain);
  EXPECT_NEAR(st.running_mean[0], 0.1 * 4, 1e-12);
  // unbiased variance of {1,3,5,7} is 20/3
  EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 20.0 / 3.0, 1e-12);
  BatchNormState<double> frozen(1);
  batch_norm(x, TD(Shape{1}, 1.0), TD(Shape{1}, 0.0), frozen, NormMode::kTrain, false);
  EXPECT_EQ(frozen.running_mean[0], 0.0);
}

TEST(BatchNorm, EvalModeComposesAsAffine) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({2, 3, 2, 2}, rng);
  BatchNormState<double> st(3);
  st.running_mean = {0.5, -1.0, 2.0};
  st.running_var = {2.0, 0.5, 1.5};
  TD g(Shape{3}, std::vector<double>{1.5, -0.7, 2.0});
  TD b(Shape{3}, std::vector<double>{0.1, 0.2, -0.3});
  auto twice = batch_norm(batch_norm(x, g, b, st, NormMode::kEval), g, b, st, NormMode::kEval);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double s = g[c] / std::sqrt(st.running_var[c] + st.eps);
      const double t = b[c] - st.running_mean[c] * s;
      for (std::size_t j = 0; j < 4; ++j) {
        const std::size_t idx = (i * 3 + c) * 4 + j;
        EXPECT_NEAR(twice[idx], s * (s * x[idx] + t) + t, 1e-12);
      }
    }
}

TEST(BatchNorm, GradCheckTrainAndEval) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({2, 4, 5, 5}, rng);
  auto g = random_tensor({4}, rng, 0.5, 1.5);
  auto b = random_tensor({4}, rng);
  auto probe = random_tensor({2, 4, 5, 5}, rng);
  BatchNormState<double> st(4);
  auto rep = grad_check(
      [&] { return sum(mul(batch_norm(x, g, b, st, NormMode::kTrain, false), probe)); }, {x, g, b});
  EXPECT_LE(rep.max_rel_error, 1e-5) << rep.worst_location;
  auto rep_eval = grad_check(
      [&] { return sum(mul(batch_norm(x, g, b, st, NormMode::kEval), probe)); }, {x, g, b});
  EXPECT_LE(rep_eval.max_rel_error, 1e-5) << rep_eval.worst_location;
}

TEST(Activations, Values) {
  TD x(Shape{3}, std::vector<double>{-2, 0, 3});
  auto lr = leaky_relu(x, 0.2);
  EXPECT_DOUBLE_EQ(lr[0], -0.4);
  EXPECT_DOUBLE_EQ(lr[2], 3.0);
  EXPECT_DOUBLE_EQ(relu(x)[0], 0.0);
  EXPECT_DOUBLE_EQ(sigmoid(TD::scalar(0.0))[0], 0.5);
  auto s = sigmoid(TD(Shape{2}, std::vector<double>{-40, 40}));
  EXPECT_GT(s[0], 0.0);
  EXPECT_LT(s[1], 1.0 + 1e-15);
}

TEST(Activations, GradCheckAwayFromKinks) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({30}, rng, -3, 3);
    for (auto& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.5;
    auto probe = random_tensor({30}, rng);
    for (int kind = 0; kind < 3; ++kind) {
      auto rep = grad_check(
          [&] {
            TD y = kind == 0 ? leaky_relu(x, 0.2) : (kind == 1 ? relu(x) : sigmoid(x));
            return sum(mul(y, probe));
          },
          {x});
      EXPECT_LE(rep.max_rel_error, 1e-6) << "kind " << kind << " seed " << seed;
    }
  }
}

TEST(Backward, LinearCase) {
  TD w(Shape{3}, std::vector<double>{0.5, -1, 2}, true);
  TD x(Shape{3}, std::vector<double>{1, 2, 3});
  auto loss = sum(mul(w, x));
  backward(loss);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(w.grad()[i], x[i]);
}

TEST(Backward, SecondCallRequiresNewForward) {
  TD w(Shape{2}, 1.0, true);
  auto loss = sum(mul(w, w));
  backward(loss);
  EXPECT_THROW(backward(loss), ContractError);
  auto again = sum(mul(w, w));
  EXPECT_NO_THROW(backward(again));
}

TEST(Backward, NonScalarRejected) {
  TD w(Shape{2}, 1.0, true);
  auto y = mul(w, w);
  EXPECT_THROW(backward(y), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  TD x(Shape{1}, std::vector<double>{3.0}, true);
  auto y = mul(x, x);          // x^2
  auto loss = sum(add(y, y));  // 2x^2
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  TD w(Shape{2}, 1.0, true);
  NoGradGuard guard;
  auto y = sum(mul(w, w));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Sgd, PlainStep) {
  Parameter<double> p("p", TD(Shape{1}, 1.0));
  p.tensor.grad_buffer()[0] = 1.0;
  sgd_step<double>({&p}, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p.tensor[0], 0.9);
  EXPECT_FALSE(p.tensor.has_grad());
}

TEST(Sgd, MomentumTwoSteps) {
  Parameter<double> p("p", TD(Shape{1}, 1.0));
  for (int k = 0; k < 2; ++k) {
    p.tensor.grad_buffer()[0] = 1.0;
    sgd_step<double>({&p}, 0.1, 0.9, 0.0);
    EXPECT_NEAR(p.tensor[0], k == 0 ? 0.9 : 0.71, 1e-15);
  }
}

TEST(Sgd, WeightDecayOnly) {
  Parameter<double> p("p", TD(Shape{1}, 10.0));
  p.tensor.grad_buffer()[0] = 0.0;
  sgd_step<double>({&p}, 1.0, 0.0, 0.0001);
  EXPECT_NEAR(p.tensor[0], 9.999, 1e-12);
}

TEST(Sgd, MissingGradIsContractError) {
  Parameter<double> p("p", TD(Shape{1}, 1.0));
  EXPECT_THROW(sgd_step<double>({&p}, 0.1, 0.9, 0.0), ContractError);
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(0);
  auto x = random_tensor({10}, rng);
  auto rep = grad_check([&] { return sum(mul(x, x)); }, {x});
  EXPECT_LE(rep.max_rel_error, 1e-8);
  EXPECT_EQ(rep.checked, 10u);
}

TEST(GradCheck, CompositeConvBnLeaky) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 2, 6, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto g = random_tensor({3}, rng, 0.5, 1.5);
  auto be = random_tensor({3}, rng);
  BatchNormState<double> st(3);
  auto rep = grad_check(
      [&] {
        auto y = leaky_relu(batch_norm(conv2d(x, w, b, 1, 1), g, be, st, NormMode::kTrain, false), 0.2);
        return sum(mul(y, y));
      },
      {x, w, b, g, be});
  EXPECT_LE(rep.max_rel_error, 1e-5) << rep.worst_location;
}

// Square op whose backward is 10% too large.
TD faulty_square(const TD& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return detail::make_result<double>(x.shape(), std::move(out), {x}, "faulty", [](detail::Node<double>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.1 * 2 * self.inputs[0]->data[i] * self.grad[i];
  });
}

TEST(GradCheck, DetectsCorruptedGradient) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({6}, rng);
  auto rep = grad_check([&] { return sum(faulty_square(x)); }, {x});
  EXPECT_GE(rep.max_rel_error, 0.05);
  EXPECT_FALSE(rep.passed(1e-5));
}

TEST(GradCheck, ReportsNonFinite) {
  TD x(Shape{2}, std::vector<double>{1.0, 0.0});
  auto rep = grad_check([&] { return sum(scale(x, std::numeric_limits<double>::infinity())); }, {x});
  EXPECT_FALSE(rep.finite);
  EXPECT_FALSE(rep.failure.empty());
}

TEST(GradCheck, SkipsStencilsCrossingKinks) {
  TD x(Shape{2}, std::vector<double>{1e-6, 0.7});
  auto rep = grad_check([&] { return sum(relu(x)); }, {x});
  EXPECT_EQ(rep.skipped, 1u);
  EXPECT_EQ(rep.checked, 1u);
  EXPECT_LE(rep.max_rel_error, 1e-8);
}

TEST(Ops, LinearAndLossesGradCheck) {
  std::mt19937_64 rng(12);
  auto x = random_tensor({4, 5}, rng);
  auto w = random_tensor({3, 5}, rng);
  auto b = random_tensor({3}, rng);
  std::vector<std::size_t> labels{0, 2, 1, 2};
  std::vector<double> tgt(12);
  for (auto& t : tgt) t = std::uniform_real_distribution<double>(0, 1)(rng);
  auto rep = grad_check(
      [&] {
        auto z = linear(x, w, b);
        return add(add(softmax_cross_entropy(z, labels), bce_with_logits(z, tgt)),
                   smooth_l1(z, tgt, 1.0 / 9.0));
      },
      {x, w, b});
  EXPECT_LE(rep.max_rel_error, 1e-5) << rep.worst_location;
}

TEST(Ops, StructuralOpsGradCheck) {
  std::mt19937_64 rng(13);
  auto x = random_tensor({3, 2, 2, 2}, rng);
  auto m = random_tensor({3, 1, 2, 2}, rng, 0.1, 0.9);
  auto rep = grad_check(
      [&] {
        auto up = upsample_nearest2x(x);
        auto sel = select_channel(up, {1, 0, 1});
        auto rows = index_rows(flatten(mul_channel_broadcast(m, x)), {2, 0});
        auto cat = concat_cols(std::vector<TD>{flatten(sel), flatten(x)});
        return add(sum(mul(cat, cat)), sum(mul(rows, rows)));
      },
      {x, m});
  EXPECT_LE(rep.max_rel_error, 1e-5) << rep.worst_location;
}

TEST(Ops, SoftmaxCrossEntropyOfConfidentLogits) {
  TD z(Shape{1, 4}, std::vector<double>{10, 0, 0, 0});
  const double expected = std::log(1 + 3 * std::exp(-10.0));
  EXPECT_NEAR(softmax_cross_entropy(z, {0})[0], expected, 1e-15);
  EXPECT_LT(std::abs(expected - 1.362e-4), 1e-6);
}

TEST(Ops, ForwardIsDeterministic) {
  std::mt19937_64 rng(21);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto a = conv2d(x, w, empty_bias(), 2, 1);
  auto b = conv2d(x, w, empty_bias(), 2, 1);
  EXPECT_EQ(a.values(), b.values());
}

TEST(Checkpoint, BitExactRoundTrip) {
  std::mt19937_64 rng(31);
  std::vector<NamedTensor<float>> entries;
  for (int k = 0; k < 3; ++k) {
    NamedTensor<float> e{"t" + std::to_string(k), Shape{2, std::size_t(k + 1), 3}, {}};
    e.values.resize(numel_of(e.shape));
    for (auto& v : e.values) v = std::uniform_real_distribution<float>(-5, 5)(rng);
    entries.push_back(e);
  }
  entries[0].values[0] = -0.0f;
  entries[0].values[1] = std::numeric_limits<float>::denorm_min();
  const std::string path = ::testing::TempDir() + "/rt.ckpt";
  save_checkpoint(path, entries);
  auto back = load_checkpoint<float>(path);
  ASSERT_EQ(back.size(), entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    EXPECT_EQ(back[k].name, entries[k].name);
    EXPECT_EQ(back[k].shape, entries[k].shape);
    ASSERT_EQ(back[k].values.size(), entries[k].values.size());
    EXPECT_EQ(std::memcmp(back[k].values.data(), entries[k].values.data(),
                          entries[k].values.size() * sizeof(float)),
              0);
  }
  EXPECT_THROW(load_checkpoint<double>(path), ContractError);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace ganmask
