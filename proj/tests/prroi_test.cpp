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

#include "ganmask/gradcheck.hpp"
#include "ganmask/ops.hpp"
#include "ganmask/prroi.hpp"

namespace ganmask {
namespace {

using TD = Tensor<double>;

// Independent interpolant: samples at integer points, edge-clamped.
double interp(const TD& f, double x, double y) {
  const long h = long(f.dim(f.ndim() - 2)), w = long(f.dim(f.ndim() - 1));
  x = std::clamp(x, 0.0, double(w - 1));
  y = std::clamp(y, 0.0, double(h - 1));
  const long j0 = std::min(long(std::floor(x)), std::max(0L, w - 2));
  const long i0 = std::min(long(std::floor(y)), std::max(0L, h - 2));
  const long j1 = std::min(j0 + 1, w - 1), i1 = std::min(i0 + 1, h - 1);
  const double u = x - j0, v = y - i0;
  auto at = [&](long i, long j) { return f[i * w + j]; };
  return (1 - u) * (1 - v) * at(i0, j0) + u * (1 - v) * at(i0, j1) + (1 - u) * v * at(i1, j0) +
         u * v * at(i1, j1);
}

double midpoint_quadrature(const TD& f, double a, double b, double c, double d, int n) {
  double s = 0;
  const double dx = (b - a) / n, dy = (d - c) / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += interp(f, a + (j + 0.5) * dx, c + (i + 0.5) * dy);
  return s * dx * dy;
}

TD random_map(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  TD t(Shape{h, w});
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

TEST(BilinearIntegral, ConstantMap) {
  TD f(Shape{5, 6}, 7.0);
  EXPECT_NEAR(bilinear_integral(f, 0.3, 5.9, 1.25, 4.0), 7.0 * 5.6 * 2.75, 1e-10);
  EXPECT_NEAR(bilinear_integral(f, 0.0, 6.0, 0.0, 5.0), 7.0 * 30, 1e-10);
}

TEST(BilinearIntegral, LinearRamp) {
  TD f(Shape{2, 2}, std::vector<double>{0, 1, 0, 1});
  EXPECT_NEAR(bilinear_integral(f, 0, 1, 0, 1), 0.5, 1e-12);
}

TEST(BilinearIntegral, DegenerateRectangleRejected) {
  TD f(Shape{3, 3}, 1.0);
  EXPECT_THROW(bilinear_integral(f, 1.0, 1.0, 0.0, 1.0), ContractError);
  EXPECT_THROW(bilinear_integral(f, 0.0, 1.0, 2.0, 1.5), ContractError);
}

TEST(BilinearIntegral, MatchesDenseQuadrature) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 6);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_map(6, 6, rng);
    double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    if (a > b) std::swap(a, b);
    if (c > d) std::swap(c, d);
    if (b - a < 0.05 || d - c < 0.05) continue;
    const double exact = bilinear_integral(f, a, b, c, d);
    const double quad = midpoint_quadrature(f, a, b, c, d, 200);
    EXPECT_LE(std::abs(exact - quad), 1e-3 * std::max(1e-3, std::abs(quad))) << trial;
  }
}

TEST(PrRoIPool, ConstantMapGivesConstantBins) {
  TD f(Shape{2, 8, 8}, 3.5);
  auto r = prroi_pool(f, Box{0.7, 1.3, 6.2, 7.9}, 5);
  ASSERT_EQ(r.data.shape(), (Shape{2, 5, 5}));
  for (double v : r.data.values()) EXPECT_NEAR(v, 3.5, 1e-12);
}

TEST(PrRoIPool, UnitCellAveragesCorners) {
  TD f(Shape{1, 3, 3}, std::vector<double>{0, 0, 0, 0, 1, 2, 0, 3, 4});
  auto r = prroi_pool(f, Box{1, 1, 2, 2}, 1);
  EXPECT_NEAR(r.data[0], (1 + 2 + 3 + 4) / 4.0, 1e-12);
}

TEST(PrRoIPool, OutputShape28) {
  TD f(Shape{4, 10, 10}, 1.0);
  EXPECT_EQ(prroi_pool(f, Box{1, 1, 3, 4}, 28).data.shape(), (Shape{4, 28, 28}));
}

TEST(PrRoIPool, Linearity) {
  std::mt19937_64 rng(2);
  TD f(Shape{2, 7, 7}), g(Shape{2, 7, 7});
  std::uniform_real_distribution<double> u(-2, 2);
  for (auto& v : f.values()) v = u(rng);
  for (auto& v : g.values()) v = u(rng);
  const double alpha = 1.7, beta = -0.4;
  TD comb(Shape{2, 7, 7});
  for (std::size_t i = 0; i < comb.numel(); ++i) comb[i] = alpha * f[i] + beta * g[i];
  Box box{0.4, 1.1, 5.3, 6.6};
  auto pf = prroi_pool(f, box, 6), pg = prroi_pool(g, box, 6), pc = prroi_pool(comb, box, 6);
  for (std::size_t i = 0; i < pc.data.numel(); ++i)
    EXPECT_NEAR(pc.data[i], alpha * pf.data[i] + beta * pg.data[i], 1e-12);
}

TEST(PrRoIPool, BinsMatchQuadratureAndTileTheBox) {
  std::mt19937_64 rng(23);
  auto f = random_map(6, 6, rng);
  TD f3(Shape{1, 6, 6}, f.values());
  Box box{0.3, 0.9, 5.1, 4.4};
  const std::size_t s = 4;
  auto r = prroi_pool(f3, box, s);
  const double bw = box.width() / s, bh = box.height() / s;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      const double q = midpoint_quadrature(f, box.x1 + j * bw, box.x1 + (j + 1) * bw,
                                           box.y1 + i * bh, box.y1 + (i + 1) * bh, 200) /
                       (bw * bh);
      EXPECT_NEAR(r.data[i * s + j], q, 1e-3 * std::max(1e-2, std::abs(q)));
    }
}

TEST(PrRoIPool, ClampsOutOfRangeBoxes) {
  TD f(Shape{1, 4, 4}, 2.0);
  auto r = prroi_pool(f, Box{-3, -1, 9, 2}, 2);
  for (double v : r.data.values()) EXPECT_NEAR(v, 2.0, 1e-12);
  auto cb = clamp_feature_box(Box{-3, 1, 9, 1.0000001}, 4, 4);
  EXPECT_FALSE(cb.free[0]);
  EXPECT_FALSE(cb.free[2]);
  EXPECT_GE(cb.box.height(), kMinRoiSide - 1e-15);
}

TEST(PrRoIPool, NestingStaysWithinRange) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  auto f = random_map(8, 8, rng);
  for (auto& v : f.values()) v = std::abs(v);
  TD f3(Shape{1, 8, 8}, f.values());
  Box outer{1.2, 0.5, 6.9, 7.3};
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i <= 400; ++i)
    for (int j = 0; j <= 400; ++j) {
      const double v = interp(f, outer.x1 + outer.width() * j / 400, outer.y1 + outer.height() * i / 400);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  for (int trial = 0; trial < 20; ++trial) {
    Box inner{outer.x1 + u(rng) * 2, outer.y1 + u(rng) * 2, outer.x2 - u(rng) * 2, outer.y2 - u(rng) * 2};
    auto r = prroi_pool(f3, inner, 3);
    for (double v : r.data.values()) {
      EXPECT_GE(v, lo - 1e-9);
      EXPECT_LE(v, hi + 1e-9);
    }
  }
}

TEST(PrRoIBackward, ConstantMapHasZeroBoxGradient) {
  TD f(Shape{3, 6, 6}, 1.25);
  TD up(Shape{3, 4, 4});
  std::mt19937_64 rng(3);
  for (auto& v : up.values()) v = std::normal_distribution<double>()(rng);
  auto g = prroi_backward(f, Box{0.5, 1.5, 4.2, 5.0}, 4, up);
  for (double v : g.box) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(PrRoIBackward, BoxGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    TD f(Shape{2, 8, 8});
    for (auto& v : f.values()) v = u(rng) * 2 - 1;
    Box box{0.5 + u(rng) * 2, 0.5 + u(rng) * 2, 4.5 + u(rng) * 3, 4.5 + u(rng) * 3};
    TD up(Shape{2, 5, 5});
    for (auto& v : up.values()) v = u(rng) * 2 - 1;
    auto g = prroi_backward(f, box, 5, up);
    auto objective = [&](const Box& b) {
      auto r = prroi_pool(f, b, 5);
      double s = 0;
      for (std::size_t i = 0; i < r.data.numel(); ++i) s += r.data[i] * up[i];
      return s;
    };
    const double eps = 1e-4;
    for (int k = 0; k < 4; ++k) {
      auto arr = box.as_array();
      arr[k] += eps;
      const double fp = objective({arr[0], arr[1], arr[2], arr[3]});
      arr[k] -= 2 * eps;
      const double fm = objective({arr[0], arr[1], arr[2], arr[3]});
      const double num = (fp - fm) / (2 * eps);
      EXPECT_LE(std::abs(num - g.box[k]) / std::max({std::abs(num), std::abs(g.box[k]), 1e-6}), 1e-4)
          << "seed " << seed << " coord " << k << " analytic " << g.box[k] << " numeric " << num;
    }
  }
}

TEST(PrRoIBackward, FeatureGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1, 1);
  TD f(Shape{1, 8, 8});
  for (auto& v : f.values()) v = u(rng);
  Box box{1.3, 0.7, 6.1, 5.2};
  TD up(Shape{1, 3, 3});
  for (auto& v : up.values()) v = u(rng);
  auto g = prroi_backward(f, box, 3, up);
  std::uniform_int_distribution<std::size_t> pick(0, 63);
  for (int t = 0; t < 5; ++t) {
    // entries inside the box support so the gradient is nonzero
    std::size_t idx = 8 * (1 + pick(rng) % 5) + 1 + pick(rng) % 6;
    const double x0 = f[idx], eps = 1e-5;
    auto obj = [&] {
      auto r = prroi_pool(f, box, 3);
      double s = 0;
      for (std::size_t i = 0; i < r.data.numel(); ++i) s += r.data[i] * up[i];
      return s;
    };
    f[idx] = x0 + eps;
    const double fp = obj();
    f[idx] = x0 - eps;
    const double fm = obj();
    f[idx] = x0;
    const double num = (fp - fm) / (2 * eps);
    EXPECT_LE(std::abs(num - g.features[idx]) / std::max(std::abs(num), 1e-8), 1e-5) << idx;
  }
}

TEST(PoolRois, BatchedOpGradCheck) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1, 1);
  TD l0(Shape{2, 2, 8, 8}), l1(Shape{2, 2, 4, 4});
  for (auto& v : l0.values()) v = u(rng);
  for (auto& v : l1.values()) v = u(rng);
  TD boxes(Shape{3, 4}, std::vector<double>{4.4, 6.2, 20.5, 25.1, 2.2, 3.3, 27.0, 30.1, 9.0, 1.0, 15.5, 12.0});
  std::vector<RoiRef> refs{{0, 0}, {1, 1}, {1, 0}};
  TD probe(Shape{3, 2, 4, 4});
  for (auto& v : probe.values()) v = u(rng);
  auto rep = grad_check(
      [&] { return sum(mul(pool_rois<double>({l0, l1}, {4.0, 8.0}, refs, boxes, 4), probe)); },
      {l0, l1, boxes}, GradCheckOptions{.eps = 1e-5});
  EXPECT_LE(rep.max_rel_error, 1e-5) << rep.worst_location;
}

TEST(PoolRois, ReportsFaultInjection) {
  TD l0(Shape{1, 1, 8, 8});
  std::mt19937_64 rng(1);
  for (auto& v : l0.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  TD boxes(Shape{1, 4}, std::vector<double>{1.5, 2.5, 6.5, 7.0});
  set_prroi_box_grad_fault(1.1);
  auto rep = grad_check([&] { return sum(pool_rois<double>({l0}, {1.0}, {{0, 0}}, boxes, 3)); }, {boxes});
  set_prroi_box_grad_fault(1.0);
  EXPECT_GE(rep.max_rel_error, 0.05);
}

}  // namespace
}  // namespace ganmask
