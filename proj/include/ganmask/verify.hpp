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

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ganmask/discriminators.hpp"
#include "ganmask/gradcheck.hpp"
#include "ganmask/heads.hpp"
#include "ganmask/losses.hpp"
#include "ganmask/prroi.hpp"

namespace ganmask {

struct VerifyResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
  std::string detail;
};

struct VerifyCheck {
  std::string name;
  double tolerance;
  std::function<GradCheckReport()> run;
};

namespace verify_detail {

using TD = Tensor<double>;

inline TD uniform(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  TD t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline TD probe_like(const TD& t, std::mt19937_64& rng) { return uniform(t.shape(), rng); }

inline double probe_sum(const TD& t, const TD& probe) {
  double s = 0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * probe[i];
  return s;
}

inline void randomize_biases(ParamRefs<double> params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto* p : params)
    if (p->name.ends_with(".bias") || p->name.ends_with(".beta"))
      for (auto& v : p->tensor.values()) v = u(rng);
}

inline GradCheckOptions kinked(std::size_t entries, std::uint64_t seed, double eps = 1e-6) {
  return GradCheckOptions{.eps = eps, .max_entries_per_input = entries, .seed = seed, .kink_radius = 1e-5};
}

// Central differences of the pooled output contracted with `probe`, one box
// coordinate at a time, against prroi_backward.
inline GradCheckReport prroi_coordinate_check(std::uint64_t seeds) {
  GradCheckReport rep;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    const TD f = uniform({2, 8, 8}, rng);
    const Box box{0.5 + u(rng) * 2, 0.5 + u(rng) * 2, 4.5 + u(rng) * 3, 4.5 + u(rng) * 3};
    const TD up = uniform({2, 5, 5}, rng);
    const auto g = prroi_backward(f, box, 5, up);
    const double eps = 1e-4;
    for (int k = 0; k < 4; ++k) {
      auto hi = box.as_array(), lo = box.as_array();
      hi[k] += eps;
      lo[k] -= eps;
      const double num = (probe_sum(prroi_pool(f, Box{hi[0], hi[1], hi[2], hi[3]}, 5).data, up) -
                          probe_sum(prroi_pool(f, Box{lo[0], lo[1], lo[2], lo[3]}, 5).data, up)) /
                         (2 * eps);
      const double err = std::abs(num - g.box[k]) / std::max({std::abs(num), std::abs(g.box[k]), 1e-6});
      ++rep.checked;
      if (!std::isfinite(err)) rep.finite = false;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_location = "seed " + std::to_string(seed) + " coord " + std::to_string(k);
      }
    }
  }
  return rep;
}

// Independent bilinear interpolant over integer sample points, edge-clamped.
inline double interp(const TD& f, long h, long w, double x, double y) {
  x = std::clamp(x, 0.0, double(w - 1));
  y = std::clamp(y, 0.0, double(h - 1));
  const long j0 = std::min(long(std::floor(x)), std::max(0L, w - 2));
  const long i0 = std::min(long(std::floor(y)), std::max(0L, h - 2));
  const long j1 = std::min(j0 + 1, w - 1), i1 = std::min(i0 + 1, h - 1);
  const double u = x - double(j0), v = y - double(i0);
  const auto at = [&](long i, long j) { return f[std::size_t(i * w + j)]; };
  return (1 - u) * (1 - v) * at(i0, j0) + u * (1 - v) * at(i0, j1) + (1 - u) * v * at(i1, j0) + u * v * at(i1, j1);
}

inline double midpoint_average(const TD& f, long h, long w, double a, double b, double c, double d, int n) {
  double s = 0;
  const double dx = (b - a) / n, dy = (d - c) / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += interp(f, h, w, a + (j + 0.5) * dx, c + (i + 0.5) * dy);
  return s / (double(n) * double(n));
}

}  // namespace verify_detail

// Pooled bins against an n x n midpoint rule per bin over random maps and
// boxes; the error is relative to max(|oracle|, 1e-2 max|f|).
inline GradCheckReport prroi_quadrature_check(std::size_t pairs, int points = 200, std::uint64_t seed = 31) {
  using namespace verify_detail;
  GradCheckReport rep;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<long> side(4, 12);
  for (std::size_t k = 0; k < pairs; ++k) {
    const long h = side(rng), w = side(rng);
    const TD f = uniform({1, std::size_t(h), std::size_t(w)}, rng);
    double fmax = 0;
    for (double v : f.values()) fmax = std::max(fmax, std::abs(v));
    const double x1 = u(rng) * (w - 1.5), y1 = u(rng) * (h - 1.5);
    const Box box{x1, y1, x1 + 0.5 + u(rng) * (w - 1 - x1), y1 + 0.5 + u(rng) * (h - 1 - y1)};
    const std::size_t s = 2;
    const auto r = prroi_pool(f, box, s);
    const double bw = box.width() / double(s), bh = box.height() / double(s);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        const double q = midpoint_average(f, h, w, box.x1 + double(j) * bw, box.x1 + double(j + 1) * bw,
                                          box.y1 + double(i) * bh, box.y1 + double(i + 1) * bh, points);
        const double err = std::abs(r.data[i * s + j] - q) / std::max(std::abs(q), 1e-2 * fmax);
        ++rep.checked;
        if (!std::isfinite(err)) rep.finite = false;
        if (err > rep.max_rel_error) {
          rep.max_rel_error = err;
          rep.worst_location = "pair " + std::to_string(k) + " bin " + std::to_string(i * s + j);
        }
      }
  }
  return rep;
}

// Constant fields pool to the constant; linear ramps pool to the ramp at the
// bin centre. Reported as the largest absolute error.
inline GradCheckReport prroi_closed_form_check(std::size_t trials = 50, std::uint64_t seed = 32) {
  using namespace verify_detail;
  GradCheckReport rep;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t k = 0; k < trials; ++k) {
    const std::size_t h = 9, w = 11, s = 1 + k % 4;
    const double cst = u(rng) * 4 - 2, ax = u(rng) * 2 - 1, ay = u(rng) * 2 - 1, c0 = u(rng);
    TD flat(Shape{2, h, w});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        flat[i * w + j] = cst;
        flat[h * w + i * w + j] = ax * double(j) + ay * double(i) + c0;
      }
    const double x1 = u(rng) * 6, y1 = u(rng) * 5;
    const Box box{x1, y1, x1 + 0.3 + u(rng) * (w - 1 - x1 - 0.3), y1 + 0.3 + u(rng) * (h - 1 - y1 - 0.3)};
    const auto r = prroi_pool(flat, box, s);
    const double bw = box.width() / double(s), bh = box.height() / double(s);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        const double cx = box.x1 + (double(j) + 0.5) * bw, cy = box.y1 + (double(i) + 0.5) * bh;
        const double e1 = std::abs(r.data[i * s + j] - cst);
        const double e2 = std::abs(r.data[s * s + i * s + j] - (ax * cx + ay * cy + c0));
        rep.checked += 2;
        for (double e : {e1, e2})
          if (e > rep.max_rel_error) {
            rep.max_rel_error = e;
            rep.worst_location = "trial " + std::to_string(k);
          }
      }
  }
  return rep;
}

namespace verify_detail {

inline GeneratorConfig small_generator() {
  GeneratorConfig g;
  g.box_fc = 16;
  g.mask_width = 4;
  g.mask_convs = 1;
  return g;
}

inline DiscriminatorConfig small_discriminator(int depth) {
  DiscriminatorConfig d;
  d.depth = depth;
  d.in_channels = small_generator().channels;
  return d;
}

}  // namespace verify_detail

// Every differentiable op and the composed generator, discriminator and
// adversarial loss paths, in double precision.
inline std::vector<VerifyCheck> gradient_checks() {
  using namespace verify_detail;
  std::vector<VerifyCheck> checks;
  const auto add_check = [&](std::string name, double tol, std::function<GradCheckReport()> run) {
    checks.push_back({std::move(name), tol, std::move(run)});
  };

  add_check("op.conv2d", 1e-5, [] {
    std::mt19937_64 rng(1);
    auto x = uniform({2, 2, 6, 6}, rng), w = uniform({3, 2, 3, 3}, rng), b = uniform({3}, rng);
    auto p1 = uniform({2, 3, 6, 6}, rng), p2 = uniform({2, 3, 3, 3}, rng);
    return grad_check([&] { return add(sum(mul(conv2d(x, w, b, 1, 1), p1)), sum(mul(conv2d(x, w, b, 2, 1), p2))); },
                      {x, w, b});
  });
  add_check("op.conv_transpose2d", 1e-5, [] {
    std::mt19937_64 rng(2);
    auto x = uniform({2, 2, 3, 3}, rng), w = uniform({2, 3, 2, 2}, rng), b = uniform({3}, rng);
    auto p = uniform({2, 3, 6, 6}, rng);
    return grad_check([&] { return sum(mul(conv_transpose2d(x, w, b, 2, 0), p)); }, {x, w, b});
  });
  add_check("op.batch_norm.train", 1e-5, [] {
    std::mt19937_64 rng(3);
    auto x = uniform({2, 4, 5, 5}, rng), g = uniform({4}, rng, 0.5, 1.5), b = uniform({4}, rng);
    auto p = uniform({2, 4, 5, 5}, rng);
    BatchNormState<double> st(4);
    return grad_check([&] { return sum(mul(batch_norm(x, g, b, st, NormMode::kTrain, false), p)); }, {x, g, b});
  });
  add_check("op.batch_norm.eval", 1e-5, [] {
    std::mt19937_64 rng(4);
    auto x = uniform({2, 4, 5, 5}, rng), g = uniform({4}, rng, 0.5, 1.5), b = uniform({4}, rng);
    auto p = uniform({2, 4, 5, 5}, rng);
    BatchNormState<double> st(4);
    for (std::size_t c = 0; c < 4; ++c) {
      st.running_mean[c] = 0.1 * double(c);
      st.running_var[c] = 0.5 + 0.2 * double(c);
    }
    return grad_check([&] { return sum(mul(batch_norm(x, g, b, st, NormMode::kEval), p)); }, {x, g, b});
  });
  add_check("op.activations", 1e-5, [] {
    std::mt19937_64 rng(5);
    auto x = uniform({40}, rng, -3, 3);
    auto p1 = uniform({40}, rng), p2 = uniform({40}, rng), p3 = uniform({40}, rng);
    return grad_check(
        [&] { return add(add(sum(mul(leaky_relu(x, 0.2), p1)), sum(mul(relu(x), p2))), sum(mul(sigmoid(x), p3))); },
        {x}, GradCheckOptions{.kink_radius = 1e-5});
  });
  add_check("op.elementwise", 1e-5, [] {
    std::mt19937_64 rng(6);
    auto a = uniform({3, 4}, rng), b = uniform({3, 4}, rng), c = uniform({3, 4}, rng, 0.2, 2.0);
    auto p = uniform({3, 4}, rng);
    return grad_check(
        [&] {
          auto y = add(mul(a, b), sub(scale(a, 0.7), affine(b, -1.5, 0.25)));
          y = add(y, mul(log(c), abs(b)));
          y = add(y, clamp(a, -0.5, 0.5));
          return add(sum(mul(reshape(y, Shape{4, 3}), reshape(p, Shape{4, 3}))), mean(mul(y, y)));
        },
        {a, b, c}, GradCheckOptions{.kink_radius = 1e-5});
  });
  add_check("op.structural", 1e-5, [] {
    std::mt19937_64 rng(7);
    auto x = uniform({3, 2, 2, 2}, rng), m = uniform({3, 1, 2, 2}, rng, 0.1, 0.9);
    auto p = uniform({3, 16}, rng);
    return grad_check(
        [&] {
          auto sel = select_channel(upsample_nearest2x(x), {1, 0, 1});
          auto rows = index_rows(flatten(mul_channel_broadcast(m, x)), {2, 0});
          auto cat = concat_cols(std::vector<TD>{flatten(sel), flatten(x)});
          return add(sum(mul(cat, cat)), sum(mul(rows, rows)));
        },
        {x, m});
  });
  add_check("op.linear_and_losses", 1e-5, [] {
    std::mt19937_64 rng(8);
    auto x = uniform({4, 5}, rng), w = uniform({3, 5}, rng), b = uniform({3}, rng);
    std::vector<double> tgt(12);
    for (auto& t : tgt) t = std::uniform_real_distribution<double>(0, 1)(rng);
    return grad_check(
        [&] {
          auto z = linear(x, w, b);
          return add(add(softmax_cross_entropy(z, {0, 2, 1, 2}), bce_with_logits(z, tgt)), smooth_l1(z, tgt, 1.0 / 9.0));
        },
        {x, w, b}, GradCheckOptions{.kink_radius = 1e-5});
  });
  add_check("prroi.features", 1e-5, [] {
    std::mt19937_64 rng(9);
    auto l0 = uniform({2, 2, 8, 8}, rng), l1 = uniform({2, 2, 4, 4}, rng);
    TD boxes(Shape{3, 4}, std::vector<double>{4.4, 6.2, 20.5, 25.1, 2.2, 3.3, 27.0, 30.1, 9.0, 1.0, 15.5, 12.0});
    auto p = uniform({3, 2, 4, 4}, rng);
    return grad_check(
        [&] { return sum(mul(pool_rois<double>({l0, l1}, {4.0, 8.0}, {{0, 0}, {1, 1}, {1, 0}}, boxes, 4), p)); },
        {l0, l1});
  });
  add_check("prroi.forward_quadrature", 1e-3, [] { return prroi_quadrature_check(10); });
  add_check("prroi.closed_forms", 1e-10, [] { return prroi_closed_form_check(); });
  add_check("prroi.box_coordinates", 1e-4, [] { return prroi_coordinate_check(10); });
  add_check("prroi.box_coordinates.batched", 1e-4, [] {
    std::mt19937_64 rng(10);
    auto l0 = uniform({2, 2, 8, 8}, rng), l1 = uniform({2, 2, 4, 4}, rng);
    TD boxes(Shape{3, 4}, std::vector<double>{4.4, 6.2, 20.5, 25.1, 2.2, 3.3, 27.0, 30.1, 9.0, 1.0, 15.5, 12.0});
    auto p = uniform({3, 2, 4, 4}, rng);
    return grad_check(
        [&] { return sum(mul(pool_rois<double>({l0, l1}, {4.0, 8.0}, {{0, 0}, {1, 1}, {1, 0}}, boxes, 4), p)); },
        {boxes}, GradCheckOptions{.eps = 1e-6});
  });
  add_check("heads.decode_boxes", 1e-5, [] {
    std::mt19937_64 rng(11);
    auto d = uniform({3, 4}, rng, -0.3, 0.3);
    const std::vector<Box> props{{4, 5, 20, 30}, {10, 10, 40, 22}, {30, 2, 60, 50}};
    auto p = uniform({3, 4}, rng);
    return grad_check([&] { return sum(mul(decode_boxes(d, props), p)); }, {d});
  });

  add_check("generator.backbone", 1e-5, [] {
    Generator<double> gen(small_generator());
    randomize_biases(gen.params(), 12);
    std::mt19937_64 rng(13);
    auto img = uniform({1, 3, 32, 32}, rng, 0, 1);
    const auto shapes = gen.backbone(img);
    std::vector<TD> probes;
    for (const auto& l : shapes.levels) probes.push_back(probe_like(l, rng));
    std::vector<TD> inputs{img};
    for (auto* p : gen.params())
      if (p->name.starts_with("backbone")) inputs.push_back(p->tensor);
    return grad_check(
        [&] {
          const auto pyr = gen.backbone(img);
          TD total = sum(mul(pyr.levels[0], probes[0]));
          for (std::size_t l = 1; l < pyr.levels.size(); ++l) total = add(total, sum(mul(pyr.levels[l], probes[l])));
          return total;
        },
        inputs, kinked(4, 1));
  });
  add_check("generator.heads", 1e-5, [] {
    Generator<double> gen(small_generator());
    randomize_biases(gen.params(), 14);
    std::mt19937_64 rng(15);
    auto img = uniform({1, 3, 64, 64}, rng, 0, 1);
    const auto pyr = gen.backbone(img).detached();
    const std::vector<RoiRef> refs{{0, 0}, {0, 1}};
    const auto boxes = boxes_tensor<double>({{6, 8, 30, 33}, {20, 14, 50, 40}});
    const auto mask_probe = uniform({2, 1, 28, 28}, rng);
    std::vector<TD> inputs;
    for (auto* p : gen.params())
      if (!p->name.starts_with("backbone")) inputs.push_back(p->tensor);
    return grad_check(
        [&] {
          const auto r = gen.box_head(pyr, refs, boxes);
          const auto m = sigmoid(select_channel(gen.mask_head(pyr, refs, boxes), {2, 0}));
          return add(add(softmax_cross_entropy(r.class_logits, {1, 3}), sum(mul(r.deltas, r.deltas))),
                     sum(mul(m, mask_probe)));
        },
        inputs, kinked(6, 2));
  });
  add_check("discriminator.box", 1e-5, [] {
    BoxDiscriminator<double> d(small_discriminator(5));
    randomize_biases(d.params(), 16);
    std::mt19937_64 rng(17);
    auto x = uniform({3, small_generator().channels, 28, 28}, rng);
    TD w(Shape{3}, {0.3, -1.0, 0.7});
    std::vector<TD> inputs{x};
    for (auto* p : d.params()) inputs.push_back(p->tensor);
    return grad_check([&] { return sum(mul(d.forward(x, NormMode::kTrain, false), w)); }, inputs, kinked(6, 3, 1e-5));
  });
  add_check("discriminator.mask", 1e-5, [] {
    MaskDiscriminator<double> d(small_discriminator(5));
    randomize_biases(d.params(), 18);
    std::mt19937_64 rng(19);
    auto x = uniform({2, small_generator().channels, 28, 28}, rng);
    std::size_t dim = 0;
    for (auto n : d.layer_sizes()) dim += n;
    const auto probe = uniform({2, dim}, rng);
    std::vector<TD> inputs{x};
    for (auto* p : d.params()) inputs.push_back(p->tensor);
    return grad_check([&] { return sum(mul(d.forward(x, NormMode::kTrain, false).concat, probe)); }, inputs,
                      kinked(6, 4, 1e-5));
  });

  // Adversarial paths share one small generator and depth-3 critics.
  struct Adv {
    Generator<double> gen{small_generator()};
    BoxDiscriminator<double> boxd{small_discriminator(3)};
    MaskDiscriminator<double> maskd{small_discriminator(3)};
    TD images;
    std::vector<Box> props{{6, 8, 30, 33}, {20, 14, 50, 40}};
    std::vector<Box> gts{{7, 9, 31, 30}, {18, 15, 52, 42}};
    std::vector<RoiRef> refs{{0, 0}, {0, 1}};
    Adv() {
      randomize_biases(gen.params(), 20);
      std::mt19937_64 rng(21);
      images = uniform({1, 3, 64, 64}, rng, 0, 1);
    }
  };
  add_check("adversarial.box_coordinates", 1e-4, [] {
    Adv a;
    const auto pyr = a.gen.backbone(a.images).detached();
    auto boxes = boxes_tensor<double>({{5.5, 7.25, 31.5, 30.75}, {19.1, 13.3, 49.9, 41.7}});
    return grad_check(
        [&] {
          return adv_box_generator_loss(
              a.boxd.forward(prepare_box_disc_input(pyr.levels, pyr.strides, a.refs, boxes), NormMode::kEval));
        },
        {boxes}, GradCheckOptions{.eps = 1e-6, .kink_radius = 1e-5});
  });
  add_check("adversarial.generator_deltas", 1e-4, [] {
    Adv a;
    const auto det = a.gen.backbone(a.images).detached();
    std::mt19937_64 rng(23);
    auto deltas = uniform({2, 4}, rng, -0.15, 0.15);
    return grad_check(
        [&] {
          const auto dec = decode_boxes(deltas, a.props);
          return adv_box_generator_loss(
              a.boxd.forward(prepare_box_disc_input(det.levels, det.strides, a.refs, dec), NormMode::kEval));
        },
        {deltas}, GradCheckOptions{.eps = 1e-6, .kink_radius = 1e-5});
  });
  add_check("adversarial.mask_feature_matching", 1e-5, [] {
    Adv a;
    const auto pyr = a.gen.backbone(a.images).detached();
    const auto roi = pool_rois(pyr.levels, pyr.strides, a.refs, boxes_tensor<double>(a.props), 28);
    std::mt19937_64 rng(22);
    auto logits = uniform({2, 1, 28, 28}, rng, -2, 2);
    TD gt(Shape{2, 1, 28, 28});
    for (std::size_t i = 0; i < gt.numel(); ++i) gt[i] = (i % 28) > 9 ? 1.0 : 0.0;
    return grad_check(
        [&] {
          const auto real = a.maskd.forward(prepare_mask_disc_input(gt, roi), NormMode::kEval).concat;
          const auto fake = a.maskd.forward(prepare_mask_disc_input(sigmoid(logits), roi), NormMode::kEval).concat;
          return adv_mask_generator_loss(real, fake);
        },
        {logits}, kinked(40, 5, 1e-5));
  });
  add_check("adversarial.discriminator_losses", 1e-5, [] {
    Adv a;
    PyramidFeatures<double> pyr;
    TD fake_boxes, fake_masks;
    {
      NoGradGuard no_grad;
      pyr = a.gen.backbone(a.images);
      fake_boxes = decode_boxes(a.gen.box_head(pyr, a.refs, boxes_tensor<double>(a.props)).deltas, a.props);
      fake_masks = sigmoid(select_channel(a.gen.mask_head(pyr, a.refs, boxes_tensor<double>(a.gts)), {0, 2}));
    }
    const auto real_boxes = boxes_tensor<double>(a.gts);
    const auto roi = pool_rois(pyr.levels, pyr.strides, a.refs, real_boxes, 28);
    TD gt(Shape{2, 1, 28, 28});
    for (std::size_t i = 0; i < gt.numel(); ++i) gt[i] = (i % 28) > 8 ? 1.0 : 0.0;
    std::vector<TD> inputs;
    for (auto* p : a.boxd.params()) inputs.push_back(p->tensor);
    for (auto* p : a.maskd.params()) inputs.push_back(p->tensor);
    return grad_check(
        [&] {
          const auto real = a.boxd.forward(prepare_box_disc_input(pyr.levels, pyr.strides, a.refs, real_boxes),
                                           NormMode::kTrain, false);
          const auto fake = a.boxd.forward(prepare_box_disc_input(pyr.levels, pyr.strides, a.refs, fake_boxes),
                                           NormMode::kTrain, false);
          const auto fr = a.maskd.forward(prepare_mask_disc_input(gt, roi), NormMode::kTrain, false);
          const auto ff = a.maskd.forward(prepare_mask_disc_input(fake_masks, roi), NormMode::kTrain, false);
          return total_discriminator_loss<double>(adv_box_discriminator_loss(real, fake),
                                                  adv_mask_discriminator_loss(adv_mask_generator_loss(fr.concat, ff.concat)));
        },
        inputs, kinked(6, 6, 1e-5));
  });
  return checks;
}

inline VerifyResult run_check(const VerifyCheck& c) {
  VerifyResult r;
  r.name = c.name;
  r.tolerance = c.tolerance;
  try {
    const auto rep = c.run();
    r.max_rel_error = rep.max_rel_error;
    r.checked = rep.checked;
    r.passed = rep.passed(c.tolerance) && rep.checked > 0;
    r.detail = !rep.failure.empty() ? rep.failure : rep.worst_location;
    r.skipped = rep.skipped;
  } catch (const std::exception& e) {
    r.detail = e.what();
  }
  return r;
}

inline std::vector<VerifyResult> run_gradient_suite(const std::function<void(const VerifyResult&)>& on_result = {}) {
  std::vector<VerifyResult> out;
  for (const auto& c : gradient_checks()) {
    out.push_back(run_check(c));
    if (on_result) on_result(out.back());
  }
  return out;
}

}  // namespace ganmask
