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
#include <array>
#include <cmath>
#include <vector>

#include "ganmask/errors.hpp"

namespace ganmask {

// Continuous axis-aligned rectangle. In image space a pixel (r, c) covers
// [c, c+1) x [r, r+1).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  Box scaled(double s) const { return {x1 * s, y1 * s, x2 * s, y2 * s}; }
  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }
  bool operator==(const Box&) const = default;
};

inline double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline Box clamp_to_image(const Box& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
          std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
}

// Regression targets (dx, dy, dw, dh) of `target` relative to `reference`,
// sizes in log space.
inline std::array<double, 4> encode_box(const Box& target, const Box& reference) {
  GANMASK_REQUIRE(target.valid() && reference.valid(), ContractError,
                  "encode_box: boxes must have positive area");
  return {(target.cx() - reference.cx()) / reference.width(),
          (target.cy() - reference.cy()) / reference.height(),
          std::log(target.width() / reference.width()),
          std::log(target.height() / reference.height())};
}

inline Box decode_box(const std::array<double, 4>& d, const Box& reference) {
  const double cx = reference.cx() + d[0] * reference.width();
  const double cy = reference.cy() + d[1] * reference.height();
  const double w = reference.width() * std::exp(d[2]);
  const double h = reference.height() * std::exp(d[3]);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace ganmask
