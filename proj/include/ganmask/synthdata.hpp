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
// Synthetic instance-segmentation scenes: disks, rectangles and triangles
// over a smoothed-noise background, with exact visible masks.
//
// Rasterization uses integer pixel centers: pixel (r, c) is set iff the point
// (x = c, y = r) lies inside the analytic shape (edges inclusive). An
// instance box is the tight pixel-extent box [min_c, max_c + 1) x
// [min_r, max_r + 1).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ganmask/box.hpp"
#include "ganmask/checkpoint.hpp"
#include "ganmask/tensor.hpp"

namespace ganmask {

struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}
  std::uint8_t at(std::size_t r, std::size_t c) const { return bits[r * width + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return bits[r * width + c]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  bool operator==(const BinaryMask&) const = default;
};

// Tight pixel-extent box of the set pixels; nullopt for an empty mask.
inline std::optional<Box> tight_box(const BinaryMask& m) {
  long r0 = -1, r1 = -1, c0 = -1, c1 = -1;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c)
      if (m.at(r, c)) {
        if (r0 < 0) r0 = static_cast<long>(r);
        r1 = static_cast<long>(r);
        if (c0 < 0 || static_cast<long>(c) < c0) c0 = static_cast<long>(c);
        c1 = std::max(c1, static_cast<long>(c));
      }
  if (r0 < 0) return std::nullopt;
  return Box{double(c0), double(r0), double(c1 + 1), double(r1 + 1)};
}

enum class ShapeKind : int { kDisk = 1, kRectangle = 2, kTriangle = 3 };

// Parameters in pixel-center coordinates.
//   disk:      p = {cx, cy, radius}
//   rectangle: p = {x0, y0, x1, y1}
//   triangle:  p = {ax, ay, bx, by, cx, cy}
struct ShapeParams {
  ShapeKind kind = ShapeKind::kDisk;
  std::array<double, 6> p{};

  int class_id() const { return static_cast<int>(kind); }
};

inline bool shape_contains(const ShapeParams& s, double x, double y) {
  switch (s.kind) {
    case ShapeKind::kDisk: {
      const double dx = x - s.p[0], dy = y - s.p[1];
      return dx * dx + dy * dy <= s.p[2] * s.p[2];
    }
    case ShapeKind::kRectangle:
      return x >= s.p[0] && x <= s.p[2] && y >= s.p[1] && y <= s.p[3];
    case ShapeKind::kTriangle: {
      auto edge = [&](int a, int b) {
        return (s.p[2 * b] - s.p[2 * a]) * (y - s.p[2 * a + 1]) -
               (s.p[2 * b + 1] - s.p[2 * a + 1]) * (x - s.p[2 * a]);
      };
      const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

inline double triangle_twice_area(const ShapeParams& s) {
  return std::abs((s.p[2] - s.p[0]) * (s.p[5] - s.p[1]) - (s.p[3] - s.p[1]) * (s.p[4] - s.p[0]));
}

// nullopt signals degenerate geometry (collinear triangle); callers resample.
inline std::optional<BinaryMask> rasterize_mask(const ShapeParams& s, std::size_t height,
                                                std::size_t width) {
  if (s.kind == ShapeKind::kTriangle && triangle_twice_area(s) < 1e-9) return std::nullopt;
  BinaryMask m(height, width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      m.at(r, c) = shape_contains(s, static_cast<double>(c), static_cast<double>(r)) ? 1 : 0;
  return m;
}

struct Instance {
  int class_id = 0;
  Box box;
  BinaryMask mask;
  std::size_t area = 0;
};

struct Scene {
  Tensor<float> image;  // [3,H,W] in [0,1]
  std::vector<Instance> instances;
  std::uint64_t seed = 0;
};

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  int num_classes = 3;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 4;
  double min_size = 3.0;  // radius / half-extent range in pixels
  double max_size = 16.0;
  std::size_t min_visible_area = 6;
  double background_amplitude = 0.12;
  int background_smoothing = 2;
  double min_contrast = 0.3;
  std::size_t max_retries = 100;

  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "h=" << height << ";w=" << width << ";k=" << num_classes << ";min_shapes=" << min_shapes
       << ";max_shapes=" << max_shapes << ";min_size=" << min_size << ";max_size=" << max_size
       << ";min_area=" << min_visible_area << ";bg_amp=" << background_amplitude
       << ";bg_smooth=" << background_smoothing << ";contrast=" << min_contrast
       << ";retries=" << max_retries;
    return os.str();
  }

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : canonical()) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ull;
    }
    return h;
  }

  void validate() const {
    GANMASK_REQUIRE(height >= 32 && width >= 32, ConfigError, "scene: image must be at least 32x32, got ",
                    height, "x", width);
    GANMASK_REQUIRE(num_classes == 3, ConfigError, "scene: num_classes must be 3 (disk, rectangle, triangle)");
    GANMASK_REQUIRE(min_shapes >= 1 && min_shapes <= max_shapes, ConfigError,
                    "scene: need 1 <= min_shapes <= max_shapes");
    GANMASK_REQUIRE(min_size > 0 && min_size <= max_size, ConfigError, "scene: bad size range");
    GANMASK_REQUIRE(min_visible_area >= 1, ConfigError, "scene: min_visible_area must be >= 1");
  }
};

struct PlacedShape {
  ShapeParams shape;
  std::array<float, 3> color{};
};

namespace synth_detail {

inline ShapeParams sample_shape(std::mt19937_64& rng, const SceneConfig& cfg) {
  std::uniform_int_distribution<int> kind(1, 3);
  std::uniform_real_distribution<double> size(cfg.min_size, cfg.max_size);
  std::uniform_real_distribution<double> cx(0, static_cast<double>(cfg.width - 1));
  std::uniform_real_distribution<double> cy(0, static_cast<double>(cfg.height - 1));
  std::uniform_real_distribution<double> angle(0, 2 * M_PI);
  ShapeParams s;
  s.kind = static_cast<ShapeKind>(kind(rng));
  const double x = cx(rng), y = cy(rng);
  switch (s.kind) {
    case ShapeKind::kDisk:
      s.p = {x, y, size(rng), 0, 0, 0};
      break;
    case ShapeKind::kRectangle: {
      const double hw = size(rng), hh = size(rng);
      s.p = {x - hw, y - hh, x + hw, y + hh, 0, 0};
      break;
    }
    case ShapeKind::kTriangle: {
      const double base = angle(rng);
      for (int v = 0; v < 3; ++v) {
        const double a = base + v * 2 * M_PI / 3 + std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        const double r = size(rng) * 1.3;
        s.p[2 * v] = x + r * std::cos(a);
        s.p[2 * v + 1] = y + r * std::sin(a);
      }
      break;
    }
  }
  return s;
}

// Box blur passes over a single plane.
inline void smooth(std::vector<float>& plane, std::size_t h, std::size_t w, int passes) {
  std::vector<float> tmp(plane.size());
  for (int p = 0; p < passes; ++p) {
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        float s = 0;
        int n = 0;
        for (long dr = -1; dr <= 1; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
            if (rr < 0 || cc < 0 || rr >= long(h) || cc >= long(w)) continue;
            s += plane[rr * w + cc];
            ++n;
          }
        tmp[r * w + c] = s / static_cast<float>(n);
      }
    plane.swap(tmp);
  }
}

}  // namespace synth_detail

// Renders `shapes` in z-order (later occludes earlier). Returns nullopt if any
// visible mask ends up below cfg.min_visible_area or a shape is degenerate.
inline std::optional<Scene> compose_scene(const std::vector<PlacedShape>& shapes,
                                          const SceneConfig& cfg, std::uint64_t seed) {
  const std::size_t h = cfg.height, w = cfg.width;
  std::vector<BinaryMask> raster;
  for (const auto& s : shapes) {
    auto m = rasterize_mask(s.shape, h, w);
    if (!m) return std::nullopt;
    raster.push_back(std::move(*m));
  }
  std::vector<Instance> instances;
  BinaryMask covered(h, w);
  std::vector<BinaryMask> visible(shapes.size());
  for (std::size_t k = shapes.size(); k-- > 0;) {
    visible[k] = raster[k];
    for (std::size_t i = 0; i < h * w; ++i) {
      if (covered.bits[i]) visible[k].bits[i] = 0;
      covered.bits[i] |= raster[k].bits[i];
    }
    if (visible[k].count() < cfg.min_visible_area) return std::nullopt;
  }

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<float> unit(0.f, 1.f);
  Scene scene;
  scene.seed = seed;
  scene.image = Tensor<float>(Shape{3, h, w});
  auto& img = scene.image.values();
  std::array<float, 3> bg{};
  for (auto& c : bg) c = 0.3f + 0.4f * unit(rng);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::vector<float> noise(h * w);
    for (auto& v : noise) v = unit(rng) * 2.f - 1.f;
    synth_detail::smooth(noise, h, w, cfg.background_smoothing);
    for (std::size_t i = 0; i < h * w; ++i)
      img[ch * h * w + i] = bg[ch] + static_cast<float>(cfg.background_amplitude) * 3.f * noise[i];
  }
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    for (std::size_t i = 0; i < h * w; ++i)
      if (visible[k].bits[i])
        for (std::size_t ch = 0; ch < 3; ++ch)
          img[ch * h * w + i] = shapes[k].color[ch] + 0.03f * (unit(rng) * 2.f - 1.f);
    Instance inst;
    inst.class_id = shapes[k].shape.class_id();
    inst.mask = std::move(visible[k]);
    inst.area = inst.mask.count();
    inst.box = *tight_box(inst.mask);
    instances.push_back(std::move(inst));
  }
  for (auto& v : img) v = std::clamp(v, 0.f, 1.f);
  scene.instances = std::move(instances);
  return scene;
}

inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg, std::size_t n_shapes) {
  cfg.validate();
  GANMASK_REQUIRE(n_shapes >= 1 && n_shapes <= cfg.max_shapes, ContractError,
                  "generate_scene: n_shapes must be in [1, ", cfg.max_shapes, "], got ", n_shapes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.f, 1.f);
  std::vector<PlacedShape> placed;
  std::optional<Scene> scene;
  for (std::size_t k = 0; k < n_shapes; ++k) {
    for (std::size_t attempt = 0; attempt < cfg.max_retries; ++attempt) {
      PlacedShape ps;
      ps.shape = synth_detail::sample_shape(rng, cfg);
      // Keep fill colors away from the background's range.
      do {
        for (auto& c : ps.color) c = unit(rng);
      } while (std::abs((ps.color[0] + ps.color[1] + ps.color[2]) / 3.f - 0.5f) < cfg.min_contrast * 0.5f);
      placed.push_back(ps);
      auto candidate = compose_scene(placed, cfg, seed);
      if (candidate) {
        scene = std::move(candidate);
        break;
      }
      placed.pop_back();
    }
  }
  GANMASK_REQUIRE(scene.has_value(), ContractError, "generate_scene: could not place any shape for seed ", seed);
  return std::move(*scene);
}

inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed * 0x2545F4914F6CDD1Dull + 1);
  std::uniform_int_distribution<std::size_t> n(cfg.min_shapes, cfg.max_shapes);
  return generate_scene(seed, cfg, n(rng));
}

// Train scene i uses seed (base << 32) | 2i, validation scene i (base << 32) | 2i+1,
// so the two streams never share a seed.
inline std::uint64_t scene_seed(std::uint64_t base, bool validation, std::size_t index) {
  return (base << 32) | (2 * static_cast<std::uint64_t>(index) + (validation ? 1 : 0));
}

struct DatasetSplit {
  std::vector<Scene> train;
  std::vector<Scene> val;
};

inline DatasetSplit dataset_split(std::uint64_t seed, std::size_t n_train, std::size_t n_val,
                                  const SceneConfig& cfg) {
  GANMASK_REQUIRE(n_train >= 1 && n_val >= 1, ContractError, "dataset_split: both splits need >= 1 scene");
  DatasetSplit out;
  for (std::size_t i = 0; i < n_train; ++i) out.train.push_back(generate_scene(scene_seed(seed, false, i), cfg));
  for (std::size_t i = 0; i < n_val; ++i) out.val.push_back(generate_scene(scene_seed(seed, true, i), cfg));
  return out;
}

// Run-length code of a row-major mask: alternating run lengths, first run of zeros.
inline std::vector<std::uint32_t> rle_encode(const BinaryMask& m) {
  std::vector<std::uint32_t> runs;
  std::uint8_t cur = 0;
  std::uint32_t len = 0;
  for (auto b : m.bits) {
    if (b != cur) {
      runs.push_back(len);
      len = 0;
      cur = b;
    }
    ++len;
  }
  runs.push_back(len);
  return runs;
}

inline BinaryMask rle_decode(const std::vector<std::uint32_t>& runs, std::size_t h, std::size_t w) {
  BinaryMask m(h, w);
  std::size_t pos = 0;
  std::uint8_t cur = 0;
  for (auto len : runs) {
    GANMASK_REQUIRE(pos + len <= h * w, ContractError, "rle_decode: runs overflow mask");
    std::fill_n(m.bits.begin() + static_cast<long>(pos), len, cur);
    pos += len;
    cur ^= 1;
  }
  GANMASK_REQUIRE(pos == h * w, ContractError, "rle_decode: runs cover ", pos, " of ", h * w, " pixels");
  return m;
}

// On-disk scene cache: <dir>/manifest.txt and <dir>/scenes.bin.
inline void save_scene_cache(const std::filesystem::path& dir, std::uint64_t seed, const SceneConfig& cfg,
                             const std::vector<Scene>& scenes) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream mf(dir / "manifest.txt", std::ios::trunc);
    mf << "seed=" << seed << "\nconfig_hash=" << cfg.hash() << "\ncount=" << scenes.size() << "\n";
  }
  std::ofstream os(dir / "scenes.bin", std::ios::binary | std::ios::trunc);
  for (const auto& s : scenes) {
    detail::put_le<std::uint64_t>(os, s.seed);
    for (float v : s.image.values()) detail::put_le<float>(os, v);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.instances.size()));
    for (const auto& inst : s.instances) {
      detail::put_le<std::int32_t>(os, inst.class_id);
      for (double v : inst.box.as_array()) detail::put_le<double>(os, v);
      const auto runs = rle_encode(inst.mask);
      detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(runs.size()));
      for (auto r : runs) detail::put_le<std::uint32_t>(os, r);
    }
  }
}

// nullopt unless the manifest matches (seed, config hash, count).
inline std::optional<std::vector<Scene>> load_scene_cache(const std::filesystem::path& dir, std::uint64_t seed,
                                                          const SceneConfig& cfg, std::size_t count) {
  std::ifstream mf(dir / "manifest.txt");
  if (!mf) return std::nullopt;
  std::ostringstream expected;
  expected << "seed=" << seed << "\nconfig_hash=" << cfg.hash() << "\ncount=" << count << "\n";
  std::stringstream got;
  got << mf.rdbuf();
  if (got.str() != expected.str()) return std::nullopt;
  std::ifstream is(dir / "scenes.bin", std::ios::binary);
  if (!is) return std::nullopt;
  std::vector<Scene> scenes(count);
  const std::size_t h = cfg.height, w = cfg.width;
  for (auto& s : scenes) {
    s.seed = detail::get_le<std::uint64_t>(is);
    s.image = Tensor<float>(Shape{3, h, w});
    for (auto& v : s.image.values()) v = detail::get_le<float>(is);
    const auto n = detail::get_le<std::uint32_t>(is);
    s.instances.resize(n);
    for (auto& inst : s.instances) {
      inst.class_id = detail::get_le<std::int32_t>(is);
      inst.box.x1 = detail::get_le<double>(is);
      inst.box.y1 = detail::get_le<double>(is);
      inst.box.x2 = detail::get_le<double>(is);
      inst.box.y2 = detail::get_le<double>(is);
      std::vector<std::uint32_t> runs(detail::get_le<std::uint32_t>(is));
      for (auto& r : runs) r = detail::get_le<std::uint32_t>(is);
      inst.mask = rle_decode(runs, h, w);
      inst.area = inst.mask.count();
    }
  }
  return scenes;
}

}  // namespace ganmask
