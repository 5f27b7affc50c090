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

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "ganmask/synthdata.hpp"

namespace ganmask {
namespace {

ShapeParams disk(double cx, double cy, double r) { return {ShapeKind::kDisk, {cx, cy, r, 0, 0, 0}}; }
ShapeParams rect(double x0, double y0, double x1, double y1) { return {ShapeKind::kRectangle, {x0, y0, x1, y1, 0, 0}}; }

// Oracle: every pixel tested directly against the disk inequality.
struct DiskCount {
  std::size_t count = 0;
  long r0 = 1 << 20, r1 = -1, c0 = 1 << 20, c1 = -1;
};
DiskCount disk_oracle(double cx, double cy, double r, long h, long w) {
  DiskCount d;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) {
        ++d.count;
        d.r0 = std::min(d.r0, y), d.r1 = std::max(d.r1, y);
        d.c0 = std::min(d.c0, x), d.c1 = std::max(d.c1, x);
      }
  return d;
}

TEST(Rasterize, CenteredDiskRadius8) {
  SceneConfig cfg;
  const auto scene = compose_scene({{disk(32, 32, 8), {0.9f, 0.1f, 0.1f}}}, cfg, 3);
  ASSERT_TRUE(scene.has_value());
  ASSERT_EQ(scene->instances.size(), 1u);
  const auto& inst = scene->instances[0];
  const auto o = disk_oracle(32, 32, 8, 64, 64);
  EXPECT_EQ(inst.area, o.count);
  EXPECT_EQ(inst.box, (Box{double(o.c0), double(o.r0), double(o.c1 + 1), double(o.r1 + 1)}));
  EXPECT_EQ(inst.box, (Box{24, 24, 41, 41}));
  EXPECT_EQ(inst.class_id, 1);
}

TEST(Rasterize, RectangleIntegerCenters) {
  const auto m = rasterize_mask(rect(4, 4, 10, 10), 64, 64);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->count(), 49u);
  EXPECT_EQ(*tight_box(*m), (Box{4, 4, 11, 11}));
}

TEST(Rasterize, TinyDiskOnPixelCenter) {
  const auto m = rasterize_mask(disk(10, 20, 0.4), 64, 64);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->count(), 1u);
  EXPECT_EQ(m->at(20, 10), 1);
}

TEST(Rasterize, CollinearTriangleSignalsResample) {
  ShapeParams t{ShapeKind::kTriangle, {1, 1, 5, 5, 9, 9}};
  EXPECT_FALSE(rasterize_mask(t, 32, 32).has_value());
  ShapeParams ok{ShapeKind::kTriangle, {1, 1, 20, 1, 1, 20}};
  const auto m = rasterize_mask(ok, 32, 32);
  ASSERT_TRUE(m.has_value());
  // Lattice points with x, y >= 1 and x + y <= 21.
  EXPECT_EQ(m->count(), 20u * 21u / 2u);
}

TEST(Scene, ZeroShapesRejected) {
  SceneConfig cfg;
  EXPECT_THROW(generate_scene(1, cfg, 0), ContractError);
  EXPECT_THROW(generate_scene(1, cfg, cfg.max_shapes + 1), ContractError);
}

TEST(Scene, SmallImagesRejected) {
  SceneConfig cfg;
  cfg.height = 16;
  EXPECT_THROW(generate_scene(1, cfg), ConfigError);
}

TEST(Scene, DeterministicPerSeed) {
  SceneConfig cfg;
  for (std::uint64_t seed : {1ull, 2ull, 12345ull}) {
    const auto a = generate_scene(seed, cfg), b = generate_scene(seed, cfg);
    EXPECT_EQ(a.image.values(), b.image.values());
    ASSERT_EQ(a.instances.size(), b.instances.size());
    for (std::size_t i = 0; i < a.instances.size(); ++i) {
      EXPECT_EQ(a.instances[i].mask, b.instances[i].mask);
      EXPECT_EQ(a.instances[i].box, b.instances[i].box);
      EXPECT_EQ(a.instances[i].class_id, b.instances[i].class_id);
    }
  }
  EXPECT_NE(generate_scene(1, cfg).image.values(), generate_scene(2, cfg).image.values());
}

TEST(Scene, ImageInUnitRangeAndMasksInBounds) {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = generate_scene(seed, cfg);
    for (float v : s.image.values()) ASSERT_TRUE(v >= 0.f && v <= 1.f);
    for (const auto& inst : s.instances) {
      EXPECT_EQ(inst.mask.height, cfg.height);
      EXPECT_EQ(inst.mask.width, cfg.width);
      EXPECT_GE(inst.area, cfg.min_visible_area);
      EXPECT_GE(inst.class_id, 1);
      EXPECT_LE(inst.class_id, 3);
      EXPECT_GE(inst.box.x1, 0);
      EXPECT_LE(inst.box.x2, double(cfg.width));
    }
  }
}

TEST(Scene, TightBoxProperty) {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (const auto& inst : generate_scene(seed, cfg).instances) {
      const auto& m = inst.mask;
      auto inside = [&](const Box& b, std::size_t r, std::size_t c) {
        return double(c) >= b.x1 && double(c) + 1 <= b.x2 && double(r) >= b.y1 && double(r) + 1 <= b.y2;
      };
      std::size_t in_box = 0;
      const Box big{inst.box.x1 - 1, inst.box.y1 - 1, inst.box.x2 + 1, inst.box.y2 + 1};
      for (std::size_t r = 0; r < m.height; ++r)
        for (std::size_t c = 0; c < m.width; ++c)
          if (m.at(r, c)) {
            ASSERT_TRUE(inside(big, r, c));
            in_box += inside(inst.box, r, c);
          }
      EXPECT_EQ(in_box, inst.area);
      // Shrinking any side by one pixel drops at least one set pixel.
      const Box shrunk[4] = {{inst.box.x1 + 1, inst.box.y1, inst.box.x2, inst.box.y2},
                             {inst.box.x1, inst.box.y1 + 1, inst.box.x2, inst.box.y2},
                             {inst.box.x1, inst.box.y1, inst.box.x2 - 1, inst.box.y2},
                             {inst.box.x1, inst.box.y1, inst.box.x2, inst.box.y2 - 1}};
      for (const auto& s : shrunk) {
        std::size_t kept = 0;
        for (std::size_t r = 0; r < m.height; ++r)
          for (std::size_t c = 0; c < m.width; ++c) kept += m.at(r, c) && inside(s, r, c);
        EXPECT_LT(kept, inst.area);
      }
    }
  }
}

TEST(Scene, OcclusionConsistency) {
  SceneConfig cfg;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(8, 56), size(4, 14);
  std::size_t composed = 0;
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<PlacedShape> shapes;
    const int n = 2 + trial % 3;
    for (int k = 0; k < n; ++k) {
      const double x = pos(rng), y = pos(rng), s = size(rng);
      shapes.push_back({k % 2 ? disk(x, y, s) : rect(x - s, y - s, x + s * 0.7, y + s), {0.2f, 0.8f, 0.3f}});
    }
    const auto scene = compose_scene(shapes, cfg, 1);
    if (!scene) continue;
    ++composed;
    BinaryMask analytic(cfg.height, cfg.width), visible(cfg.height, cfg.width);
    for (const auto& s : shapes) {
      const auto m = *rasterize_mask(s.shape, cfg.height, cfg.width);
      for (std::size_t i = 0; i < m.bits.size(); ++i) analytic.bits[i] |= m.bits[i];
    }
    for (const auto& inst : scene->instances)
      for (std::size_t i = 0; i < inst.mask.bits.size(); ++i) {
        ASSERT_FALSE(visible.bits[i] && inst.mask.bits[i]) << "pixel claimed twice";
        visible.bits[i] |= inst.mask.bits[i];
      }
    EXPECT_EQ(visible, analytic);
  }
  EXPECT_GT(composed, 10u);
}

TEST(Scene, LaterShapesOcclude) {
  SceneConfig cfg;
  const auto scene = compose_scene({{rect(10, 10, 30, 30), {0.9f, 0.9f, 0.1f}}, {disk(20, 20, 5), {0.1f, 0.1f, 0.9f}}}, cfg, 2);
  ASSERT_TRUE(scene.has_value());
  EXPECT_EQ(scene->instances[0].mask.at(20, 20), 0);
  EXPECT_EQ(scene->instances[1].mask.at(20, 20), 1);
  EXPECT_EQ(scene->instances[0].area, 21u * 21u - disk_oracle(20, 20, 5, 64, 64).count);
}

TEST(DatasetSplit, SizesDeterminismAndDisjointSeeds) {
  SceneConfig cfg;
  const auto a = dataset_split(1, 200, 50, cfg);
  const auto b = dataset_split(1, 200, 50, cfg);
  ASSERT_EQ(a.train.size(), 200u);
  ASSERT_EQ(a.val.size(), 50u);
  std::set<std::uint64_t> train_seeds, val_seeds;
  for (std::size_t i = 0; i < 200; ++i) {
    EXPECT_EQ(a.train[i].image.values(), b.train[i].image.values());
    train_seeds.insert(a.train[i].seed);
  }
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(a.val[i].image.values(), b.val[i].image.values());
    val_seeds.insert(a.val[i].seed);
  }
  EXPECT_EQ(train_seeds.size(), 200u);
  for (auto s : val_seeds) EXPECT_EQ(train_seeds.count(s), 0u);
  // Larger request reproduces the same prefix.
  const auto c = dataset_split(1, 210, 60, cfg);
  EXPECT_EQ(c.train[199].image.values(), a.train[199].image.values());
  EXPECT_EQ(c.val[49].image.values(), a.val[49].image.values());
  EXPECT_THROW(dataset_split(1, 0, 5, cfg), ContractError);
}

TEST(DatasetSplit, EveryClassAppearsOften) {
  SceneConfig cfg;
  const auto split = dataset_split(1, 200, 1, cfg);
  std::map<int, std::size_t> counts;
  for (const auto& s : split.train)
    for (const auto& inst : s.instances) ++counts[inst.class_id];
  for (int k = 1; k <= 3; ++k) EXPECT_GE(counts[k], 20u) << "class " << k;
}

TEST(DatasetSplit, AllAreaBucketsOccurAtDeskScale) {
  SceneConfig cfg;
  const double f = (64.0 / 256.0) * (64.0 / 256.0);
  std::size_t small = 0, medium = 0, large = 0;
  for (const auto& s : dataset_split(1, 200, 1, cfg).train)
    for (const auto& inst : s.instances) {
      const double a = double(inst.area);
      if (a < 32 * 32 * f) ++small;
      else if (a <= 96 * 96 * f) ++medium;
      else ++large;
    }
  EXPECT_GT(small, 10u);
  EXPECT_GT(medium, 10u);
  EXPECT_GT(large, 10u);
}

TEST(Rle, RoundTrip) {
  SceneConfig cfg;
  for (const auto& inst : generate_scene(4, cfg).instances)
    EXPECT_EQ(rle_decode(rle_encode(inst.mask), inst.mask.height, inst.mask.width), inst.mask);
  BinaryMask full(3, 3);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  EXPECT_EQ(rle_encode(full), (std::vector<std::uint32_t>{0, 9}));
  EXPECT_THROW(rle_decode({4, 4}, 3, 3), ContractError);
}

TEST(SceneCache, RoundTripAndHashMismatch) {
  SceneConfig cfg;
  const auto dir = std::filesystem::temp_directory_path() / "ganmask_cache_test";
  std::filesystem::remove_all(dir);
  const auto scenes = dataset_split(3, 5, 1, cfg).train;
  save_scene_cache(dir, 3, cfg, scenes);
  const auto loaded = load_scene_cache(dir, 3, cfg, scenes.size());
  ASSERT_TRUE(loaded.has_value());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ((*loaded)[i].seed, scenes[i].seed);
    EXPECT_EQ((*loaded)[i].image.values(), scenes[i].image.values());
    ASSERT_EQ((*loaded)[i].instances.size(), scenes[i].instances.size());
    for (std::size_t k = 0; k < scenes[i].instances.size(); ++k) {
      EXPECT_EQ((*loaded)[i].instances[k].mask, scenes[i].instances[k].mask);
      EXPECT_EQ((*loaded)[i].instances[k].box, scenes[i].instances[k].box);
      EXPECT_EQ((*loaded)[i].instances[k].area, scenes[i].instances[k].area);
    }
  }
  SceneConfig other = cfg;
  other.max_size = 12;
  EXPECT_NE(other.hash(), cfg.hash());
  EXPECT_FALSE(load_scene_cache(dir, 3, other, scenes.size()).has_value());
  EXPECT_FALSE(load_scene_cache(dir, 4, cfg, scenes.size()).has_value());
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace ganmask
