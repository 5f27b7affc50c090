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
// Experiment configuration: flat `key = value` files, `#` comments.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ganmask/discriminators.hpp"
#include "ganmask/eval.hpp"
#include "ganmask/heads.hpp"
#include "ganmask/losses.hpp"
#include "ganmask/synthdata.hpp"

namespace ganmask {

struct Milestone {
  std::size_t iter = 0;
  double factor = 1;
  bool operator==(const Milestone&) const = default;
};

struct TrainConfig {
  std::size_t total_iters = 2000;
  double base_lr = 0.01;
  std::vector<Milestone> lr_milestones;
  std::size_t warmup_iters = 0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double disc_lr_ratio = 0.2;
  std::size_t batch_size = 2;
  std::uint64_t seed = 7;
  LossMode loss_mode = LossMode::kFull;
  int disc_depth = 5;
  std::size_t disc_steps = 1;  // discriminator steps per generator step
  std::size_t adv_max_rois = 0;  // 0: every positive proposal
  bool mask_disc_sigmoid = true;
  LossWeights weights;
  double smooth_l1_beta = 1.0 / 9.0;

  std::size_t n_train = 200;
  std::size_t n_val = 50;
  std::uint64_t data_seed = 1;
  std::uint64_t eval_seed = 99;
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  std::size_t max_dets = 100;
  double area_scale = -1;  // < 0: (image side / 256)^2

  SceneConfig scene;
  JitterConfig jitter;
  GeneratorConfig generator;

  void validate() const {
    GANMASK_REQUIRE(total_iters >= 1, ConfigError, "total_iters: must be >= 1");
    GANMASK_REQUIRE(base_lr > 0, ConfigError, "base_lr: must be positive");
    GANMASK_REQUIRE(disc_lr_ratio > 0, ConfigError, "disc_lr_ratio: must be positive");
    GANMASK_REQUIRE(momentum >= 0 && momentum < 1, ConfigError, "momentum: must be in [0,1)");
    GANMASK_REQUIRE(weight_decay >= 0, ConfigError, "weight_decay: must be >= 0");
    GANMASK_REQUIRE(batch_size >= 1, ConfigError, "batch_size: must be >= 1");
    GANMASK_REQUIRE(disc_depth >= 3 && disc_depth <= 5, ConfigError, "disc_depth: must be 3, 4 or 5");
    GANMASK_REQUIRE(disc_steps >= 1, ConfigError, "disc_steps: must be >= 1");
    GANMASK_REQUIRE(n_train >= 1 && n_val >= 1, ConfigError, "n_train/n_val: dataset must be nonempty");
    for (std::size_t i = 1; i < lr_milestones.size(); ++i)
      GANMASK_REQUIRE(lr_milestones[i].iter > lr_milestones[i - 1].iter, ConfigError,
                      "lr_milestones: iterations must be strictly increasing");
    for (const auto& m : lr_milestones) GANMASK_REQUIRE(m.factor > 0, ConfigError, "lr_milestones: factors must be positive");
    GANMASK_REQUIRE(generator.num_classes == scene.num_classes, ConfigError,
                    "gen.num_classes: must equal scene.num_classes");
    scene.validate();
  }

  DiscriminatorConfig discriminator() const {
    DiscriminatorConfig d;
    d.in_channels = generator.channels;
    d.depth = disc_depth;
    d.init_seed = generator.init_seed + 1000;
    return d;
  }

  EvalConfig eval() const {
    EvalConfig e;
    e.max_dets = max_dets;
    const double side = double(std::min(scene.height, scene.width));
    e.area_scale = area_scale >= 0 ? area_scale : (side / 256.0) * (side / 256.0);
    return e;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename U>
U parse_number(const std::string& key, const std::string& text) {
  U v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  GANMASK_REQUIRE(ec == std::errc() && p == end, ConfigError, key, ": cannot parse '", text, "' as a number");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define GANMASK_NUM_FIELD(name, member, type)                                                         \
  {name, Field{[](const TrainConfig& c) { return fmt(static_cast<double>(c.member)); },               \
               [](TrainConfig& c, const std::string& v) { c.member = parse_number<type>(name, v); }}}
#define GANMASK_INT_FIELD(name, member, type)                                                         \
  {name, Field{[](const TrainConfig& c) { return std::to_string(c.member); },                         \
               [](TrainConfig& c, const std::string& v) { c.member = parse_number<type>(name, v); }}}

inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      GANMASK_INT_FIELD("total_iters", total_iters, std::size_t),
      GANMASK_NUM_FIELD("base_lr", base_lr, double),
      {"lr_milestones",
       Field{[](const TrainConfig& c) {
               std::string s;
               for (std::size_t i = 0; i < c.lr_milestones.size(); ++i)
                 s += (i ? "," : "") + std::to_string(c.lr_milestones[i].iter) + ":" + fmt(c.lr_milestones[i].factor);
               return s;
             },
             [](TrainConfig& c, const std::string& v) {
               c.lr_milestones.clear();
               std::stringstream ss(v);
               std::string item;
               while (std::getline(ss, item, ',')) {
                 item = trim(item);
                 if (item.empty()) continue;
                 const auto colon = item.find(':');
                 GANMASK_REQUIRE(colon != std::string::npos, ConfigError, "lr_milestones: entry '", item,
                                 "' must be iter:factor");
                 c.lr_milestones.push_back({parse_number<std::size_t>("lr_milestones", trim(item.substr(0, colon))),
                                            parse_number<double>("lr_milestones", trim(item.substr(colon + 1)))});
               }
             }}},
      GANMASK_INT_FIELD("warmup_iters", warmup_iters, std::size_t),
      GANMASK_NUM_FIELD("momentum", momentum, double),
      GANMASK_NUM_FIELD("weight_decay", weight_decay, double),
      GANMASK_NUM_FIELD("disc_lr_ratio", disc_lr_ratio, double),
      GANMASK_INT_FIELD("batch_size", batch_size, std::size_t),
      GANMASK_INT_FIELD("seed", seed, std::uint64_t),
      {"loss_mode", Field{[](const TrainConfig& c) { return to_string(c.loss_mode); },
                          [](TrainConfig& c, const std::string& v) { c.loss_mode = parse_loss_mode(v); }}},
      GANMASK_INT_FIELD("disc_depth", disc_depth, int),
      GANMASK_INT_FIELD("disc_steps", disc_steps, std::size_t),
      GANMASK_INT_FIELD("adv_max_rois", adv_max_rois, std::size_t),
      {"mask_disc_sigmoid", Field{[](const TrainConfig& c) { return std::string(c.mask_disc_sigmoid ? "true" : "false"); },
                                  [](TrainConfig& c, const std::string& v) {
                                    c.mask_disc_sigmoid = parse_bool("mask_disc_sigmoid", v);
                                  }}},
      GANMASK_NUM_FIELD("weight.cls", weights.cls, double),
      GANMASK_NUM_FIELD("weight.bbox", weights.bbox, double),
      GANMASK_NUM_FIELD("weight.mask", weights.mask, double),
      GANMASK_NUM_FIELD("weight.adv_gb", weights.adv_gb, double),
      GANMASK_NUM_FIELD("weight.adv_gm", weights.adv_gm, double),
      GANMASK_NUM_FIELD("weight.adv_db", weights.adv_db, double),
      GANMASK_NUM_FIELD("weight.adv_dm", weights.adv_dm, double),
      GANMASK_NUM_FIELD("smooth_l1_beta", smooth_l1_beta, double),
      GANMASK_INT_FIELD("n_train", n_train, std::size_t),
      GANMASK_INT_FIELD("n_val", n_val, std::size_t),
      GANMASK_INT_FIELD("data_seed", data_seed, std::uint64_t),
      GANMASK_INT_FIELD("eval_seed", eval_seed, std::uint64_t),
      GANMASK_NUM_FIELD("eval.score_threshold", score_threshold, double),
      GANMASK_NUM_FIELD("eval.nms_iou", nms_iou, double),
      GANMASK_INT_FIELD("eval.max_dets", max_dets, std::size_t),
      GANMASK_NUM_FIELD("eval.area_scale", area_scale, double),
      GANMASK_INT_FIELD("scene.height", scene.height, std::size_t),
      GANMASK_INT_FIELD("scene.width", scene.width, std::size_t),
      GANMASK_INT_FIELD("scene.num_classes", scene.num_classes, int),
      GANMASK_INT_FIELD("scene.min_shapes", scene.min_shapes, std::size_t),
      GANMASK_INT_FIELD("scene.max_shapes", scene.max_shapes, std::size_t),
      GANMASK_NUM_FIELD("scene.min_size", scene.min_size, double),
      GANMASK_NUM_FIELD("scene.max_size", scene.max_size, double),
      GANMASK_INT_FIELD("scene.min_visible_area", scene.min_visible_area, std::size_t),
      GANMASK_NUM_FIELD("scene.background_amplitude", scene.background_amplitude, double),
      GANMASK_INT_FIELD("scene.background_smoothing", scene.background_smoothing, int),
      GANMASK_NUM_FIELD("scene.min_contrast", scene.min_contrast, double),
      GANMASK_INT_FIELD("scene.max_retries", scene.max_retries, std::size_t),
      GANMASK_NUM_FIELD("jitter.scale", jitter.scale, double),
      GANMASK_NUM_FIELD("jitter.shift", jitter.shift, double),
      GANMASK_INT_FIELD("jitter.per_gt", jitter.per_gt, std::size_t),
      GANMASK_NUM_FIELD("jitter.min_iou", jitter.min_iou, double),
      GANMASK_INT_FIELD("jitter.max_retries", jitter.max_retries, std::size_t),
      GANMASK_INT_FIELD("jitter.background_per_image", jitter.background_per_image, std::size_t),
      GANMASK_NUM_FIELD("jitter.background_max_iou", jitter.background_max_iou, double),
      GANMASK_INT_FIELD("gen.num_classes", generator.num_classes, int),
      GANMASK_INT_FIELD("gen.channels", generator.channels, std::size_t),
      GANMASK_INT_FIELD("gen.box_pool", generator.box_pool, std::size_t),
      GANMASK_INT_FIELD("gen.box_fc", generator.box_fc, std::size_t),
      GANMASK_INT_FIELD("gen.mask_width", generator.mask_width, std::size_t),
      GANMASK_INT_FIELD("gen.mask_convs", generator.mask_convs, std::size_t),
      GANMASK_INT_FIELD("gen.init_seed", generator.init_seed, std::uint64_t),
  };
  return table;
}

#undef GANMASK_NUM_FIELD
#undef GANMASK_INT_FIELD

}  // namespace config_detail

inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : config_detail::fields())
    if (name == key) {
      field.set(cfg, config_detail::trim(value));
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline TrainConfig parse_config(std::istream& is, TrainConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    GANMASK_REQUIRE(eq != std::string::npos, ConfigError, "config line ", lineno, ": expected key = value");
    set_config_value(cfg, config_detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  GANMASK_REQUIRE(is.good(), ConfigError, "cannot open config file '", path, "'");
  return parse_config(is);
}

// Every key, one per line; parse_config of the result reproduces `cfg`.
inline std::string resolved_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [name, field] : config_detail::fields()) out += name + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace ganmask
