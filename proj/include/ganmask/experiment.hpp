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
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ganmask/config.hpp"
#include "ganmask/inference.hpp"
#include "ganmask/trainer.hpp"

namespace ganmask {

namespace fs = std::filesystem;

enum class ExistingDir { kRefuse, kOverwrite, kResume };

struct ExperimentOptions {
  ExistingDir existing = ExistingDir::kRefuse;
  std::size_t checkpoint_every = 100;
  std::size_t log_every = 0;  // 0: silent
  std::ostream* log = nullptr;
};

struct TrainOutcome {
  TrainSummary summary;
  EvalReport report;
  std::size_t resumed_from = 0;
};

inline const char* kResolvedConfigName = "config.resolved.cfg";

// Applies the --seed convention: batch order and all initialisation follow it.
inline void apply_seed(TrainConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.generator.init_seed = seed;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  GANMASK_REQUIRE(is.good(), ConfigError, "cannot open '", p.string(), "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    GANMASK_REQUIRE(os.good(), ConfigError, "cannot write '", tmp, "'");
    os << text;
  }
  fs::rename(tmp, p);
}

inline nlohmann::ordered_json ap_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["bbox"] = to_json(r.bbox);
  j["segm"] = to_json(r.segm);
  j["mean_mask_iou"] = r.mean_mask_iou;
  j["mask_iou_count"] = r.mask_iou_count;
  return j;
}

namespace experiment_detail {

// Keeps the first `n` lines.
inline void truncate_lines(const fs::path& p, std::size_t n) {
  if (!fs::exists(p)) return;
  std::istringstream is(read_text(p));
  std::string out, line;
  for (std::size_t i = 0; i < n && std::getline(is, line); ++i) out += line + "\n";
  write_text(p, out);
}

inline std::size_t count_lines(const fs::path& p) {
  if (!fs::exists(p)) return 0;
  const auto text = read_text(p);
  return std::size_t(std::count(text.begin(), text.end(), '\n'));
}

inline bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

// Publishes a fresh directory holding the resolved config under `out` in one rename.
inline void create_run_dir(const fs::path& out, const std::string& resolved) {
  const auto parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(parent);
  const auto staging = parent / ("." + out.filename().string() + ".staging." + std::to_string(::getpid()));
  fs::remove_all(staging);
  fs::create_directory(staging);
  write_text(staging / kResolvedConfigName, resolved);
  if (fs::is_directory(out)) fs::remove(out);  // empty, checked by the caller
  fs::rename(staging, out);
}

template <typename T>
std::size_t resume_state(const fs::path& out, TrainState<T>& st) {
  std::size_t best = 0;
  fs::path best_path;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.path().extension() != ".ckpt") continue;
    TrainState<T> probe(st.cfg);
    load_state(e.path(), probe);
    if (probe.next_iter > best) best = probe.next_iter, best_path = e.path();
  }
  if (!best_path.empty()) load_state(best_path, st);
  return best;
}

}  // namespace experiment_detail

// One training run into `out`: resolved config, metrics.jsonl, timing.jsonl,
// checkpoints, final.ckpt and ap.json on the validation split.
inline TrainOutcome train_experiment(const TrainConfig& cfg, const fs::path& out, const ExperimentOptions& opt = {}) {
  using namespace experiment_detail;
  cfg.validate();
  const auto resolved = resolved_config(cfg);
  TrainState<float> st(cfg);
  TrainOutcome outcome;
  if (non_empty_dir(out)) {
    switch (opt.existing) {
      case ExistingDir::kRefuse:
        throw ConfigError("output directory '" + out.string() + "' exists; pass --resume or --overwrite");
      case ExistingDir::kOverwrite:
        fs::remove_all(out);
        create_run_dir(out, resolved);
        break;
      case ExistingDir::kResume: {
        const auto snap = out / kResolvedConfigName;
        GANMASK_REQUIRE(fs::exists(snap), ConfigError, "cannot resume '", out.string(), "': no ", kResolvedConfigName);
        GANMASK_REQUIRE(read_text(snap) == resolved, ConfigError, "cannot resume '", out.string(),
                        "': resolved config differs from the one on disk");
        outcome.resumed_from = resume_state(out, st);
        truncate_lines(out / "metrics.jsonl", st.next_iter);
        truncate_lines(out / "timing.jsonl", st.next_iter);
        break;
      }
    }
  } else {
    create_run_dir(out, resolved);
  }

  const auto data = dataset_split(cfg.data_seed, cfg.n_train, cfg.n_val, cfg.scene);
  TrainHooks hooks;
  hooks.out_dir = out;
  hooks.checkpoint_every = opt.checkpoint_every;
  if (opt.log && opt.log_every)
    hooks.on_iter = [&](const IterationRecord& r) {
      if ((r.iter + 1) % opt.log_every) return;
      *opt.log << "iter " << r.iter + 1 << "/" << cfg.total_iters << "  cls " << r.losses.l_cls << "  bbox "
               << r.losses.l_bbox << "  mask " << r.losses.l_mask << "  adv_gb " << r.losses.l_adv_gb << "  d_real "
               << r.d_real << "  d_fake " << r.d_fake << std::endl;
    };
  outcome.summary = run_training(st, data.train, hooks);
  outcome.report = evaluate_model(st.gen, data.val, cfg);
  write_text(out / "ap.json", ap_json(outcome.report).dump(2) + "\n");
  fs::remove(out / "last.ckpt");
  return outcome;
}

inline EvalReport eval_checkpoint(const TrainConfig& cfg, const fs::path& ckpt, bool validation_split = true,
                                  bool keep_detections = false) {
  GANMASK_REQUIRE(fs::exists(ckpt), ConfigError, "checkpoint '", ckpt.string(), "' does not exist");
  TrainState<float> st(cfg);
  load_state(ckpt, st);
  const auto data = dataset_split(cfg.data_seed, cfg.n_train, cfg.n_val, cfg.scene);
  return evaluate_model(st.gen, validation_split ? data.val : data.train, cfg, keep_detections);
}

struct AblationCell {
  int depth = 5;
  LossMode mode = LossMode::kFull;
  std::uint64_t seed = 0;
  double ap_mask = 0, ap_bbox = 0, mean_mask_iou = 0;
  bool diverged = false;  // training stopped by the divergence guard; no scores
};

inline constexpr const char* kDivergedName = "diverged.json";

inline const std::vector<int>& ablation_depths() {
  static const std::vector<int> d{3, 4, 5};
  return d;
}

inline const std::vector<LossMode>& ablation_modes() {
  static const std::vector<LossMode> m{LossMode::kFull, LossMode::kAdversarialOnly, LossMode::kBaselineOnly};
  return m;
}

inline std::string cell_name(int depth, LossMode mode, std::uint64_t seed) {
  return "depth" + std::to_string(depth) + "_" + to_string(mode) + "_seed" + std::to_string(seed);
}

// baseline_only never touches either critic, so its depth cells share one run per seed.
inline std::vector<AblationCell> run_ablation(const TrainConfig& base, const fs::path& out,
                                              const std::vector<std::uint64_t>& seeds,
                                              const ExperimentOptions& opt = {}) {
  GANMASK_REQUIRE(!seeds.empty(), ConfigError, "ablate: at least one seed required");
  fs::create_directories(out);
  std::vector<AblationCell> cells;
  for (int depth : ablation_depths())
    for (LossMode mode : ablation_modes())
      for (std::uint64_t seed : seeds) {
        AblationCell c{depth, mode, seed};
        TrainConfig cfg = base;
        cfg.disc_depth = mode == LossMode::kBaselineOnly ? ablation_depths().back() : depth;
        cfg.loss_mode = mode;
        apply_seed(cfg, seed);
        const auto dir = out / cell_name(cfg.disc_depth, mode, seed);
        EvalReport rep;
        const bool same_config =
            fs::exists(dir / kResolvedConfigName) && read_text(dir / kResolvedConfigName) == resolved_config(cfg);
        if (same_config && fs::exists(dir / kDivergedName)) {
          c.diverged = true;
        } else if (same_config && fs::exists(dir / "ap.json") && fs::exists(dir / "final.ckpt")) {
          const auto j = nlohmann::json::parse(read_text(dir / "ap.json"));
          c.ap_mask = j["segm"]["AP"].is_null() ? 0.0 : j["segm"]["AP"].get<double>();
          c.ap_bbox = j["bbox"]["AP"].is_null() ? 0.0 : j["bbox"]["AP"].get<double>();
          c.mean_mask_iou = j["mean_mask_iou"].get<double>();
        } else {
          if (opt.log) *opt.log << "ablate: " << dir.filename().string() << std::endl;
          ExperimentOptions cell_opt = opt;
          cell_opt.existing = ExistingDir::kResume;
          try {
            rep = train_experiment(cfg, dir, cell_opt).report;
            c.ap_mask = rep.segm.ap.value_or(0.0);
            c.ap_bbox = rep.bbox.ap.value_or(0.0);
            c.mean_mask_iou = rep.mean_mask_iou;
          } catch (const NonFiniteError& e) {
            c.diverged = true;
            const auto done = experiment_detail::count_lines(dir / "metrics.jsonl");
            nlohmann::ordered_json j{{"iterations_completed", done}, {"error", e.what()}};
            write_text(dir / kDivergedName, j.dump(2) + "\n");
            if (opt.log) *opt.log << "ablate: " << dir.filename().string() << " diverged after " << done
                                  << " iterations: " << e.what() << std::endl;
          }
        }
        cells.push_back(c);
      }
  return cells;
}

struct AblationRow {
  int depth;
  LossMode mode;
  double ap_mask, ap_bbox;
  double delta_mask, delta_bbox;  // against baseline_only, same seeds
  double delta_mask_sd, delta_bbox_sd;
  std::size_t seeds;     // completed runs
  std::size_t diverged;  // runs stopped by the divergence guard
};

inline std::vector<AblationRow> summarize_ablation(const std::vector<AblationCell>& cells) {
  std::map<std::uint64_t, const AblationCell*> baseline;
  for (const auto& c : cells)
    if (c.mode == LossMode::kBaselineOnly) baseline[c.seed] = &c;
  std::vector<AblationRow> rows;
  for (int depth : ablation_depths())
    for (LossMode mode : ablation_modes()) {
      std::vector<double> m, b, dm, db;
      std::size_t diverged = 0;
      for (const auto& c : cells) {
        if (c.depth != depth || c.mode != mode) continue;
        if (c.diverged) {
          ++diverged;
          continue;
        }
        m.push_back(c.ap_mask);
        b.push_back(c.ap_bbox);
        const auto* base = baseline.at(c.seed);
        if (base->diverged) continue;
        dm.push_back(c.ap_mask - base->ap_mask);
        db.push_back(c.ap_bbox - base->ap_bbox);
      }
      const auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / double(v.size());
      };
      const auto sd = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double mu = mean(v);
        double s = 0;
        for (double x : v) s += (x - mu) * (x - mu);
        return std::sqrt(s / double(v.size() - 1));
      };
      rows.push_back({depth, mode, mean(m), mean(b), mean(dm), mean(db), sd(dm), sd(db), m.size(), diverged});
    }
  return rows;
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// ablation.csv (depth,loss_mode,ap_mask,ap_bbox), ablation_seeds.csv and ablation_delta.csv.
inline void write_ablation_tables(const fs::path& out, const std::vector<AblationCell>& cells) {
  const auto rows = summarize_ablation(cells);
  std::string table = "depth,loss_mode,ap_mask,ap_bbox\n";
  std::string delta = "depth,loss_mode,seeds,diverged,delta_ap_mask,sd_ap_mask,delta_ap_bbox,sd_ap_bbox\n";
  for (const auto& r : rows) {
    table += std::to_string(r.depth) + "," + to_string(r.mode) + "," + fixed(r.ap_mask) + "," + fixed(r.ap_bbox) + "\n";
    delta += std::to_string(r.depth) + "," + to_string(r.mode) + "," + std::to_string(r.seeds) + "," +
             std::to_string(r.diverged) + "," + fixed(r.delta_mask) + "," + fixed(r.delta_mask_sd) + "," + fixed(r.delta_bbox) + "," +
             fixed(r.delta_bbox_sd) + "\n";
  }
  std::string per_seed = "depth,loss_mode,seed,status,ap_mask,ap_bbox,mean_mask_iou\n";
  for (const auto& c : cells) {
    per_seed += std::to_string(c.depth) + "," + to_string(c.mode) + "," + std::to_string(c.seed) + ",";
    per_seed += c.diverged ? "diverged,,,\n"
                           : "completed," + fixed(c.ap_mask) + "," + fixed(c.ap_bbox) + "," + fixed(c.mean_mask_iou) + "\n";
  }
  write_text(out / "ablation.csv", table);
  write_text(out / "ablation_delta.csv", delta);
  write_text(out / "ablation_seeds.csv", per_seed);
}

}  // namespace ganmask
