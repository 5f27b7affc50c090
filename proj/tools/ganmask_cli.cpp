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

// ganmask: train, eval, gradcheck and ablate subcommands.

#include <png.h>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>

#include "ganmask/experiment.hpp"
#include "ganmask/verify.hpp"

namespace {

using namespace ganmask;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss_mode;
  std::optional<int> disc_depth;
  std::vector<std::string> overrides;
  bool overwrite = false;
  bool resume = false;
  std::size_t log_every = 50;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_out_policy) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_option("--seed", f.seed, "training and initialisation seed");
  cmd->add_option("--loss-mode", f.loss_mode, "full, adversarial_only or baseline_only");
  cmd->add_option("--disc-depth", f.disc_depth, "discriminator conv layers (3, 4 or 5)");
  cmd->add_option("--set", f.overrides, "extra key=value override, repeatable");
  if (with_out_policy) {
    cmd->add_flag("--overwrite", f.overwrite, "replace an existing output directory");
    cmd->add_flag("--resume", f.resume, "continue from the latest checkpoint in --out");
    cmd->add_option("--log-every", f.log_every, "progress line interval, 0 for none");
  }
}

TrainConfig resolve(const CommonFlags& f) {
  TrainConfig cfg = f.config.empty() ? TrainConfig{} : load_config(f.config);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    GANMASK_REQUIRE(eq != std::string::npos, ConfigError, "--set expects key=value, got '", kv, "'");
    set_config_value(cfg, config_detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (f.seed) apply_seed(cfg, *f.seed);
  if (f.loss_mode) cfg.loss_mode = parse_loss_mode(*f.loss_mode);
  if (f.disc_depth) cfg.disc_depth = *f.disc_depth;
  cfg.validate();
  return cfg;
}

ExperimentOptions options(const CommonFlags& f) {
  GANMASK_REQUIRE(!(f.overwrite && f.resume), ConfigError, "--overwrite and --resume are mutually exclusive");
  ExperimentOptions o;
  o.existing = f.resume ? ExistingDir::kResume : (f.overwrite ? ExistingDir::kOverwrite : ExistingDir::kRefuse);
  o.log_every = f.log_every;
  o.log = &std::cerr;
  return o;
}

void print_summary(const std::string& label, const APSummary& s) {
  const auto v = [](const std::optional<double>& x) { return x ? fixed(*x) : std::string("-"); };
  std::cout << label << "  AP " << v(s.ap) << "  AP50 " << v(s.ap50) << "  AP75 " << v(s.ap75) << "  AP_S "
            << v(s.ap_s) << "  AP_M " << v(s.ap_m) << "  AP_L " << v(s.ap_l) << "\n";
}

void write_png(const fs::path& path, std::size_t w, std::size_t h, const std::vector<std::uint8_t>& rgb) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  GANMASK_REQUIRE(fp, ConfigError, "cannot write '", path.string(), "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw ConfigError("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, rgb.data() + y * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Prediction masks alpha-blended in class colours, gt contours in white,
// upscaled by `zoom` with nearest neighbour.
void write_overlay(const fs::path& path, const Scene& scene, const std::vector<Detection>& dets,
                   double score_min, std::size_t zoom = 4) {
  static const double colors[3][3] = {{1.0, 0.25, 0.2}, {0.2, 0.9, 0.3}, {0.25, 0.45, 1.0}};
  const std::size_t h = scene.image.dim(1), w = scene.image.dim(2);
  std::vector<double> px(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) px[i * 3 + c] = scene.image[c * h * w + i];
  for (const auto& d : dets) {
    if (d.score < score_min || d.mask.bits.empty()) continue;
    const auto& col = colors[std::size_t(d.class_id) % 3];
    for (std::size_t i = 0; i < h * w; ++i)
      if (d.mask.bits[i])
        for (std::size_t c = 0; c < 3; ++c) px[i * 3 + c] = 0.5 * px[i * 3 + c] + 0.5 * col[c];
  }
  std::vector<std::uint8_t> rgb(3 * h * w * zoom * zoom);
  for (std::size_t y = 0; y < h * zoom; ++y)
    for (std::size_t x = 0; x < w * zoom; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        rgb[(y * w * zoom + x) * 3 + c] =
            std::uint8_t(std::lround(255 * std::clamp(px[((y / zoom) * w + x / zoom) * 3 + c], 0.0, 1.0)));
  // Contour: gt pixels with a 4-neighbour outside the mask, drawn on the upscaled grid.
  for (const auto& g : scene.instances)
    for (std::size_t y = 0; y < h * zoom; ++y)
      for (std::size_t x = 0; x < w * zoom; ++x) {
        const auto inside = [&](long yy, long xx) {
          if (yy < 0 || xx < 0 || yy >= long(h * zoom) || xx >= long(w * zoom)) return false;
          return g.mask.at(std::size_t(yy) / zoom, std::size_t(xx) / zoom) != 0;
        };
        const long yy = long(y), xx = long(x);
        if (inside(yy, xx) && (!inside(yy - 1, xx) || !inside(yy + 1, xx) || !inside(yy, xx - 1) || !inside(yy, xx + 1)))
          for (std::size_t c = 0; c < 3; ++c) rgb[(y * w * zoom + x) * 3 + c] = 255;
      }
  write_png(path, w * zoom, h * zoom, rgb);
}

int cmd_train(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto outcome = train_experiment(cfg, f.out, options(f));
  std::cout << "trained " << outcome.summary.iterations_run << " iterations";
  if (outcome.resumed_from) std::cout << " (resumed at " << outcome.resumed_from << ")";
  std::cout << " in " << fixed(outcome.summary.seconds, 1) << " s\n";
  print_summary("bbox", outcome.report.bbox);
  print_summary("segm", outcome.report.segm);
  std::cout << "mean mask IoU " << fixed(outcome.report.mean_mask_iou) << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& ckpt_flag, const std::string& iou_kind, std::size_t overlays,
             const std::string& split) {
  fs::path ckpt = ckpt_flag;
  CommonFlags g = f;
  const fs::path out = f.out;
  GANMASK_REQUIRE(split == "val" || split == "train", ConfigError, "--split: expected val or train, got '", split, "'");
  if (ckpt.empty()) ckpt = out / "final.ckpt";
  if (g.config.empty() && fs::exists(out / kResolvedConfigName)) g.config = (out / kResolvedConfigName).string();
  const auto cfg = resolve(g);
  if (!fs::exists(ckpt)) {
    std::cerr << "error: checkpoint '" << ckpt.string() << "' does not exist\n";
    return 1;
  }
  const auto rep = eval_checkpoint(cfg, ckpt, split == "val", overlays > 0);
  fs::create_directories(out);
  nlohmann::ordered_json j;
  const auto kinds = iou_kind == "both" ? std::vector<std::string>{"box", "mask"} : std::vector<std::string>{iou_kind};
  for (const auto& k : kinds) {
    const bool box = parse_iou_kind(k) == IouKind::kBox;
    print_summary(box ? "bbox" : "segm", box ? rep.bbox : rep.segm);
    j[box ? "bbox" : "segm"] = to_json(box ? rep.bbox : rep.segm);
  }
  j["mean_mask_iou"] = rep.mean_mask_iou;
  j["mask_iou_count"] = rep.mask_iou_count;
  const std::string name = "eval_" + split + (iou_kind == "both" ? "" : "_" + iou_kind) + ".json";
  write_text(out / name, j.dump(2) + "\n");
  std::cout << "wrote " << (out / name).string() << "\n";
  if (overlays) {
    const auto data = dataset_split(cfg.data_seed, cfg.n_train, cfg.n_val, cfg.scene);
    const auto& scenes = split == "val" ? data.val : data.train;
    GANMASK_REQUIRE(overlays <= scenes.size(), ConfigError, "--overlays ", overlays, " exceeds the ", scenes.size(),
                    " scenes in the split");
    const auto dir = out / "overlays";
    fs::create_directories(dir);
    for (std::size_t i = 0; i < overlays; ++i) {
      char name_buf[32];
      std::snprintf(name_buf, sizeof name_buf, "%s_%03zu.png", split.c_str(), i);
      write_overlay(dir / name_buf, scenes[i], rep.detections[i], 0.5);
    }
    std::cout << "wrote " << overlays << " overlays to " << dir.string() << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& fault) {
  if (!fault.empty()) {
    GANMASK_REQUIRE(fault == "prroi", ConfigError, "--inject-fault: only 'prroi' is supported");
    set_prroi_box_grad_fault(1.1);
  }
  std::vector<std::string> failed;
  run_gradient_suite([&](const VerifyResult& r) {
    std::printf("%-40s max_rel_err %.3e  tol %.0e  checked %4zu  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                r.checked, r.passed ? "ok" : "FAIL");
    if (!r.passed) {
      failed.push_back(r.name);
      if (!r.detail.empty()) std::printf("    %s\n", r.detail.c_str());
    }
  });
  set_prroi_box_grad_fault(1.0);
  if (failed.empty()) {
    std::printf("all gradient checks passed\n");
    return 0;
  }
  std::printf("failed:");
  for (const auto& n : failed) std::printf(" %s", n.c_str());
  std::printf("\n");
  return 1;
}

int cmd_ablate(const CommonFlags& f, std::vector<std::uint64_t> seeds) {
  const auto cfg = resolve(f);
  if (seeds.empty()) seeds = {cfg.seed};
  if (f.overwrite) fs::remove_all(f.out);
  GANMASK_REQUIRE(!experiment_detail::non_empty_dir(f.out) || f.resume, ConfigError, "output directory '", f.out,
                  "' exists; pass --resume or --overwrite");
  fs::create_directories(f.out);
  write_text(fs::path(f.out) / kResolvedConfigName, resolved_config(cfg));
  auto opt = options(f);
  const auto cells = run_ablation(cfg, f.out, seeds, opt);
  write_ablation_tables(f.out, cells);
  std::cout << read_text(fs::path(f.out) / "ablation.csv");
  std::cout << "\ndelta against baseline_only over " << seeds.size() << " seed(s):\n"
            << read_text(fs::path(f.out) / "ablation_delta.csv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN-augmented Mask R-CNN at desk scale"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, ablate_flags;
  auto* train = app.add_subcommand("train", "train one configuration and evaluate it on the validation split");
  add_common(train, train_flags, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; optional overlay images");
  add_common(eval, eval_flags, false);
  std::string ckpt, iou_kind = "both", split = "val";
  std::size_t overlays = 0;
  eval->add_option("--checkpoint", ckpt, "checkpoint file (default <out>/final.ckpt)");
  eval->add_option("--iou-kind", iou_kind, "box, mask or both")->check(CLI::IsMember({"box", "mask", "both"}));
  eval->add_option("--overlays", overlays, "number of overlay PNGs to write");
  eval->add_option("--split", split, "val or train");

  auto* grad = app.add_subcommand("gradcheck", "double-precision gradient verification suite");
  std::string fault;
  grad->add_option("--inject-fault", fault, "corrupt a backward pass to test the harness (prroi)");

  auto* ablate = app.add_subcommand("ablate", "disc_depth x loss_mode grid");
  add_common(ablate, ablate_flags, true);
  std::vector<std::uint64_t> seeds;
  ablate->add_option("--seeds", seeds, "seeds per cell (default: the config seed)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_flags, ckpt, iou_kind, overlays, split);
    if (*grad) return cmd_gradcheck(fault);
    if (*ablate) return cmd_ablate(ablate_flags, seeds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
