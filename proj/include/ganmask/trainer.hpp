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
// Alternating generator / discriminator optimization with SGD, a shared
// learning-rate schedule, checkpoints and a deterministic metrics log.

#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganmask/checkpoint.hpp"
#include "ganmask/config.hpp"
#include "ganmask/discriminators.hpp"
#include "ganmask/heads.hpp"
#include "ganmask/inference.hpp"
#include "ganmask/losses.hpp"

namespace ganmask {

struct LearningRates {
  double g = 0, d = 0;
};

// lr_g = base_lr * warmup * product of passed milestone factors; lr_d = lr_g * ratio.
inline LearningRates lr_schedule(std::size_t iter, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  for (const auto& m : cfg.lr_milestones)
    if (iter >= m.iter) lr *= m.factor;
  if (cfg.warmup_iters > 0 && iter < cfg.warmup_iters)
    lr *= (1.0 + double(iter)) / double(cfg.warmup_iters);
  return {lr, lr * cfg.disc_lr_ratio};
}

// One iteration's worth of inputs and targets.
template <typename T>
struct TrainBatch {
  std::vector<const Scene*> scenes;
  Tensor<T> images;
  std::vector<Proposal> proposals;
  std::vector<RoiRef> refs;
  std::vector<Box> boxes;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> positives;  // rows of positive proposals
  std::vector<T> delta_targets;        // [P,4]
  std::vector<T> mask_targets;         // [P,M,M]
  std::vector<int> pos_classes;
  std::vector<std::size_t> adv;        // indices into positives used by adversarial terms
  std::vector<Box> adv_gt_boxes;
};

template <typename T>
TrainBatch<T> make_batch(const std::vector<Scene>& data, const TrainConfig& cfg, std::mt19937_64& rng) {
  TrainBatch<T> b;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const std::size_t m = cfg.generator.mask_size;
  while (b.scenes.size() < cfg.batch_size) {
    const Scene& s = data[pick(rng)];
    auto props = sample_proposals(s.instances, cfg.jitter, rng, double(s.image.dim(2)), double(s.image.dim(1)),
                                  cfg.generator.strides.size());
    if (!props) continue;
    const std::size_t image = b.scenes.size();
    b.scenes.push_back(&s);
    for (const auto& p : *props) {
      const std::size_t row = b.proposals.size();
      b.proposals.push_back(p);
      b.refs.push_back({image, std::size_t(p.assigned_level)});
      b.boxes.push_back(p.box);
      b.labels.push_back(std::size_t(p.label));
      if (p.matched_gt) {
        const Instance& gt = s.instances[std::size_t(*p.matched_gt)];
        b.positives.push_back(row);
        for (double d : encode_box(gt.box, p.box)) b.delta_targets.push_back(static_cast<T>(d));
        const auto mt = mask_target<T>(gt.mask, p.box, m);
        b.mask_targets.insert(b.mask_targets.end(), mt.begin(), mt.end());
        b.pos_classes.push_back(gt.class_id);
      }
    }
  }
  b.images = image_batch<T>(b.scenes);
  std::vector<std::size_t> order(b.positives.size());
  std::iota(order.begin(), order.end(), 0);
  if (cfg.adv_max_rois > 0 && order.size() > cfg.adv_max_rois) {
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(cfg.adv_max_rois);
    std::sort(order.begin(), order.end());
  }
  b.adv = order;
  for (std::size_t k : b.adv) {
    const auto& p = b.proposals[b.positives[k]];
    b.adv_gt_boxes.push_back(b.scenes[b.refs[b.positives[k]].image]->instances[std::size_t(*p.matched_gt)].box);
  }
  return b;
}

template <typename T>
struct TrainState {
  TrainConfig cfg;
  Generator<T> gen;
  BoxDiscriminator<T> boxd;
  MaskDiscriminator<T> maskd;
  std::size_t next_iter = 0;
  double lr_scale_g = 1, lr_scale_d = 1;
  bool halved_g = false, halved_d = false;

  explicit TrainState(const TrainConfig& c)
      : cfg(c), gen(c.generator), boxd(c.discriminator()), maskd(c.discriminator()) {}

  ParamRefs<T> gen_params() { return gen.params(); }
  ParamRefs<T> disc_params() {
    auto p = boxd.params();
    for (auto* q : maskd.params()) p.push_back(q);
    return p;
  }
};

template <typename T>
struct StepStats {
  LossBatch losses;
  double d_real = 0, d_fake = 0;  // mean box-D scores, D step
  bool skipped = false;
};

namespace train_detail {

template <typename T>
struct GeneratorPass {
  PyramidFeatures<T> pyr;
  BoxHeadResult<T> box;
  Tensor<T> pos_deltas;       // [P,4]
  Tensor<T> pos_mask_logits;  // [P,1,M,M] gt-class channel
};

template <typename T>
GeneratorPass<T> generator_pass(const Generator<T>& gen, const TrainBatch<T>& b) {
  GeneratorPass<T> out;
  out.pyr = gen.backbone(b.images);
  out.box = gen.box_head(out.pyr, b.refs, boxes_tensor<T>(b.boxes));
  if (!b.positives.empty()) {
    out.pos_deltas = index_rows(out.box.deltas, b.positives);
    std::vector<RoiRef> prefs;
    std::vector<Box> pboxes;
    for (std::size_t r : b.positives) {
      prefs.push_back(b.refs[r]);
      pboxes.push_back(b.boxes[r]);
    }
    out.pos_mask_logits = select_channel(gen.mask_head(out.pyr, prefs, boxes_tensor<T>(pboxes)), class_channels(b.pos_classes));
  }
  return out;
}

// Adversarial-subset views of the batch.
template <typename T>
struct AdvViews {
  std::vector<RoiRef> refs;
  std::vector<Box> proposal_boxes;
  std::vector<std::size_t> pos_rows;  // rows into the positive tensors
  Tensor<T> real_masks;               // [N,1,M,M]
};

template <typename T>
AdvViews<T> adv_views(const TrainBatch<T>& b, std::size_t m) {
  AdvViews<T> v;
  v.real_masks = Tensor<T>(Shape{b.adv.size(), 1, m, m});
  for (std::size_t i = 0; i < b.adv.size(); ++i) {
    const std::size_t row = b.positives[b.adv[i]];
    v.refs.push_back(b.refs[row]);
    v.proposal_boxes.push_back(b.boxes[row]);
    v.pos_rows.push_back(b.adv[i]);
    std::copy_n(b.mask_targets.begin() + long(b.adv[i] * m * m), m * m, v.real_masks.values().begin() + long(i * m * m));
  }
  return v;
}

template <typename T>
Tensor<T> mask_disc_fake(const Tensor<T>& logits, bool use_sigmoid) {
  return use_sigmoid ? sigmoid(logits) : logits;
}

template <typename T>
double mean_of(const Tensor<T>& t) {
  double s = 0;
  for (T v : t.values()) s += double(v);
  return t.numel() ? s / double(t.numel()) : 0.0;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

// Finite boxes [N,4] with positive width and height.
template <typename T>
bool usable_boxes(const Tensor<T>& boxes) {
  if (!all_finite(boxes)) return false;
  for (std::size_t i = 0; i < boxes.dim(0); ++i)
    if (!(boxes[i * 4 + 2] > boxes[i * 4] && boxes[i * 4 + 3] > boxes[i * 4 + 1])) return false;
  return true;
}

template <typename T>
bool handle_non_finite(double loss, bool& halved, double& scale, const char* who,
                       const char* what = "loss non-finite") {
  if (std::isfinite(loss)) return false;
  GANMASK_REQUIRE(!halved, NonFiniteError, who, " ", what, " again after halving the learning rate");
  halved = true;
  scale *= 0.5;
  std::cerr << "warning: " << who << " " << what << "; skipping step and halving its learning rate\n";
  return true;
}

}  // namespace train_detail

// Generator frozen and evaluated without a graph; box and mask critic
// losses stepped on the discriminator parameters only.
template <typename T>
StepStats<T> train_step_discriminator(const TrainBatch<T>& b, TrainState<T>& st, std::size_t iter) {
  using namespace train_detail;
  StepStats<T> out;
  out.losses.n = b.adv.size();
  if (st.cfg.loss_mode == LossMode::kBaselineOnly || b.adv.size() < 2) {
    out.skipped = true;
    return out;
  }
  auto gp = st.gen_params();
  auto dp = st.disc_params();
  set_trainable(gp, false);
  set_trainable(dp, true);
  const std::size_t m = st.cfg.generator.mask_size;
  const auto v = adv_views(b, m);

  Tensor<T> fake_boxes, fake_masks;
  PyramidFeatures<T> pyr;
  {
    NoGradGuard guard;
    auto pass = generator_pass(st.gen, b);
    pyr = pass.pyr;
    fake_boxes = decode_boxes(index_rows(pass.pos_deltas, v.pos_rows), v.proposal_boxes);
    fake_masks = mask_disc_fake(index_rows(pass.pos_mask_logits, v.pos_rows), st.cfg.mask_disc_sigmoid);
  }
  const auto skip_non_finite = [&] {
    handle_non_finite<T>(std::numeric_limits<double>::quiet_NaN(), st.halved_d, st.lr_scale_d, "discriminator");
    zero_grads(dp);
    out.skipped = true;
    return out;
  };
  // A diverged generator is left to its own step's guard.
  if (!usable_boxes(fake_boxes) || !all_finite(fake_masks)) {
    out.skipped = true;
    return out;
  }
  const auto real_in = prepare_box_disc_input(pyr.levels, pyr.strides, v.refs, boxes_tensor<T>(b.adv_gt_boxes), 28);
  const auto fake_in = prepare_box_disc_input(pyr.levels, pyr.strides, v.refs, fake_boxes, 28);
  const auto s_real = st.boxd.forward(real_in, NormMode::kTrain);
  const auto s_fake = st.boxd.forward(fake_in, NormMode::kTrain);
  if (!all_finite(s_real) || !all_finite(s_fake)) return skip_non_finite();
  auto l_db = adv_box_discriminator_loss(s_real, s_fake);

  const auto roi = pool_rois(pyr.levels, pyr.strides, v.refs, boxes_tensor<T>(v.proposal_boxes), 28);
  const auto f_real = st.maskd.forward(mul_channel_broadcast(v.real_masks, roi), NormMode::kTrain);
  const auto f_fake = st.maskd.forward(mul_channel_broadcast(fake_masks, roi), NormMode::kTrain);
  auto l_gm = adv_mask_generator_loss(f_real.concat, f_fake.concat);
  auto l_dm = adv_mask_discriminator_loss(l_gm);
  auto total = total_discriminator_loss<T>(l_db, l_dm, st.cfg.weights);

  out.losses.l_adv_db = double(l_db.item());
  out.losses.l_adv_dm = double(l_dm.item());
  out.losses.l_adv_gm = double(l_gm.item());
  out.d_real = mean_of(s_real);
  out.d_fake = mean_of(s_fake);
  if (handle_non_finite<T>(double(total.item()), st.halved_d, st.lr_scale_d, "discriminator")) {
    zero_grads(dp);
    out.skipped = true;
    return out;
  }
  backward(total);
  sgd_step(dp, lr_schedule(iter, st.cfg).d * st.lr_scale_d, st.cfg.momentum, st.cfg.weight_decay,
           MissingGrad::kSkip);
  return out;
}

// Discriminators frozen (parameters and running statistics); generator
// total per loss mode stepped on the generator parameters only.
template <typename T>
StepStats<T> train_step_generator(const TrainBatch<T>& b, TrainState<T>& st, std::size_t iter) {
  using namespace train_detail;
  StepStats<T> out;
  auto gp = st.gen_params();
  auto dp = st.disc_params();
  set_trainable(dp, false);
  set_trainable(gp, true);
  const std::size_t m = st.cfg.generator.mask_size;
  const auto mode = st.cfg.loss_mode;

  auto pass = generator_pass(st.gen, b);
  auto base = baseline_losses(pass.box.class_logits, b.labels, pass.pos_deltas, b.delta_targets,
                              pass.pos_mask_logits, b.mask_targets, static_cast<T>(st.cfg.smooth_l1_beta));
  if (base.no_positives) std::cerr << "warning: iteration " << iter << " has no positive proposals\n";
  GeneratorTerms<T> terms{base.l_cls, base.l_bbox, base.l_mask, std::nullopt, std::nullopt};
  out.losses.n = b.adv.size();
  out.losses.l_cls = double(base.l_cls.item());
  out.losses.l_bbox = double(base.l_bbox.item());
  out.losses.l_mask = double(base.l_mask.item());

  const bool base_finite =
      std::isfinite(out.losses.l_cls) && std::isfinite(out.losses.l_bbox) && std::isfinite(out.losses.l_mask);
  if (mode != LossMode::kBaselineOnly) {
    if (b.adv.size() >= 2 && base_finite) {
      const auto v = adv_views(b, m);
      const auto pyr = pass.pyr.detached();
      const auto boxes = decode_boxes(index_rows(pass.pos_deltas, v.pos_rows), v.proposal_boxes);
      if (!usable_boxes(boxes)) {
        handle_non_finite<T>(std::numeric_limits<double>::quiet_NaN(), st.halved_g, st.lr_scale_g, "generator",
                             "predicted boxes degenerate or non-finite");
        zero_grads(gp);
        out.skipped = true;
        return out;
      }
      const auto s_fake = st.boxd.forward(prepare_box_disc_input(pyr.levels, pyr.strides, v.refs, boxes, 28),
                                          NormMode::kTrain, false);
      terms.l_adv_gb = adv_box_generator_loss(s_fake);
      const auto roi = pool_rois(pyr.levels, pyr.strides, v.refs, boxes_tensor<T>(v.proposal_boxes), 28);
      const auto fake = mask_disc_fake(index_rows(pass.pos_mask_logits, v.pos_rows), st.cfg.mask_disc_sigmoid);
      const auto f_fake = st.maskd.forward(mul_channel_broadcast(fake, roi), NormMode::kTrain, false);
      Tensor<T> f_real;
      {
        NoGradGuard guard;
        f_real = st.maskd.forward(mul_channel_broadcast(v.real_masks, roi), NormMode::kTrain, false).concat;
      }
      terms.l_adv_gm = adv_mask_generator_loss(f_real, f_fake.concat);
      out.losses.l_adv_gb = double(terms.l_adv_gb->item());
      out.losses.l_adv_gm = double(terms.l_adv_gm->item());
    } else {
      terms.l_adv_gb = Tensor<T>::scalar(0);
      terms.l_adv_gm = Tensor<T>::scalar(0);
    }
  }
  auto total = total_generator_loss(terms, mode, st.cfg.weights);
  if (handle_non_finite<T>(double(total.item()), st.halved_g, st.lr_scale_g, "generator")) {
    zero_grads(gp);
    out.skipped = true;
    return out;
  }
  backward(total);
  sgd_step(gp, lr_schedule(iter, st.cfg).g * st.lr_scale_g, st.cfg.momentum, st.cfg.weight_decay,
           MissingGrad::kSkip);
  return out;
}

// Per-iteration RNG: batches depend only on (seed, iter), so resumed runs
// replay the same data order.
inline std::mt19937_64 iteration_rng(std::uint64_t seed, std::size_t iter) {
  return std::mt19937_64(mix_seed(seed, 0x5EED0000ull + iter));
}

struct IterationRecord {
  std::size_t iter = 0;
  LearningRates lr;
  LossBatch losses;
  double d_real = 0, d_fake = 0;
  double wall_time = 0;
};

inline nlohmann::ordered_json to_json(const IterationRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["lr_g"] = r.lr.g;
  j["lr_d"] = r.lr.d;
  j["l_cls"] = r.losses.l_cls;
  j["l_bbox"] = r.losses.l_bbox;
  j["l_mask"] = r.losses.l_mask;
  j["l_adv_gb"] = r.losses.l_adv_gb;
  j["l_adv_gm"] = r.losses.l_adv_gm;
  j["l_adv_db"] = r.losses.l_adv_db;
  j["l_adv_dm"] = r.losses.l_adv_dm;
  j["n_adv"] = r.losses.n;
  j["d_real"] = r.d_real;
  j["d_fake"] = r.d_fake;
  return j;
}

template <typename T>
void save_state(const std::filesystem::path& path, TrainState<T>& st) {
  auto entries = st.gen.store().export_state("gen.");
  for (auto& e : st.boxd.store().export_state("boxd.")) entries.push_back(std::move(e));
  for (auto& e : st.maskd.store().export_state("maskd.")) entries.push_back(std::move(e));
  entries.push_back({"meta.next_iter", Shape{1}, {static_cast<T>(st.next_iter)}});
  entries.push_back({"meta.lr_scale", Shape{2}, {static_cast<T>(st.lr_scale_g), static_cast<T>(st.lr_scale_d)}});
  entries.push_back({"meta.halved", Shape{2}, {T(st.halved_g), T(st.halved_d)}});
  const auto tmp = path.string() + ".tmp";
  save_checkpoint<T>(tmp, entries);
  std::filesystem::rename(tmp, path);
}

template <typename T>
void load_state(const std::filesystem::path& path, TrainState<T>& st) {
  const auto entries = load_checkpoint<T>(path.string());
  st.gen.store().import_state("gen.", entries);
  st.boxd.store().import_state("boxd.", entries);
  st.maskd.store().import_state("maskd.", entries);
  for (const auto& e : entries) {
    if (e.name == "meta.next_iter") st.next_iter = static_cast<std::size_t>(e.values.at(0));
    if (e.name == "meta.lr_scale") {
      st.lr_scale_g = double(e.values.at(0));
      st.lr_scale_d = double(e.values.at(1));
    }
    if (e.name == "meta.halved") {
      st.halved_g = e.values.at(0) != T(0);
      st.halved_d = e.values.at(1) != T(0);
    }
  }
}

struct TrainHooks {
  std::filesystem::path out_dir;  // empty: no files
  bool track_freeze = false;
  std::function<void(const IterationRecord&)> on_iter;
  std::size_t checkpoint_every = 0;  // > 0: last.ckpt every that many iterations
};

struct TrainSummary {
  std::size_t iterations_run = 0;
  double frozen_gen_drift = 0;   // summed over discriminator steps
  double frozen_disc_drift = 0;  // summed over generator steps
  double seconds = 0;
};

// Runs iterations [st.next_iter, total_iters): disc_steps discriminator steps
// then one generator step each. Appends metrics.jsonl (and timing.jsonl with
// wall-clock times) and writes iter_<k>.ckpt at milestones and final.ckpt.
template <typename T>
TrainSummary run_training(TrainState<T>& st, const std::vector<Scene>& train, const TrainHooks& hooks = {}) {
  GANMASK_REQUIRE(!train.empty(), ConfigError, "run_training: empty training set");
  st.cfg.validate();
  TrainSummary sum;
  std::ofstream metrics, timing;
  if (!hooks.out_dir.empty()) {
    std::filesystem::create_directories(hooks.out_dir);
    metrics.open(hooks.out_dir / "metrics.jsonl", std::ios::app);
    timing.open(hooks.out_dir / "timing.jsonl", std::ios::app);
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t iter = st.next_iter; iter < st.cfg.total_iters; ++iter) {
    auto rng = iteration_rng(st.cfg.seed, iter);
    const auto batch = make_batch<T>(train, st.cfg, rng);
    IterationRecord rec;
    rec.iter = iter;
    rec.lr = lr_schedule(iter, st.cfg);
    rec.lr.g *= st.lr_scale_g;
    rec.lr.d *= st.lr_scale_d;

    std::vector<std::vector<T>> snap;
    auto gp = st.gen_params();
    auto dp = st.disc_params();
    for (std::size_t k = 0; k < st.cfg.disc_steps; ++k) {
      if (hooks.track_freeze) snap = snapshot_values(gp);
      const auto d = train_step_discriminator(batch, st, iter);
      if (hooks.track_freeze) sum.frozen_gen_drift += l1_distance(gp, snap);
      rec.losses.l_adv_db = d.losses.l_adv_db;
      rec.losses.l_adv_dm = d.losses.l_adv_dm;
      rec.d_real = d.d_real;
      rec.d_fake = d.d_fake;
    }
    if (hooks.track_freeze) snap = snapshot_values(dp);
    const auto g = train_step_generator(batch, st, iter);
    if (hooks.track_freeze) sum.frozen_disc_drift += l1_distance(dp, snap);
    rec.losses.n = g.losses.n;
    rec.losses.l_cls = g.losses.l_cls;
    rec.losses.l_bbox = g.losses.l_bbox;
    rec.losses.l_mask = g.losses.l_mask;
    rec.losses.l_adv_gb = g.losses.l_adv_gb;
    rec.losses.l_adv_gm = g.losses.l_adv_gm;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.next_iter = iter + 1;
    ++sum.iterations_run;

    if (metrics.is_open()) {
      metrics << to_json(rec).dump() << "\n";
      metrics.flush();
      timing << nlohmann::ordered_json{{"iter", iter}, {"wall_time", rec.wall_time}}.dump() << "\n";
    }
    if (hooks.on_iter) hooks.on_iter(rec);
    if (!hooks.out_dir.empty()) {
      for (const auto& ms : st.cfg.lr_milestones)
        if (ms.iter == st.next_iter) save_state(hooks.out_dir / ("iter_" + std::to_string(ms.iter) + ".ckpt"), st);
      if (hooks.checkpoint_every && st.next_iter % hooks.checkpoint_every == 0) {
        const auto tmp = hooks.out_dir / "last.ckpt.tmp";
        save_state(tmp, st);
        std::filesystem::rename(tmp, hooks.out_dir / "last.ckpt");
      }
    }
  }
  set_trainable(st.gen_params(), true);
  set_trainable(st.disc_params(), true);
  if (!hooks.out_dir.empty()) save_state(hooks.out_dir / "final.ckpt", st);
  sum.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sum;
}

}  // namespace ganmask
