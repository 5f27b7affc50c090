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
// Inference over scenes: proposals -> box head -> threshold + per-class NMS ->
// mask head on the kept boxes -> pasted image-resolution masks.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ganmask/config.hpp"
#include "ganmask/eval.hpp"
#include "ganmask/heads.hpp"

namespace ganmask {

// Greedy per-class NMS in score order; returns kept indices, at most max_keep.
inline std::vector<std::size_t> nms(const std::vector<Detection>& dets, double iou_thresh, std::size_t max_keep) {
  std::vector<std::size_t> kept;
  for (std::size_t d : score_order(dets)) {
    if (kept.size() >= max_keep) break;
    bool suppressed = false;
    for (std::size_t k : kept)
      if (dets[k].class_id == dets[d].class_id && box_iou(dets[k].box, dets[d].box) > iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Evaluation-time proposals of a scene: jittered gt plus background boxes,
// seeded by (eval_seed, scene seed).
inline std::vector<Proposal> eval_proposals(const Scene& s, const TrainConfig& cfg) {
  std::mt19937_64 rng(mix_seed(cfg.eval_seed, s.seed));
  auto p = sample_proposals(s.instances, cfg.jitter, rng, double(s.image.dim(2)), double(s.image.dim(1)),
                            cfg.generator.strides.size());
  return p ? *p : std::vector<Proposal>{};
}

template <typename T>
struct SceneOutputs {
  std::vector<Box> decoded;
  std::vector<int> predicted_class;  // argmax over foreground classes
  std::vector<double> score;         // softmax probability of that class
};

template <typename T>
SceneOutputs<T> run_box_head(const Generator<T>& gen, const PyramidFeatures<T>& pyr, std::size_t image,
                             const std::vector<Proposal>& props, double img_w, double img_h) {
  SceneOutputs<T> out;
  if (props.empty()) return out;
  std::vector<RoiRef> refs;
  std::vector<Box> boxes;
  for (const auto& p : props) {
    refs.push_back({image, std::size_t(p.assigned_level)});
    boxes.push_back(p.box);
  }
  const auto head = gen.box_head(pyr, refs, boxes_tensor<T>(boxes));
  const auto dec = decode_boxes(head.deltas, boxes);
  const std::size_t k1 = head.class_logits.dim(1);
  for (std::size_t i = 0; i < props.size(); ++i) {
    const T* row = head.class_logits.values().data() + i * k1;
    const double mx = double(*std::max_element(row, row + k1));
    double z = 0;
    for (std::size_t j = 0; j < k1; ++j) z += std::exp(double(row[j]) - mx);
    std::size_t best = 1;
    for (std::size_t j = 2; j < k1; ++j)
      if (row[j] > row[best]) best = j;
    out.predicted_class.push_back(int(best));
    out.score.push_back(std::exp(double(row[best]) - mx) / z);
    out.decoded.push_back(clamp_to_image(box_row(dec, i), img_w, img_h));
  }
  return out;
}

// Mask probabilities [N, M*M] of the given class channel for each box.
template <typename T>
std::vector<std::vector<T>> run_mask_head(const Generator<T>& gen, const PyramidFeatures<T>& pyr, std::size_t image,
                                          const std::vector<Box>& boxes, const std::vector<int>& classes) {
  std::vector<std::vector<T>> out;
  if (boxes.empty()) return out;
  std::vector<RoiRef> refs;
  for (const auto& b : boxes) refs.push_back({image, std::size_t(assign_level(b, pyr.levels.size()))});
  const auto logits = gen.mask_head(pyr, refs, boxes_tensor<T>(boxes));
  const auto sel = select_channel(logits, class_channels(classes));
  const std::size_t mm = sel.dim(2) * sel.dim(3);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    std::vector<T> p(mm);
    for (std::size_t j = 0; j < mm; ++j) p[j] = sigmoid_value(sel[i * mm + j]);
    out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
std::vector<Detection> detect(const Generator<T>& gen, const PyramidFeatures<T>& pyr, std::size_t image,
                              const Scene& scene, const TrainConfig& cfg) {
  const double w = double(scene.image.dim(2)), h = double(scene.image.dim(1));
  const auto props = eval_proposals(scene, cfg);
  const auto outs = run_box_head(gen, pyr, image, props, w, h);
  std::vector<Detection> cand;
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (outs.score[i] < cfg.score_threshold || !outs.decoded[i].valid()) continue;
    if (outs.decoded[i].width() < 1e-3 || outs.decoded[i].height() < 1e-3) continue;
    cand.push_back({outs.predicted_class[i], outs.score[i], outs.decoded[i], {}});
  }
  const auto keep = nms(cand, cfg.nms_iou, cfg.max_dets);
  std::vector<Detection> dets;
  std::vector<Box> boxes;
  std::vector<int> classes;
  for (std::size_t k : keep) {
    dets.push_back(cand[k]);
    boxes.push_back(cand[k].box);
    classes.push_back(cand[k].class_id);
  }
  const auto probs = run_mask_head(gen, pyr, image, boxes, classes);
  const std::size_t m = cfg.generator.mask_size;
  for (std::size_t i = 0; i < dets.size(); ++i)
    dets[i].mask = paste_mask<T>(probs[i], m, dets[i].box, scene.image.dim(1), scene.image.dim(2));
  return dets;
}

struct EvalReport {
  APSummary bbox, segm;
  double mean_mask_iou = 0;
  std::size_t mask_iou_count = 0;
  std::vector<std::vector<Detection>> detections;
};

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"bbox", to_json(r.bbox)}, {"segm", to_json(r.segm)}, {"mean_mask_iou", r.mean_mask_iou},
          {"mask_iou_count", r.mask_iou_count}};
}

// Box/mask AP over `scenes`, plus mean mask IoU: every positive eval proposal's
// decoded box gets the mask of its predicted class, compared with its gt mask.
template <typename T>
EvalReport evaluate_model(const Generator<T>& gen, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                          bool keep_detections = false) {
  NoGradGuard no_grad;
  EvalReport rep;
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Instance>> gts;
  double iou_sum = 0;
  for (const auto& scene : scenes) {
    const auto pyr = gen.backbone(image_batch<T>({&scene}));
    dets.push_back(detect(gen, pyr, 0, scene, cfg));
    gts.push_back(scene.instances);

    const double w = double(scene.image.dim(2)), h = double(scene.image.dim(1));
    std::vector<Proposal> pos;
    for (const auto& p : eval_proposals(scene, cfg))
      if (p.matched_gt) pos.push_back(p);
    const auto outs = run_box_head(gen, pyr, 0, pos, w, h);
    std::vector<Box> boxes;
    std::vector<int> classes;
    std::vector<int> gt_index;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      Box b = outs.decoded[i];
      if (b.width() < 1e-3 || b.height() < 1e-3) b = pos[i].box;
      boxes.push_back(b);
      classes.push_back(outs.predicted_class[i]);
      gt_index.push_back(*pos[i].matched_gt);
    }
    const auto probs = run_mask_head(gen, pyr, 0, boxes, classes);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto pasted = paste_mask<T>(probs[i], cfg.generator.mask_size, boxes[i], scene.image.dim(1), scene.image.dim(2));
      iou_sum += mask_iou(pasted, scene.instances[std::size_t(gt_index[i])].mask);
      ++rep.mask_iou_count;
    }
  }
  const auto ecfg = cfg.eval();
  rep.bbox = coco_ap_summary(dets, gts, IouKind::kBox, cfg.generator.num_classes, ecfg);
  rep.segm = coco_ap_summary(dets, gts, IouKind::kMask, cfg.generator.num_classes, ecfg);
  rep.mean_mask_iou = rep.mask_iou_count ? iou_sum / double(rep.mask_iou_count) : 0.0;
  if (keep_detections) rep.detections = std::move(dets);
  return rep;
}

}  // namespace ganmask
