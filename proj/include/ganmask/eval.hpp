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
// COCO-protocol detection and segmentation metrics.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganmask/box.hpp"
#include "ganmask/synthdata.hpp"

namespace ganmask {

struct Detection {
  int class_id = 0;
  double score = 0;
  Box box;
  BinaryMask mask;  // image resolution
};

enum class IouKind { kBox, kMask };

inline IouKind parse_iou_kind(const std::string& s) {
  if (s == "box" || s == "bbox") return IouKind::kBox;
  if (s == "mask" || s == "segm") return IouKind::kMask;
  throw ConfigError("iou_kind: expected box or mask, got '" + s + "'");
}

// Empty union is defined as IoU 0.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  GANMASK_REQUIRE(a.height == b.height && a.width == b.width, DimensionError, "mask_iou: ", a.height, "x",
                  a.width, " vs ", b.height, "x", b.width);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

inline double detection_iou(const Detection& d, const Instance& g, IouKind kind) {
  return kind == IouKind::kBox ? box_iou(d.box, g.box) : mask_iou(d.mask, g.mask);
}

// Detections of one image sorted by descending score, ties kept in input order.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

struct MatchResult {
  std::size_t det = 0;
  std::optional<std::size_t> gt;
};

// Greedy matching in score order: each detection takes the highest-IoU
// unmatched gt of its class with IoU >= iou_thresh.
inline std::vector<MatchResult> match_detections(const std::vector<Detection>& dets, const std::vector<Instance>& gts,
                                                 double iou_thresh, IouKind kind) {
  std::vector<bool> taken(gts.size(), false);
  std::vector<MatchResult> out;
  for (std::size_t d : score_order(dets)) {
    MatchResult m{d, std::nullopt};
    double best = std::min(iou_thresh, 1 - 1e-10);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets[d].class_id) continue;
      const double iou = detection_iou(dets[d], gts[g], kind);
      if (iou < best) continue;
      best = iou;
      m.gt = g;
    }
    if (m.gt) taken[*m.gt] = true;
    out.push_back(m);
  }
  return out;
}

// One ranked detection in the precision-recall sweep.
struct RankedMatch {
  double score = 0;
  bool true_positive = false;
};

inline constexpr std::size_t kRecallPoints = 101;

// 101-point interpolated AP; nullopt when n_gt == 0.
inline std::optional<double> average_precision(std::vector<RankedMatch> matches, std::size_t n_gt) {
  if (n_gt == 0) return std::nullopt;
  std::stable_sort(matches.begin(), matches.end(),
                   [](const RankedMatch& a, const RankedMatch& b) { return a.score > b.score; });
  const std::size_t n = matches.size();
  std::vector<double> recall(n), precision(n);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (matches[i].true_positive ? tp : fp) += 1;
    recall[i] = tp / double(n_gt);
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0;
  for (std::size_t r = 0; r < kRecallPoints; ++r) {
    const double level = double(r) / double(kRecallPoints - 1);
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) total += precision[std::size_t(it - recall.begin())];
  }
  return total / double(kRecallPoints);
}

// COCO IoU thresholds 0.50:0.05:0.95, built like numpy.linspace.
inline std::array<double, 10> coco_iou_thresholds() {
  std::array<double, 10> t{};
  const double step = (0.95 - 0.5) / 9.0;
  for (std::size_t i = 0; i < 10; ++i) t[i] = 0.5 + double(i) * step;
  t[9] = 0.95;
  return t;
}

struct AreaRange {
  double lo = 0, hi = 1e10;
};

struct EvalConfig {
  std::size_t max_dets = 100;
  // Multiplies the 32^2 / 96^2 bucket edges; (side / 256)^2 rescales them for
  // images smaller than the usual benchmark resolution.
  double area_scale = 1.0;

  std::array<AreaRange, 4> ranges() const {
    const double s = 32.0 * 32.0 * area_scale, m = 96.0 * 96.0 * area_scale;
    return {AreaRange{0, 1e10}, AreaRange{0, s}, AreaRange{s, m}, AreaRange{m, 1e10}};
  }
};

struct APSummary {
  std::optional<double> ap, ap50, ap75, ap_s, ap_m, ap_l;
};

namespace eval_detail {

inline double det_area(const Detection& d, IouKind kind) {
  return kind == IouKind::kBox ? d.box.area() : double(d.mask.count());
}

struct ImageEval {
  std::vector<double> scores;
  std::vector<bool> matched, ignored;
  std::size_t n_gt = 0;  // non-ignored
};

// Single image, single class, single threshold and area range.
inline ImageEval evaluate_image(const std::vector<const Detection*>& dets, const std::vector<const Instance*>& gts,
                                double thr, const AreaRange& rng, IouKind kind, std::size_t max_dets) {
  ImageEval out;
  std::vector<std::size_t> gorder(gts.size());
  std::vector<bool> gignore(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double a = double(gts[g]->area);
    gignore[g] = a < rng.lo || a > rng.hi;
    if (!gignore[g]) ++out.n_gt;
  }
  std::iota(gorder.begin(), gorder.end(), 0);
  std::stable_sort(gorder.begin(), gorder.end(), [&](std::size_t a, std::size_t b) { return !gignore[a] && gignore[b]; });
  std::vector<std::size_t> dorder(dets.size());
  std::iota(dorder.begin(), dorder.end(), 0);
  std::stable_sort(dorder.begin(), dorder.end(), [&](std::size_t a, std::size_t b) { return dets[a]->score > dets[b]->score; });
  if (dorder.size() > max_dets) dorder.resize(max_dets);
  std::vector<bool> gtaken(gts.size(), false);
  for (std::size_t d : dorder) {
    double best = std::min(thr, 1 - 1e-10);
    long m = -1;
    for (std::size_t gi : gorder) {
      if (gtaken[gi]) continue;
      if (m >= 0 && !gignore[std::size_t(m)] && gignore[gi]) break;
      const double iou = detection_iou(*dets[d], *gts[gi], kind);
      if (iou < best) continue;
      best = iou;
      m = long(gi);
    }
    bool ign = false;
    if (m >= 0) {
      gtaken[std::size_t(m)] = true;
      ign = gignore[std::size_t(m)];
    } else {
      const double a = det_area(*dets[d], kind);
      ign = a < rng.lo || a > rng.hi;
    }
    out.scores.push_back(dets[d]->score);
    out.matched.push_back(m >= 0);
    out.ignored.push_back(ign);
  }
  return out;
}

inline std::optional<double> mean_defined(const std::vector<std::optional<double>>& v) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  if (!n) return std::nullopt;
  return s / double(n);
}

}  // namespace eval_detail

// Per-image detection and gt lists; classes 1..num_classes.
inline APSummary coco_ap_summary(const std::vector<std::vector<Detection>>& dets,
                                 const std::vector<std::vector<Instance>>& gts, IouKind kind, int num_classes,
                                 const EvalConfig& cfg = {}) {
  GANMASK_REQUIRE(dets.size() == gts.size(), ContractError, "coco_ap_summary: ", dets.size(), " detection lists for ",
                  gts.size(), " images");
  const auto thresholds = coco_iou_thresholds();
  const auto ranges = cfg.ranges();
  // ap[range][threshold][class]
  std::vector<std::vector<std::vector<std::optional<double>>>> ap(
      ranges.size(), std::vector<std::vector<std::optional<double>>>(thresholds.size()));
  for (int cls = 1; cls <= num_classes; ++cls) {
    std::vector<std::vector<const Detection*>> cd(dets.size());
    std::vector<std::vector<const Instance*>> cg(gts.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
      for (const auto& d : dets[i])
        if (d.class_id == cls) cd[i].push_back(&d);
      for (const auto& g : gts[i])
        if (g.class_id == cls) cg[i].push_back(&g);
    }
    for (std::size_t r = 0; r < ranges.size(); ++r)
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        std::vector<RankedMatch> ranked;
        std::size_t n_gt = 0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
          const auto ev = eval_detail::evaluate_image(cd[i], cg[i], thresholds[t], ranges[r], kind, cfg.max_dets);
          n_gt += ev.n_gt;
          for (std::size_t k = 0; k < ev.scores.size(); ++k)
            if (!ev.ignored[k]) ranked.push_back({ev.scores[k], ev.matched[k]});
        }
        ap[r][t].push_back(average_precision(std::move(ranked), n_gt));
      }
  }
  auto over = [&](std::size_t r, std::optional<std::size_t> t) {
    std::vector<std::optional<double>> vals;
    for (std::size_t ti = 0; ti < thresholds.size(); ++ti)
      if (!t || *t == ti) vals.insert(vals.end(), ap[r][ti].begin(), ap[r][ti].end());
    return eval_detail::mean_defined(vals);
  };
  APSummary s;
  s.ap = over(0, std::nullopt);
  s.ap50 = over(0, 0);
  s.ap75 = over(0, 5);
  s.ap_s = over(1, std::nullopt);
  s.ap_m = over(2, std::nullopt);
  s.ap_l = over(3, std::nullopt);
  return s;
}

inline nlohmann::json to_json(const APSummary& s) {
  auto v = [](const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); };
  return {{"AP", v(s.ap)}, {"AP50", v(s.ap50)}, {"AP75", v(s.ap75)},
          {"AP_S", v(s.ap_s)}, {"AP_M", v(s.ap_m)}, {"AP_L", v(s.ap_l)}};
}

inline void write_csv_header(std::ostream& os) { os << "AP,AP50,AP75,AP_S,AP_M,AP_L\n"; }

// Undefined buckets are written as empty cells.
inline void write_csv_row(std::ostream& os, const APSummary& s) {
  bool first = true;
  for (const auto& x : {s.ap, s.ap50, s.ap75, s.ap_s, s.ap_m, s.ap_l}) {
    if (!first) os << ",";
    first = false;
    if (x) os << *x;
  }
  os << "\n";
}

}  // namespace ganmask
