/* Copyright 2026 The UniTrack Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unitrack/correspondence.hpp"
#include "unitrack/errors.hpp"
#include "unitrack/geometry.hpp"
#include "unitrack/hungarian.hpp"

namespace unitrack::eval {

using corr::TaskKind;

struct MetricReport {
  TaskKind task = TaskKind::sot;
  std::map<std::string, double> metrics;

  double at(const std::string& key) const {
    auto it = metrics.find(key);
    require(it != metrics.end(), "MetricReport: no metric named " + key);
    return it->second;
  }

  /// One `key=value` per line, keys sorted, task first.
  std::string to_text() const {
    std::string out = "task=" + corr::to_string(task) + "\n";
    char buf[64];
    for (const auto& [k, v] : metrics) {
      std::snprintf(buf, sizeof buf, "%.10g", v);
      out += k + "=" + buf + "\n";
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["task"] = corr::to_string(task);
    j["metrics"] = metrics;
    return j;
  }
};

inline double box_iou(const Box& a, const Box& b) { return iou(a, b); }

inline double mask_iou(const Mask& a, const Mask& b) {
  require(a.height == b.height && a.width == b.width, "mask_iou: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += a.data[i] & b.data[i];
    uni += a.data[i] | b.data[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// SOT
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSuccessThresholds = 21;
inline constexpr double kPrecisionRadius = 20.0;

inline MetricReport sot_success_auc(const std::vector<Box>& pred, const std::vector<Box>& gt) {
  require(!gt.empty(), "sot_success_auc: empty sequence");
  require(pred.size() == gt.size(), "sot_success_auc: prediction and ground-truth lengths differ");
  const std::size_t n = gt.size();
  std::vector<double> ious(n);
  std::size_t close = 0;
  double iou_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ious[i] = box_iou(pred[i], gt[i]);
    iou_sum += ious[i];
    if (std::hypot(pred[i].cx - gt[i].cx, pred[i].cy - gt[i].cy) <= kPrecisionRadius) ++close;
  }
  MetricReport r{TaskKind::sot, {}};
  double auc = 0;
  for (std::size_t k = 0; k < kSuccessThresholds; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(kSuccessThresholds - 1);
    const auto hits = std::count_if(ious.begin(), ious.end(), [t](double v) { return v >= t; });
    auc += static_cast<double>(hits) / static_cast<double>(n);
  }
  r.metrics["auc"] = auc / kSuccessThresholds;
  r.metrics["precision"] = static_cast<double>(close) / static_cast<double>(n);
  r.metrics["mean_iou"] = iou_sum / static_cast<double>(n);
  r.metrics["frames"] = static_cast<double>(n);
  return r;
}

// ---------------------------------------------------------------------------
// VOS
// ---------------------------------------------------------------------------

namespace detail {

/// 3x3 dilation or erosion; pixels outside the frame count as background.
inline Mask morph(const Mask& m, bool dilate) {
  Mask out(m.height, m.width);
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      bool any = false, all = true;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long yy = y + dy, xx = x + dx;
          const bool v = yy >= 0 && yy < h && xx >= 0 && xx < w && m.at(yy, xx);
          any = any || v;
          all = all && v;
        }
      out.data[y * w + x] = (dilate ? any : all) ? 1 : 0;
    }
  return out;
}

}  // namespace detail

/// Morphological gradient (dilation minus erosion, 3x3).
inline Mask boundary(const Mask& m) {
  const Mask d = detail::morph(m, true), e = detail::morph(m, false);
  Mask out(m.height, m.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = d.data[i] & (1 - e.data[i]);
  return out;
}

/// Boundary F-measure with a 1-px match tolerance. Two empty boundaries
/// score 0, mirroring the empty-union rule of mask_iou.
inline double boundary_f(const Mask& pred, const Mask& gt) {
  require(pred.height == gt.height && pred.width == gt.width, "boundary_f: mask sizes differ");
  const Mask bp = boundary(pred), bg = boundary(gt);
  const Mask bp_tol = detail::morph(bp, true), bg_tol = detail::morph(bg, true);
  std::size_t np = 0, ng = 0, mp = 0, mg = 0;
  for (std::size_t i = 0; i < bp.data.size(); ++i) {
    np += bp.data[i];
    ng += bg.data[i];
    mp += bp.data[i] & bg_tol.data[i];
    mg += bg.data[i] & bp_tol.data[i];
  }
  if (np == 0 || ng == 0) return 0.0;
  const double p = static_cast<double>(mp) / static_cast<double>(np);
  const double r = static_cast<double>(mg) / static_cast<double>(ng);
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

inline MetricReport vos_jf(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  require(!gt.empty(), "vos_jf: empty sequence");
  require(pred.size() == gt.size(), "vos_jf: prediction and ground-truth lengths differ");
  double j = 0, f = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    j += mask_iou(pred[i], gt[i]);
    f += boundary_f(pred[i], gt[i]);
  }
  const double n = static_cast<double>(gt.size());
  MetricReport r{TaskKind::vos, {}};
  r.metrics["j"] = j / n;
  r.metrics["f"] = f / n;
  r.metrics["jf"] = (j / n + f / n) / 2;
  r.metrics["frames"] = n;
  return r;
}

// ---------------------------------------------------------------------------
// CLEAR MOT
// ---------------------------------------------------------------------------

struct IdBox {
  long id = 0;
  Box box;
};

struct IdMask {
  long id = 0;
  Mask mask;
};

struct ClearCounts {
  std::size_t gt = 0, pred = 0, matches = 0, fp = 0, fn = 0, ids = 0;
  double overlap_sum = 0;  // summed similarity of matched pairs
  std::size_t idtp = 0;
};

namespace detail {

/// Per-frame items reduced to ids plus a similarity callback.
struct FrameView {
  std::vector<long> gt_ids, pred_ids;
  std::function<double(std::size_t, std::size_t)> sim;  // (gt index, pred index)
};

inline void require_unique(const std::vector<long>& ids, const char* what) {
  require(std::set<long>(ids.begin(), ids.end()).size() == ids.size(), std::string(what) + ": duplicate id in a frame");
}

/// CLEAR accounting with the continuity rule: a ground-truth object keeps its
/// previous partner when the pair still clears the threshold; the rest are
/// matched by Hungarian assignment on 1 - similarity.
inline ClearCounts clear(const std::vector<FrameView>& frames, double threshold) {
  ClearCounts c;
  std::map<long, long> partner;                  // gt id -> last matched pred id
  std::map<std::pair<long, long>, std::size_t> pair_hits;  // (gt, pred) -> frames over threshold
  std::map<long, std::size_t> gt_total, pred_total;
  for (const auto& f : frames) {
    require_unique(f.gt_ids, "mot_clear");
    require_unique(f.pred_ids, "mot_clear");
    const std::size_t ng = f.gt_ids.size(), np = f.pred_ids.size();
    c.gt += ng;
    c.pred += np;
    Matrix sim(ng, np);
    for (std::size_t g = 0; g < ng; ++g)
      for (std::size_t p = 0; p < np; ++p) {
        sim(g, p) = f.sim(g, p);
        if (sim(g, p) >= threshold) ++pair_hits[{f.gt_ids[g], f.pred_ids[p]}];
      }
    for (long id : f.gt_ids) ++gt_total[id];
    for (long id : f.pred_ids) ++pred_total[id];

    std::vector<long> match(ng, -1);  // gt index -> pred index
    std::vector<bool> pred_used(np, false);
    for (std::size_t g = 0; g < ng; ++g) {
      auto it = partner.find(f.gt_ids[g]);
      if (it == partner.end()) continue;
      for (std::size_t p = 0; p < np; ++p)
        if (!pred_used[p] && f.pred_ids[p] == it->second && sim(g, p) >= threshold) {
          match[g] = static_cast<long>(p);
          pred_used[p] = true;
        }
    }
    std::vector<std::size_t> free_g, free_p;
    for (std::size_t g = 0; g < ng; ++g)
      if (match[g] < 0) free_g.push_back(g);
    for (std::size_t p = 0; p < np; ++p)
      if (!pred_used[p]) free_p.push_back(p);
    Matrix cost(free_g.size(), free_p.size());
    for (std::size_t a = 0; a < free_g.size(); ++a)
      for (std::size_t b = 0; b < free_p.size(); ++b) {
        const double s = sim(free_g[a], free_p[b]);
        cost(a, b) = s >= threshold ? 1.0 - s : track::kGateSentinel;
      }
    for (const auto& [a, b] : track::hungarian(cost)) {
      const std::size_t g = free_g[a], p = free_p[b];
      match[g] = static_cast<long>(p);
      pred_used[p] = true;
      auto it = partner.find(f.gt_ids[g]);
      if (it != partner.end() && it->second != f.pred_ids[p]) ++c.ids;
    }
    for (std::size_t g = 0; g < ng; ++g) {
      if (match[g] < 0) {
        ++c.fn;
        continue;
      }
      ++c.matches;
      c.overlap_sum += sim(g, static_cast<std::size_t>(match[g]));
      partner[f.gt_ids[g]] = f.pred_ids[static_cast<std::size_t>(match[g])];
    }
    c.fp += static_cast<std::size_t>(std::count(pred_used.begin(), pred_used.end(), false));
  }

  // IDF1: one-to-one id matching maximising identity true positives.
  std::vector<long> gids, pids;
  for (const auto& [id, _] : gt_total) gids.push_back(id);
  for (const auto& [id, _] : pred_total) pids.push_back(id);
  Matrix cost(gids.size(), pids.size());
  double top = 0;
  for (const auto& [_, v] : pair_hits) top = std::max(top, static_cast<double>(v));
  for (std::size_t a = 0; a < gids.size(); ++a)
    for (std::size_t b = 0; b < pids.size(); ++b) {
      auto it = pair_hits.find({gids[a], pids[b]});
      cost(a, b) = top - static_cast<double>(it == pair_hits.end() ? 0 : it->second);
    }
  for (const auto& [a, b] : track::hungarian(cost, std::numeric_limits<double>::max())) {
    auto it = pair_hits.find({gids[a], pids[b]});
    if (it != pair_hits.end()) c.idtp += it->second;
  }
  return c;
}

inline void fill_clear(MetricReport& r, const ClearCounts& c) {
  require(c.gt > 0, "mot_clear: ground truth has no objects");
  const double gt = static_cast<double>(c.gt);
  r.metrics["gt"] = gt;
  r.metrics["fp"] = static_cast<double>(c.fp);
  r.metrics["fn"] = static_cast<double>(c.fn);
  r.metrics["ids"] = static_cast<double>(c.ids);
  r.metrics["matches"] = static_cast<double>(c.matches);
  r.metrics["mota"] = 1.0 - static_cast<double>(c.fp + c.fn + c.ids) / gt;
  r.metrics["idf1"] = 2.0 * static_cast<double>(c.idtp) / static_cast<double>(c.gt + c.pred);
  r.metrics["idtp"] = static_cast<double>(c.idtp);
}

template <class Item>
std::vector<Item> sorted_by_id(std::vector<Item> v) {
  std::sort(v.begin(), v.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  return v;
}

}  // namespace detail

/// Frames are aligned by index; an absent frame is an empty vector.
inline MetricReport mot_clear(const std::vector<std::vector<IdBox>>& pred, const std::vector<std::vector<IdBox>>& gt,
                              double iou_threshold = 0.5) {
  require(pred.size() <= gt.size(), "mot_clear: predictions extend past the ground truth");
  std::vector<std::vector<IdBox>> ps(gt.size()), gs(gt.size());
  std::vector<detail::FrameView> frames(gt.size());
  for (std::size_t t = 0; t < gt.size(); ++t) {
    gs[t] = detail::sorted_by_id(gt[t]);
    ps[t] = t < pred.size() ? detail::sorted_by_id(pred[t]) : std::vector<IdBox>{};
    for (const auto& g : gs[t]) frames[t].gt_ids.push_back(g.id);
    for (const auto& p : ps[t]) frames[t].pred_ids.push_back(p.id);
    const auto* gp = &gs[t];
    const auto* pp = &ps[t];
    frames[t].sim = [gp, pp](std::size_t g, std::size_t p) { return box_iou((*gp)[g].box, (*pp)[p].box); };
  }
  const auto c = detail::clear(frames, iou_threshold);
  MetricReport r{TaskKind::mot, {}};
  detail::fill_clear(r, c);
  r.metrics["motp"] = c.matches ? c.overlap_sum / static_cast<double>(c.matches) : 0.0;
  return r;
}

inline MetricReport mots_smotsa(const std::vector<std::vector<IdMask>>& pred,
                                const std::vector<std::vector<IdMask>>& gt, double iou_threshold = 0.5) {
  require(pred.size() <= gt.size(), "mots_smotsa: predictions extend past the ground truth");
  std::vector<std::vector<IdMask>> ps(gt.size()), gs(gt.size());
  std::vector<detail::FrameView> frames(gt.size());
  for (std::size_t t = 0; t < gt.size(); ++t) {
    gs[t] = detail::sorted_by_id(gt[t]);
    ps[t] = t < pred.size() ? detail::sorted_by_id(pred[t]) : std::vector<IdMask>{};
    for (const auto& g : gs[t]) frames[t].gt_ids.push_back(g.id);
    for (const auto& p : ps[t]) frames[t].pred_ids.push_back(p.id);
    const auto* gp = &gs[t];
    const auto* pp = &ps[t];
    frames[t].sim = [gp, pp](std::size_t g, std::size_t p) { return mask_iou((*gp)[g].mask, (*pp)[p].mask); };
  }
  const auto c = detail::clear(frames, iou_threshold);
  MetricReport r{TaskKind::mots, {}};
  detail::fill_clear(r, c);
  const double gt_count = static_cast<double>(c.gt);
  r.metrics["smotsa"] = (c.overlap_sum - static_cast<double>(c.fp) - static_cast<double>(c.ids)) / gt_count;
  r.metrics["motsa"] = r.metrics["mota"];
  r.metrics.erase("mota");
  return r;
}

}  // namespace unitrack::eval
