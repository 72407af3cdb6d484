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
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "unitrack/backbone_embed.hpp"
#include "unitrack/correspondence.hpp"
#include "unitrack/errors.hpp"
#include "unitrack/geometry.hpp"
#include "unitrack/hungarian.hpp"
#include "unitrack/kalman.hpp"
#include "unitrack/model.hpp"
#include "unitrack/unihead.hpp"

namespace unitrack::track {

using corr::TaskKind;
using embed::Frame;
using head::Detection;

struct TrackerConfig {
  head::HeadConfig head;
  double lambda_emb = 0.7;
  double gate_cosine = 0.3;  // pairs with zero IoU and cosine below this are gated
  std::size_t confirm_hits = 2;
  std::size_t max_misses = 5;
  double embedding_ema = 0.9;
  KalmanConfig kalman;
  std::optional<double> temperature;

  void validate() const {
    head.validate();
    require(lambda_emb >= 0 && lambda_emb <= 1, "TrackerConfig: lambda_emb outside [0,1]");
    require(embedding_ema >= 0 && embedding_ema < 1, "TrackerConfig: embedding_ema outside [0,1)");
    require(confirm_hits >= 1, "TrackerConfig: confirm_hits must be >= 1");
    require(!temperature || *temperature > 0, "TrackerConfig: temperature must be positive");
  }
};

enum class TrackStatus { tentative, confirmed, lost };

struct Trajectory {
  long id = 0;
  KalmanState kalman;
  std::vector<double> embedding;  // unit norm
  std::size_t hits = 0;
  std::size_t misses = 0;
  TrackStatus status = TrackStatus::tentative;
  Detection last;  // most recent matched detection
};

struct SotTarget {
  corr::TargetMap t_ref;
  Box last_box;
  std::optional<Mask> last_mask;
};

struct Counters {
  std::size_t backbone_passes = 0;
  std::size_t head_passes = 0;
  std::size_t mask_passes = 0;
};

struct TrackerState {
  TaskKind task = TaskKind::sot;
  std::shared_ptr<const Model> model;
  TrackerConfig cfg;
  std::size_t frame_index = 0;
  std::size_t height = 0, width = 0;

  // SOT / VOS: the reference pyramid stands in for E_ref, which depends on
  // the current frame through the interaction layers.
  std::optional<embed::FeaturePyramid> ref_pyramid;
  std::vector<SotTarget> targets;

  // MOT / MOTS
  std::vector<Trajectory> tracks;
  long next_id = 1;
  std::optional<embed::FeaturePyramid> prev_pyramid;
  std::vector<Detection> last_detections;

  Counters counters;
};

struct SotOutput {
  Box box;
  std::optional<Mask> mask;
  double score = 0;
};

struct TrackOutput {
  long id = 0;
  Detection det;
};

using TargetInit = std::variant<Box, Mask>;

// ---------------------------------------------------------------------------
// SOT / VOS
// ---------------------------------------------------------------------------

inline TrackerState init_sot(std::shared_ptr<const Model> model, const Frame& ref_frame,
                             const std::vector<TargetInit>& targets, TaskKind task, const TrackerConfig& cfg = {}) {
  require(model != nullptr, "init_sot: no model");
  require(corr::is_propagation_task(task), "init_sot: task must be sot or vos");
  require(!targets.empty(), "init_sot: no targets");
  cfg.validate();
  TrackerState s;
  s.task = task;
  s.model = std::move(model);
  s.cfg = cfg;
  s.height = ref_frame.height();
  s.width = ref_frame.width();
  const std::size_t gh = s.height / embed::kEmbedStride, gw = s.width / embed::kEmbedStride;
  for (const auto& init : targets) {
    SotTarget t;
    if (const Box* b = std::get_if<Box>(&init)) {
      require(b->w > 0 && b->h > 0, "init_sot: box must have positive size");
      t.t_ref = corr::target_map_from_box(*b, gh, gw);
      t.last_box = *b;
    } else {
      const Mask& m = std::get<Mask>(init);
      require(m.height == s.height && m.width == s.width, "init_sot: mask size differs from frame");
      t.t_ref = corr::target_map_from_mask(m);
      t.last_box = *m.bounding_box();
      t.last_mask = m;
    }
    s.targets.push_back(std::move(t));
  }
  s.ref_pyramid = embed::extract_pyramid(ref_frame, s.model->weights, s.model->spec);
  ++s.counters.backbone_passes;
  return s;
}

inline TrackerState init_sot(std::shared_ptr<const Model> model, const Frame& ref_frame, const TargetInit& target,
                             TaskKind task, const TrackerConfig& cfg = {}) {
  return init_sot(std::move(model), ref_frame, std::vector<TargetInit>{target}, task, cfg);
}

/// One output per initialised target, in initialisation order. All targets
/// share one backbone pass and one correspondence; each runs its own head.
inline std::vector<SotOutput> track_sot_all(TrackerState& s, const Frame& frame) {
  require(s.model && s.ref_pyramid && corr::is_propagation_task(s.task), "track_sot: state not initialised for sot/vos");
  require(frame.height() == s.height && frame.width() == s.width, "track_sot: frame size differs from reference");
  const Model& m = *s.model;
  const auto pyr = embed::extract_pyramid(frame, m.weights, m.spec);
  ++s.counters.backbone_passes;
  const auto [e_ref, e_cur] = embed::interact(s.ref_pyramid->stride16(), pyr.stride16(), m.spec.interaction, m.weights);
  const auto pc = corr::pixel_correspondence(e_cur, e_ref, s.cfg.temperature);
  const std::size_t gw = e_cur.w;

  std::vector<SotOutput> out;
  for (auto& target : s.targets) {
    const auto t_prop = corr::propagate(pc, target.t_ref);
    const auto prior = corr::make_target_prior(t_prop, s.task, e_cur.h, e_cur.w);
    const auto fused = head::fuse_pyramid(pyr, prior);
    const auto dets = head::detect(fused, m.weights, s.cfg.head);
    ++s.counters.head_passes;
    if (dets.empty()) {
      out.push_back(SotOutput{target.last_box, s.task == TaskKind::vos ? target.last_mask : std::nullopt, 0.0});
      continue;
    }
    const Detection& best = dets[head::pick_top1(dets, gw)];
    SotOutput o{best.box, std::nullopt, best.score};
    if (s.task == TaskKind::vos) {
      o.mask = head::mask_head(fused[0], best, m.weights, m.spec, s.cfg.head, s.height, s.width);
      ++s.counters.mask_passes;
      target.last_mask = o.mask;
    }
    target.last_box = best.box;
    out.push_back(std::move(o));
  }
  ++s.frame_index;
  return out;
}

inline SotOutput track_sot(TrackerState& s, const Frame& frame) { return track_sot_all(s, frame).at(0); }

// ---------------------------------------------------------------------------
// Association
// ---------------------------------------------------------------------------

struct AssociationCost {
  Matrix cost;               // N_det x M_track
  std::vector<bool> gated;   // row-major, same shape
};

struct AssocItem {
  Box box;
  std::vector<double> embedding;  // unit norm
};

inline double cosine_of_unit(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine: embedding sizes differ");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void require_unit(const std::vector<double>& e) {
  double n = 0;
  for (double v : e) n += v * v;
  require(std::abs(std::sqrt(n) - 1.0) <= 1e-6, "build_cost: embedding is not unit-normalised");
}

inline AssociationCost build_cost(const std::vector<AssocItem>& dets, const std::vector<AssocItem>& tracks,
                                  double lambda_emb, double gate_cosine = 0.3) {
  AssociationCost ac{Matrix(dets.size(), tracks.size()), std::vector<bool>(dets.size() * tracks.size(), false)};
  for (const auto& d : dets) require_unit(d.embedding);
  for (const auto& t : tracks) require_unit(t.embedding);
  for (std::size_t i = 0; i < dets.size(); ++i)
    for (std::size_t j = 0; j < tracks.size(); ++j) {
      const double cs = cosine_of_unit(dets[i].embedding, tracks[j].embedding);
      const double ov = iou(dets[i].box, tracks[j].box);
      const double c = lambda_emb * (1.0 - cs) + (1.0 - lambda_emb) * (1.0 - ov);
      const bool gate = ov == 0.0 && cs < gate_cosine;
      ac.gated[i * tracks.size() + j] = gate;
      ac.cost(i, j) = gate ? kGateSentinel : c;
    }
  return ac;
}

inline std::vector<double> unit(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) {
    std::fill(v.begin(), v.end(), 1.0 / std::sqrt(static_cast<double>(v.size())));
    return v;
  }
  for (double& x : v) x /= n;
  return v;
}

/// Lifecycle step on already detected and embedded objects: predict, match,
/// update, spawn, age. Returns confirmed tracks matched on this frame, by id.
inline std::vector<TrackOutput> associate(TrackerState& s, const std::vector<Detection>& dets,
                                          const std::vector<std::vector<double>>& embeddings) {
  require(dets.size() == embeddings.size(), "associate: detection and embedding counts differ");
  const auto& cfg = s.cfg;
  std::vector<AssocItem> di, ti;
  for (std::size_t i = 0; i < dets.size(); ++i) di.push_back({dets[i].box, unit(embeddings[i])});
  for (auto& t : s.tracks) ti.push_back({kalman_predict(t.kalman, cfg.kalman), t.embedding});
  const auto ac = build_cost(di, ti, cfg.lambda_emb, cfg.gate_cosine);
  const auto pairs = hungarian(ac.cost);

  std::vector<bool> det_used(dets.size(), false), track_hit(s.tracks.size(), false);
  for (const auto& [d, t] : pairs) {
    det_used[d] = true;
    track_hit[t] = true;
    Trajectory& tr = s.tracks[t];
    kalman_update(tr.kalman, dets[d].box, cfg.kalman);
    for (std::size_t k = 0; k < tr.embedding.size(); ++k)
      tr.embedding[k] = cfg.embedding_ema * tr.embedding[k] + (1 - cfg.embedding_ema) * di[d].embedding[k];
    tr.embedding = unit(std::move(tr.embedding));
    ++tr.hits;
    tr.misses = 0;
    tr.last = dets[d];
    if (tr.status != TrackStatus::tentative || tr.hits >= cfg.confirm_hits) tr.status = TrackStatus::confirmed;
  }

  std::vector<Trajectory> kept;
  for (std::size_t t = 0; t < s.tracks.size(); ++t) {
    Trajectory& tr = s.tracks[t];
    if (!track_hit[t]) {
      ++tr.misses;
      if (tr.status == TrackStatus::tentative) continue;
      tr.status = TrackStatus::lost;
      if (tr.misses > cfg.max_misses) continue;
    }
    kept.push_back(std::move(tr));
  }
  s.tracks = std::move(kept);

  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (det_used[d]) continue;
    Trajectory tr;
    tr.id = s.next_id++;
    tr.kalman = kalman_initiate(dets[d].box, cfg.kalman);
    tr.embedding = di[d].embedding;
    tr.hits = 1;
    tr.last = dets[d];
    tr.status = cfg.confirm_hits <= 1 ? TrackStatus::confirmed : TrackStatus::tentative;
    s.tracks.push_back(std::move(tr));
  }

  std::vector<TrackOutput> out;
  for (const auto& tr : s.tracks)
    if (tr.status == TrackStatus::confirmed && tr.misses == 0) out.push_back({tr.id, tr.last});
  std::sort(out.begin(), out.end(), [](const TrackOutput& a, const TrackOutput& b) { return a.id < b.id; });
  return out;
}

// ---------------------------------------------------------------------------
// MOT / MOTS
// ---------------------------------------------------------------------------

inline TrackerState init_mot(std::shared_ptr<const Model> model, TaskKind task, const TrackerConfig& cfg = {}) {
  require(model != nullptr, "init_mot: no model");
  require(task == TaskKind::mot || task == TaskKind::mots, "init_mot: task must be mot or mots");
  cfg.validate();
  TrackerState s;
  s.task = task;
  s.model = std::move(model);
  s.cfg = cfg;
  return s;
}

inline std::vector<TrackOutput> step_mot(TrackerState& s, const Frame& frame) {
  require(s.model && (s.task == TaskKind::mot || s.task == TaskKind::mots), "step_mot: state not initialised for mot/mots");
  if (s.frame_index == 0) {
    s.height = frame.height();
    s.width = frame.width();
  }
  require(frame.height() == s.height && frame.width() == s.width, "step_mot: frame size changed");
  const Model& m = *s.model;
  auto pyr = embed::extract_pyramid(frame, m.weights, m.spec);
  ++s.counters.backbone_passes;
  const auto& ref = s.prev_pyramid ? *s.prev_pyramid : pyr;
  const embed::Embedding e_cur = embed::interact(ref.stride16(), pyr.stride16(), m.spec.interaction, m.weights).second;

  const auto prior = corr::make_target_prior(std::nullopt, s.task, e_cur.h, e_cur.w);
  const auto fused = head::fuse_pyramid(pyr, prior);
  auto dets = head::detect(fused, m.weights, s.cfg.head);
  ++s.counters.head_passes;
  s.last_detections = dets;

  std::vector<std::vector<double>> emb;
  for (const auto& d : dets) {
    auto row = e_cur.e.row(d.embedding_cell.row * e_cur.w + d.embedding_cell.col);
    emb.emplace_back(row.begin(), row.end());
  }
  auto out = associate(s, dets, emb);

  if (s.task == TaskKind::mots && !out.empty()) {
    const auto ctx = head::mask_context(fused[0], m.weights, s.height, s.width);
    for (auto& o : out) {
      o.det.mask = head::mask_for(ctx, o.det, m.weights, m.spec, s.cfg.head);
      ++s.counters.mask_passes;
    }
  }
  s.prev_pyramid = std::move(pyr);
  ++s.frame_index;
  return out;
}

}  // namespace unitrack::track
