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

// Toy two-stage trainer. Stage 1 fits the backbone, interaction, embedding
// and detection-head weights on alternating SOT-style and MOT-style frame
// pairs; stage 2 fits only the mask branch on frozen features.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unitrack/backbone_embed.hpp"
#include "unitrack/correspondence.hpp"
#include "unitrack/harness/sequence.hpp"
#include "unitrack/losses.hpp"
#include "unitrack/model.hpp"
#include "unitrack/numkit_grad.hpp"
#include "unitrack/unihead.hpp"

namespace unitrack::harness {

enum class Optimizer { sgd, adam };

inline Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw InvalidArgument("unknown optimizer '" + s + "'");
}

inline std::string to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

struct TrainConfig {
  double lr = 0.01;
  double mask_lr = 0.01;
  std::size_t stage1_steps = 1000;
  std::size_t stage2_steps = 300;
  std::uint64_t seed = 7;
  std::size_t pairs_per_task = 100;  // pairs of each kind in the fixed training pool
  std::size_t batch_pairs = 6;     // pairs drawn from the pool per step; 0 uses the whole pool
  std::size_t max_gap = 3;         // frames between reference and current
  double w_corr = 1.0;
  double w_det = 1.0;
  double clip_norm = 0.0;          // global gradient norm cap; 0 disables
  Optimizer optimizer = Optimizer::adam;
  bool cosine_decay = true;        // anneal the rate to zero over each stage
  bool train_backbone = true;      // false keeps the seeded backbone in stage 1
  ModelSpec model;

  void validate() const {
    require(lr >= 0 && mask_lr >= 0, "TrainConfig: learning rates must be non-negative");
    require(pairs_per_task >= 1 && max_gap >= 1, "TrainConfig: need at least one pair and a gap of one");
    require(clip_norm >= 0, "TrainConfig: clip_norm must be non-negative");
    model.validate();
  }
};

struct TraceEntry {
  int stage = 1;
  std::size_t step = 0;
  double loss = 0;  // mean over the step's pairs
  double corr = 0;  // stage 1 only
  double det = 0;   // stage 1 only
};

struct TrainResult {
  Model model;
  std::vector<TraceEntry> trace;
  // mask loss over the whole stage-2 pool before and after stage 2; zero when it is skipped
  double mask_loss_before = 0, mask_loss_after = 0;

  double first_loss(int stage) const {
    for (const auto& e : trace)
      if (e.stage == stage) return e.loss;
    throw InvalidArgument("TrainResult: no entries for stage " + std::to_string(stage));
  }
  double last_loss(int stage) const {
    for (auto it = trace.rbegin(); it != trace.rend(); ++it)
      if (it->stage == stage) return it->loss;
    throw InvalidArgument("TrainResult: no entries for stage " + std::to_string(stage));
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::vector<TraceEntry> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<TraceEntry>& trace() const { return trace_; }

 private:
  std::vector<TraceEntry> trace_;
};

/// Training sequences used when none are given.
inline std::vector<SequenceSpec> default_training_specs(std::uint64_t seed, std::size_t count = 24) {
  std::vector<SequenceSpec> out;
  for (std::size_t i = 0; i < count; ++i) {
    SequenceSpec s;
    s.frames = 12;
    s.num_objects = 1 + i % 3;
    s.seed = seed * 1000 + i + 1;
    out.push_back(s);
  }
  return out;
}

namespace detail {

enum class PairKind { sot, mot, vos, mots };

struct TrainPair {
  PairKind kind;
  std::size_t seq = 0, ref = 0, cur = 0;  // 0-based frames
  long target = 0;                        // sot / vos
};

inline const GtObject* find_object(const std::vector<GtObject>& objs, long id) {
  for (const auto& o : objs)
    if (o.id == id) return &o;
  return nullptr;
}

inline std::vector<long> common_ids(const SyntheticSequence& s, std::size_t a, std::size_t b) {
  std::vector<long> ids;
  for (const auto& o : s.gt[a])
    if (find_object(s.gt[b], o.id) && o.mask.area() > 0) ids.push_back(o.id);
  return ids;
}

inline std::vector<TrainPair> sample_pairs(const std::vector<SyntheticSequence>& seqs, PairKind a, PairKind b,
                                           std::size_t per_kind, std::size_t max_gap, Rng& rng) {
  std::vector<TrainPair> out;
  std::size_t next_seq = 0;
  for (std::size_t i = 0; i < 2 * per_kind; ++i) {
    const PairKind kind = i % 2 == 0 ? a : b;
    for (std::size_t attempt = 0;; ++attempt) {
      require(attempt < 1000, "train_toy: cannot sample training pairs from the given sequences");
      const std::size_t si = next_seq++ % seqs.size();
      const auto& s = seqs[si];
      if (s.frames.size() < 2) continue;
      const std::size_t gap = 1 + rng.index(std::min(max_gap, s.frames.size() - 1));
      const std::size_t ref = rng.index(s.frames.size() - gap);
      const auto ids = common_ids(s, ref, ref + gap);
      if (ids.empty()) continue;
      out.push_back(TrainPair{kind, si, ref, ref + gap, ids[rng.index(ids.size())]});
      break;
    }
  }
  return out;
}

/// Indices of the pairs used in one step: the whole pool, or `batch` draws
/// with replacement.
inline std::vector<std::size_t> draw_batch(std::size_t pool, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> out;
  if (batch == 0 || batch >= pool) {
    for (std::size_t i = 0; i < pool; ++i) out.push_back(i);
    return out;
  }
  for (std::size_t i = 0; i < batch; ++i) out.push_back(rng.index(pool));
  return out;
}

inline void scale_into(Weights& dst, const Weights& src, double k) {
  for (const auto& [name, t] : src) {
    auto& d = dst.slot(name, t).values();
    const auto& s = t.values();
    for (std::size_t i = 0; i < s.size(); ++i) d[i] += k * s[i];
  }
}

/// Plain gradient step on parameters accepted by `trainable`; returns false
/// when any updated weight became non-finite.
/// First-order update over the trainable subset. Plain SGD, or Adam with
/// bias-corrected moments kept per tensor.
class Stepper {
 public:
  Stepper(Optimizer kind, double lr, double clip_norm, std::function<bool(const std::string&)> trainable,
          std::size_t decay_steps = 0)
      : kind_(kind), base_lr_(lr), clip_(clip_norm), decay_steps_(decay_steps), trainable_(std::move(trainable)) {}

  /// Returns false when any updated weight is non-finite.
  bool step(Weights& w, const Weights& grads) {
    double norm2 = 0;
    for (const auto& [name, g] : grads)
      if (trainable_(name))
        for (double v : g.values()) norm2 += v * v;
    double gscale = 1.0;
    if (clip_ > 0 && std::sqrt(norm2) > clip_) gscale = clip_ / std::sqrt(norm2);
    lr_ = base_lr_;
    if (decay_steps_ > 0)
      lr_ *= 0.5 * (1 + std::cos(std::numbers::pi * static_cast<double>(t_) / static_cast<double>(decay_steps_)));
    ++t_;
    const double c1 = 1 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(kBeta2, static_cast<double>(t_));
    bool finite = true;
    for (const auto& [name, g] : grads) {
      if (!trainable_(name)) continue;
      auto& p = w.at(name).values();
      const auto& gv = g.values();
      if (kind_ == Optimizer::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          p[i] -= lr_ * gscale * gv[i];
          finite = finite && std::isfinite(p[i]);
        }
        continue;
      }
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = gscale * gv[i];
        m[i] = kBeta1 * m[i] + (1 - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1 - kBeta2) * gi * gi;
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
        finite = finite && std::isfinite(p[i]);
      }
    }
    return finite;
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Optimizer kind_;
  double base_lr_, lr_ = 0, clip_;
  std::size_t decay_steps_;
  std::function<bool(const std::string&)> trainable_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// Gradients of logits = a * b^T with respect to a and b.
inline std::pair<Matrix, Matrix> matmul_nt_backward(const Matrix& a, const Matrix& b, const Matrix& dl) {
  return {numkit::matmul(dl, b), numkit::matmul(numkit::transpose(dl), a)};
}

}  // namespace detail

struct Stage1Sample {
  double loss = 0, corr = 0, det = 0;
};

/// Stage-1 loss of one pair; accumulates parameter gradients into `grads`
/// when given. The target prior is treated as a constant by the detection
/// loss.
/// Gradients with respect to the reference and current pyramids.
struct PyramidGrads {
  std::array<Tensor, 3> ref, cur;
};

inline Stage1Sample stage1_pair_loss(const Model& m, const embed::FeaturePyramid& pr, const embed::FeaturePyramid& pc,
                                     const std::vector<GtObject>& gt_ref, const std::vector<GtObject>& gt_cur,
                                     bool sot, long target, const TrainConfig& cfg, Weights* grads,
                                     PyramidGrads* pgrads = nullptr) {
  const auto& w = m.weights;
  embed::InteractCache icache;
  const auto [e_ref, e_cur] = embed::interact_forward(pr.stride16(), pc.stride16(), m.spec.interaction, w, &icache);
  const std::size_t gh = e_cur.h, gw = e_cur.w;
  Matrix d_ref(e_ref.e.rows(), e_ref.e.cols()), d_cur(e_cur.e.rows(), e_cur.e.cols());
  loss::LossResult lc;
  std::vector<loss::GroundTruthBox> det_gts;
  corr::TargetPrior prior = corr::make_target_prior(std::nullopt, corr::TaskKind::mot, gh, gw);

  if (sot) {
    const GtObject* a = detail::find_object(gt_ref, target);
    const GtObject* b = detail::find_object(gt_cur, target);
    require(a && b, "stage1_pair_loss: target missing from a frame");
    const auto pcorr = corr::pixel_correspondence(e_cur, e_ref);
    const auto t_ref = corr::target_map_from_box(a->box, gh, gw);
    const auto t_gt = corr::target_map_from_box(b->box, gh, gw);
    const auto t_prop = corr::propagate(pcorr, t_ref);
    lc = loss::dice_loss(t_prop, t_gt);
    if (grads) {
      Matrix dc(pcorr.c.rows(), pcorr.c.cols());
      for (std::size_t i = 0; i < dc.rows(); ++i)
        for (std::size_t k = 0; k < dc.cols(); ++k) dc(i, k) = lc.grad[i] * t_ref[k];
      const Matrix dl = numkit::softmax_rows_backward(pcorr.c, dc, pcorr.temperature);
      std::tie(d_cur, d_ref) = detail::matmul_nt_backward(e_cur.e, e_ref.e, dl);
    }
    prior = corr::make_target_prior(t_prop, corr::TaskKind::sot, gh, gw);
    det_gts.push_back({b->box, b->class_id});
  } else {
    std::vector<Box> rb, cb;
    std::vector<long> rid, cid;
    for (const auto& o : gt_ref) {
      rb.push_back(o.box);
      rid.push_back(o.id);
    }
    for (const auto& o : gt_cur) {
      cb.push_back(o.box);
      cid.push_back(o.id);
      det_gts.push_back({o.box, o.class_id});
    }
    const auto ir = corr::extract_instance_embeddings(e_ref, rb);
    const auto ic = corr::extract_instance_embeddings(e_cur, cb);
    const auto inst = corr::instance_correspondence(ic, ir);
    if (!inst.empty) {
      lc = loss::contrastive_ce_loss(inst, corr::ground_truth_match(cid, rid));
      if (grads && !lc.flagged) {
        const Matrix dl(inst.c.rows(), inst.c.cols(), lc.grad);
        auto [dic, dir] = detail::matmul_nt_backward(ic.e, ir.e, dl);
        for (std::size_t i = 0; i < ic.count(); ++i)
          numkit::add_into(d_cur.row(ic.centers[i].row * gw + ic.centers[i].col), dic.row(i));
        for (std::size_t k = 0; k < ir.count(); ++k)
          numkit::add_into(d_ref.row(ir.centers[k].row * gw + ir.centers[k].col), dir.row(k));
      }
    }
  }

  const auto fused = head::fuse_pyramid(pc, prior);
  head::HeadCache hcache;
  const auto raws = head::head_forward(fused, w, &hcache);
  const auto ld = loss::detection_loss(raws, det_gts);
  if (grads) {
    for (auto& v : d_ref.data()) v *= cfg.w_corr;
    for (auto& v : d_cur.data()) v *= cfg.w_corr;
    std::array<Tensor, 2> d16;
    embed::interact_backward(icache, m.spec.interaction, w, d_ref, d_cur, *grads, pgrads ? &d16 : nullptr);
    std::vector<double> g = ld.grad;
    for (auto& v : g) v *= cfg.w_det;
    std::vector<Tensor> d_fused;
    head::head_backward(hcache, loss::split_like(g, raws), w, *grads, pgrads ? &d_fused : nullptr);
    if (pgrads) {
      // the prior is treated as a constant, so fusion passes gradients through
      *pgrads = PyramidGrads{};
      pgrads->ref[1] = std::move(d16[0]);
      for (std::size_t l = 0; l < 3; ++l) pgrads->cur[l] = std::move(d_fused[l]);
      numkit::add_into(pgrads->cur[1].values(), d16[1].values());
    }
  }
  const auto total = loss::stage1_loss(lc, ld, cfg.w_corr, cfg.w_det);
  return Stage1Sample{total.value, lc.value, ld.value};
}

/// Frozen inputs of the mask branch for one instance.
struct MaskSample {
  std::size_t context = 0;  // index into the shared per-frame contexts
  GridCell cell;
  double cx = 0, cy = 0;
  std::vector<double> gt;   // frame-size binary mask
};

struct MaskContextCache {
  head::FusedFeature fused8;
  Tensor reg_tower8;
};

/// Mean dice mask loss over the samples whose context is in `active` (all
/// contexts when empty); accumulates mask-branch gradients into `grads` when
/// given.
inline double stage2_loss(const Model& m, const std::vector<MaskContextCache>& contexts,
                          const std::vector<MaskSample>& samples, std::size_t frame_h, std::size_t frame_w,
                          Weights* grads, const std::vector<std::size_t>& active = {}) {
  const auto& w = m.weights;
  std::vector<bool> on(contexts.size(), active.empty());
  for (std::size_t c : active) on.at(c) = true;
  std::vector<head::MaskBranchCache> mcache(contexts.size());
  std::vector<Tensor> feats(contexts.size()), dfeats(contexts.size());
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    if (!on[c]) continue;
    feats[c] = head::mask_features(contexts[c].fused8.f, w, frame_h, frame_w, &mcache[c]);
    dfeats[c] = Tensor(feats[c].shape());
  }
  std::size_t count = 0;
  for (const auto& s : samples) count += on[s.context];
  require(count > 0, "stage2_loss: no mask samples");
  double total = 0;
  const double inv = 1.0 / static_cast<double>(count);
  for (const auto& s : samples) {
    if (!on[s.context]) continue;
    const auto& ctx = contexts[s.context];
    const auto theta = head::controller_params(ctx.reg_tower8, s.cell, w);
    head::DynamicCache dcache;
    const auto logits = head::dynamic_mask_logits(feats[s.context], theta, s.cx, s.cy, m.spec.dyn_width, &dcache);
    auto l = loss::mask_loss(logits, s.gt);
    total += l.value * inv;
    if (!grads) continue;
    for (auto& g : l.grad) g *= inv;
    const auto dtheta = head::dynamic_mask_backward(feats[s.context], theta, s.cx, s.cy, m.spec.dyn_width, dcache,
                                                    l.grad, &dfeats[s.context]);
    head::controller_backward(ctx.reg_tower8, s.cell, dtheta, w, *grads);
  }
  if (grads)
    for (std::size_t c = 0; c < contexts.size(); ++c)
      if (on[c]) head::mask_features_backward(mcache[c], dfeats[c], w, *grads);
  return total;
}

inline GridCell clamped_cell(const Box& b, std::size_t gh, std::size_t gw) {
  const GridCell c = corr::cell_of(std::max(0.0, b.cx), std::max(0.0, b.cy), embed::kEmbedStride);
  return GridCell{std::min(c.row, gh - 1), std::min(c.col, gw - 1)};
}

/// Two-stage toy training. Deterministic for a given config and input.
inline TrainResult train_toy(const std::vector<SyntheticSequence>& seqs, const TrainConfig& cfg,
                             const std::function<void(const TraceEntry&)>& on_step = {}) {
  cfg.validate();
  require(!seqs.empty(), "train_toy: no training sequences");
  const std::size_t H = seqs[0].height, W = seqs[0].width;
  for (const auto& s : seqs) require(s.height == H && s.width == W, "train_toy: sequences differ in frame size");

  TrainResult result{init_model(cfg.model, cfg.seed), {}};
  Model& m = result.model;
  Rng rng(cfg.seed ^ 0x5EEDull);

  std::map<std::pair<std::size_t, std::size_t>, embed::FeaturePyramid> pyramids;
  auto pyramid = [&](std::size_t si, std::size_t f) -> const embed::FeaturePyramid& {
    auto key = std::make_pair(si, f);
    auto it = pyramids.find(key);
    if (it == pyramids.end()) it = pyramids.emplace(key, embed::extract_pyramid(seqs[si].frames[f], m.weights, m.spec)).first;
    return it->second;
  };
  auto record = [&](const TraceEntry& e) {
    result.trace.push_back(e);
    if (on_step) on_step(e);
    if (!std::isfinite(e.loss)) throw TrainingDiverged("train_toy: loss is not finite", result.trace);
  };

  // stage 1
  using detail::PairKind;
  const auto pool1 = detail::sample_pairs(seqs, PairKind::sot, PairKind::mot, cfg.pairs_per_task, cfg.max_gap, rng);
  const bool tb = cfg.train_backbone;
  const auto stage1_trainable = [tb](const std::string& n) { return (tb || !is_backbone_param(n)) && !is_mask_param(n); };
  detail::Stepper stepper1(cfg.optimizer, cfg.lr, cfg.clip_norm, stage1_trainable,
                           cfg.cosine_decay ? cfg.stage1_steps : 0);
  for (std::size_t step = 0; step < cfg.stage1_steps; ++step) {
    Weights grads;
    TraceEntry e{1, step, 0, 0, 0};
    const auto batch = detail::draw_batch(pool1.size(), cfg.batch_pairs, rng);
    const double inv = 1.0 / static_cast<double>(batch.size());
    try {
      for (std::size_t bi : batch) {
        const auto& p = pool1[bi];
        Weights g;
        const auto& s = seqs[p.seq];
        Stage1Sample r;
        if (tb) {
          embed::BackboneCache cr, cc;
          const auto pr = embed::extract_pyramid(s.frames[p.ref], m.weights, m.spec, &cr);
          const auto pc = embed::extract_pyramid(s.frames[p.cur], m.weights, m.spec, &cc);
          PyramidGrads pg;
          r = stage1_pair_loss(m, pr, pc, s.gt[p.ref], s.gt[p.cur], p.kind == PairKind::sot, p.target, cfg, &g, &pg);
          embed::backbone_backward(cr, m.spec, m.weights, pg.ref, g);
          embed::backbone_backward(cc, m.spec, m.weights, pg.cur, g);
        } else {
          r = stage1_pair_loss(m, pyramid(p.seq, p.ref), pyramid(p.seq, p.cur), s.gt[p.ref], s.gt[p.cur],
                               p.kind == PairKind::sot, p.target, cfg, &g);
        }
        detail::scale_into(grads, g, inv);
        e.loss += r.loss * inv;
        e.corr += r.corr * inv;
        e.det += r.det * inv;
      }
    } catch (const InvalidArgument& err) {
      // shapes are fixed after the first step, so a later rejection comes from overflowed values
      if (step == 0) throw;
      throw TrainingDiverged(std::string("train_toy: non-finite values in stage 1: ") + err.what(), result.trace);
    }
    record(e);
    if (!stepper1.step(m.weights, grads))
      throw TrainingDiverged("train_toy: weights became non-finite in stage 1", result.trace);
  }

  // stage 2: everything but the mask branch is frozen, so its inputs are fixed
  pyramids.clear();
  const auto pool2 = detail::sample_pairs(seqs, PairKind::vos, PairKind::mots, cfg.pairs_per_task, cfg.max_gap, rng);
  std::vector<MaskContextCache> contexts;
  std::vector<MaskSample> samples;
  const std::size_t gh = H / embed::kEmbedStride, gw = W / embed::kEmbedStride;
  for (const auto& p : pool2) {
    const auto& s = seqs[p.seq];
    const auto& pr = pyramid(p.seq, p.ref);
    const auto& pc = pyramid(p.seq, p.cur);
    corr::TargetPrior prior = corr::make_target_prior(std::nullopt, corr::TaskKind::mots, gh, gw);
    std::vector<const GtObject*> targets;
    if (p.kind == PairKind::vos) {
      const auto [e_ref, e_cur] = embed::interact(pr.stride16(), pc.stride16(), m.spec.interaction, m.weights);
      const auto pcorr = corr::pixel_correspondence(e_cur, e_ref);
      const auto t_ref = corr::target_map_from_mask(detail::find_object(s.gt[p.ref], p.target)->mask);
      prior = corr::make_target_prior(corr::propagate(pcorr, t_ref), corr::TaskKind::vos, gh, gw);
      targets.push_back(detail::find_object(s.gt[p.cur], p.target));
    } else {
      for (const auto& o : s.gt[p.cur])
        if (o.mask.area() > 0) targets.push_back(&o);
    }
    if (targets.empty()) continue;
    MaskContextCache ctx;
    ctx.fused8 = head::fuse(pc.stride8(), prior);
    head::head_level_forward(ctx.fused8.f, 0, m.weights, nullptr, &ctx.reg_tower8);
    contexts.push_back(std::move(ctx));
    for (const GtObject* o : targets)
      samples.push_back(MaskSample{contexts.size() - 1, clamped_cell(o->box, gh, gw), o->box.cx, o->box.cy,
                                   std::vector<double>(o->mask.data.begin(), o->mask.data.end())});
  }
  detail::Stepper stepper2(cfg.optimizer, cfg.mask_lr, cfg.clip_norm, is_mask_param,
                           cfg.cosine_decay ? cfg.stage2_steps : 0);
  if (cfg.stage2_steps > 0) result.mask_loss_before = stage2_loss(m, contexts, samples, H, W, nullptr);
  for (std::size_t step = 0; step < cfg.stage2_steps; ++step) {
    Weights grads;
    std::vector<std::size_t> active;
    if (cfg.batch_pairs > 0 && cfg.batch_pairs < contexts.size()) active = detail::draw_batch(contexts.size(), cfg.batch_pairs, rng);
    double l = 0;
    try {
      l = stage2_loss(m, contexts, samples, H, W, &grads, active);
    } catch (const InvalidArgument& err) {
      if (step == 0) throw;
      throw TrainingDiverged(std::string("train_toy: non-finite values in stage 2: ") + err.what(), result.trace);
    }
    record(TraceEntry{2, step, l, 0, 0});
    if (!stepper2.step(m.weights, grads))
      throw TrainingDiverged("train_toy: weights became non-finite in stage 2", result.trace);
  }
  if (cfg.stage2_steps > 0) result.mask_loss_after = stage2_loss(m, contexts, samples, H, W, nullptr);
  return result;
}

}  // namespace unitrack::harness
