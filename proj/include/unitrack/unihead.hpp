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

// Unified head: broadcast-sum fusion of pyramid features with the target
// prior, an anchor-free detection head shared across pyramid levels, and a
// dynamic-convolution instance mask head. Fully convolutional, no RoI ops.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "unitrack/backbone_embed.hpp"
#include "unitrack/correspondence.hpp"
#include "unitrack/geometry.hpp"
#include "unitrack/numkit.hpp"
#include "unitrack/numkit_grad.hpp"
#include "unitrack/weights.hpp"

namespace unitrack::head {

using numkit::Matrix;
using numkit::Tensor;

// Raw output channel layout per cell.
inline constexpr std::size_t kDx = 0, kDy = 1, kPw = 2, kPh = 3, kObj = 4, kCls = 5;
inline constexpr double kLogSizeClamp = 10.0;

struct HeadConfig {
  double score_threshold = 0.30;
  double nms_iou_threshold = 0.65;
  double mask_binarize_threshold = 0.5;

  void validate() const {
    require(score_threshold > 0 && score_threshold < 1, "HeadConfig: score_threshold outside (0,1)");
    require(nms_iou_threshold > 0 && nms_iou_threshold < 1, "HeadConfig: nms_iou_threshold outside (0,1)");
    require(mask_binarize_threshold > 0 && mask_binarize_threshold < 1,
            "HeadConfig: mask_binarize_threshold outside (0,1)");
  }
};

struct FusedFeature {
  Tensor f;  // h x w x c
};

using InstanceMask = Mask;

struct Detection {
  Box box;
  double score = 0;
  int class_id = 0;
  GridCell embedding_cell;  // stride-8 cell holding the box centre
  std::size_t level = 0;    // pyramid level that produced it
  GridCell level_cell;
  std::optional<InstanceMask> mask;
};

inline std::size_t raw_channels(const ModelSpec& spec) { return kCls + spec.num_classes; }

inline void add_head_weights(Weights& w, const ModelSpec& spec, Rng& rng) {
  const std::size_t hw = spec.head_width;
  for (std::size_t l = 0; l < embed::kLevelStrides.size(); ++l)
    add_conv(w, "head.stem" + std::to_string(l), 1, spec.level_channels(l), hw, rng);
  add_conv(w, "head.cls_tower", 3, hw, hw, rng);
  add_conv(w, "head.reg_tower", 3, hw, hw, rng);
  add_conv(w, "head.cls_pred", 1, hw, spec.num_classes, rng);
  add_conv(w, "head.reg_pred", 1, hw, 4, rng);
  add_conv(w, "head.obj_pred", 1, hw, 1, rng);
  // start from a 1% foreground prior
  const double prior_bias = -std::log((1 - 0.01) / 0.01);
  for (double& b : w.at("head.cls_pred.b").values()) b = prior_bias;
  for (double& b : w.at("head.obj_pred.b").values()) b = prior_bias;
}

inline void add_mask_weights(Weights& w, const ModelSpec& spec, Rng& rng) {
  add_conv(w, "mask.feat1", 3, spec.level_channels(0), spec.mask_channels, rng);
  add_conv(w, "mask.feat2", 1, spec.mask_channels, spec.mask_channels, rng);
  add_conv(w, "mask.controller", 1, spec.head_width, spec.dynamic_param_count(), rng);
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

/// f'[i][j][ch] = f[i][j][ch] + p[i][j]; the prior is bilinearly resized to
/// the level's grid first. Zero prior entries leave the feature untouched.
inline FusedFeature fuse(const Tensor& f, const corr::TargetPrior& prior) {
  require(f.rank() == 3 && prior.p.rank() == 3 && prior.p.dim(2) == 1, "fuse: expected HWC feature and h x w x 1 prior");
  const std::size_t h = f.dim(0), w = f.dim(1), c = f.dim(2);
  const Tensor p = (prior.p.dim(0) == h && prior.p.dim(1) == w) ? prior.p : numkit::resize_bilinear(prior.p, h, w);
  require(p.dim(0) == h && p.dim(1) == w, "fuse: prior and feature grids differ after resize");
  FusedFeature out{f};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double pv = p.at(y, x, 0);
      if (pv == 0.0) continue;
      for (std::size_t ch = 0; ch < c; ++ch) out.f.at(y, x, ch) += pv;
    }
  return out;
}

inline std::vector<FusedFeature> fuse_pyramid(const embed::FeaturePyramid& pyr, const corr::TargetPrior& prior) {
  std::vector<FusedFeature> out;
  for (const auto& level : pyr.levels) out.push_back(fuse(level, prior));
  return out;
}

inline std::vector<FusedFeature> unfused(const embed::FeaturePyramid& pyr) {
  std::vector<FusedFeature> out;
  for (const auto& level : pyr.levels) out.push_back(FusedFeature{level});
  return out;
}

// ---------------------------------------------------------------------------
// Detection towers
// ---------------------------------------------------------------------------

struct LevelCache {
  Tensor input, stem, cls_tower, reg_tower;
};

struct HeadCache {
  std::vector<LevelCache> levels;
};

inline Tensor conv(const Tensor& x, const Weights& w, const std::string& name, std::size_t pad) {
  return numkit::conv2d(x, w.at(name + ".w"), 1, pad, w.at(name + ".b").data());
}

/// Raw per-cell outputs for one level, laid out h x w x (5 + classes).
inline Tensor head_level_forward(const Tensor& fused, std::size_t level, const Weights& w, LevelCache* cache,
                                 Tensor* reg_tower_out = nullptr) {
  Tensor s = numkit::relu(conv(fused, w, "head.stem" + std::to_string(level), 0));
  Tensor ct = numkit::relu(conv(s, w, "head.cls_tower", 1));
  Tensor rt = numkit::relu(conv(s, w, "head.reg_tower", 1));
  const Tensor reg = conv(rt, w, "head.reg_pred", 0);
  const Tensor obj = conv(rt, w, "head.obj_pred", 0);
  const Tensor cls = conv(ct, w, "head.cls_pred", 0);
  const std::size_t h = fused.dim(0), wd = fused.dim(1), nc = cls.dim(2);
  Tensor raw = Tensor::hwc(h, wd, kCls + nc);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < wd; ++x) {
      for (std::size_t k = 0; k < 4; ++k) raw.at(y, x, k) = reg.at(y, x, k);
      raw.at(y, x, kObj) = obj.at(y, x, 0);
      for (std::size_t k = 0; k < nc; ++k) raw.at(y, x, kCls + k) = cls.at(y, x, k);
    }
  if (reg_tower_out) *reg_tower_out = rt;
  if (cache) *cache = LevelCache{fused, std::move(s), std::move(ct), std::move(rt)};
  return raw;
}

inline std::vector<Tensor> head_forward(const std::vector<FusedFeature>& levels, const Weights& w,
                                        HeadCache* cache = nullptr) {
  require(levels.size() == embed::kLevelStrides.size(), "head_forward: expected one feature per pyramid level");
  std::vector<Tensor> raws;
  if (cache) cache->levels.assign(levels.size(), {});
  for (std::size_t l = 0; l < levels.size(); ++l)
    raws.push_back(head_level_forward(levels[l].f, l, w, cache ? &cache->levels[l] : nullptr));
  return raws;
}

namespace detail {
inline void accumulate_conv(Weights& grads, const Weights& w, const std::string& name, const numkit::ConvGrads& g) {
  numkit::add_into(grads.slot(name + ".w", w.at(name + ".w")).values(), g.kernel.values());
  numkit::add_into(grads.slot(name + ".b", w.at(name + ".b")).values(), g.bias);
}
}  // namespace detail

/// Adjoint of head_forward: accumulates parameter gradients given gradients
/// with respect to the raw outputs of every level. When `d_inputs` is given it
/// receives the gradient with respect to each level's fused input.
inline void head_backward(const HeadCache& cache, const std::vector<Tensor>& d_raw, const Weights& w,
                          Weights& grads, std::vector<Tensor>* d_inputs = nullptr) {
  if (d_inputs) d_inputs->assign(cache.levels.size(), Tensor{});
  for (std::size_t l = 0; l < cache.levels.size(); ++l) {
    const auto& lc = cache.levels[l];
    const Tensor& dr = d_raw[l];
    const std::size_t h = dr.dim(0), wd = dr.dim(1), nc = dr.dim(2) - kCls;
    Tensor dreg = Tensor::hwc(h, wd, 4), dobj = Tensor::hwc(h, wd, 1), dcls = Tensor::hwc(h, wd, nc);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < wd; ++x) {
        for (std::size_t k = 0; k < 4; ++k) dreg.at(y, x, k) = dr.at(y, x, k);
        dobj.at(y, x, 0) = dr.at(y, x, kObj);
        for (std::size_t k = 0; k < nc; ++k) dcls.at(y, x, k) = dr.at(y, x, kCls + k);
      }
    auto g_reg = numkit::conv2d_backward(lc.reg_tower, w.at("head.reg_pred.w"), 1, 0, dreg, true);
    auto g_obj = numkit::conv2d_backward(lc.reg_tower, w.at("head.obj_pred.w"), 1, 0, dobj, true);
    auto g_cls = numkit::conv2d_backward(lc.cls_tower, w.at("head.cls_pred.w"), 1, 0, dcls, true);
    detail::accumulate_conv(grads, w, "head.reg_pred", g_reg);
    detail::accumulate_conv(grads, w, "head.obj_pred", g_obj);
    detail::accumulate_conv(grads, w, "head.cls_pred", g_cls);
    Tensor drt = g_reg.input;
    numkit::add_into(drt.values(), g_obj.input.values());
    drt = numkit::relu_backward(lc.reg_tower, std::move(drt));
    Tensor dct = numkit::relu_backward(lc.cls_tower, std::move(g_cls.input));
    auto g_rt = numkit::conv2d_backward(lc.stem, w.at("head.reg_tower.w"), 1, 1, drt, true);
    auto g_ct = numkit::conv2d_backward(lc.stem, w.at("head.cls_tower.w"), 1, 1, dct, true);
    detail::accumulate_conv(grads, w, "head.reg_tower", g_rt);
    detail::accumulate_conv(grads, w, "head.cls_tower", g_ct);
    Tensor ds = g_rt.input;
    numkit::add_into(ds.values(), g_ct.input.values());
    ds = numkit::relu_backward(lc.stem, std::move(ds));
    const std::string stem = "head.stem" + std::to_string(l);
    auto g_stem = numkit::conv2d_backward(lc.input, w.at(stem + ".w"), 1, 0, ds, d_inputs != nullptr);
    detail::accumulate_conv(grads, w, stem, g_stem);
    if (d_inputs) (*d_inputs)[l] = std::move(g_stem.input);
  }
}

// ---------------------------------------------------------------------------
// Decode / NMS
// ---------------------------------------------------------------------------

/// cx = (col + sigmoid(dx)) * s, cy = (row + sigmoid(dy)) * s,
/// w = exp(pw) * s, h = exp(ph) * s.
inline Box decode_box(double dx, double dy, double pw, double ph, std::size_t row, std::size_t col,
                      std::size_t stride) {
  const double s = static_cast<double>(stride);
  return Box{(static_cast<double>(col) + numkit::sigmoid(dx)) * s, (static_cast<double>(row) + numkit::sigmoid(dy)) * s,
             std::exp(std::clamp(pw, -kLogSizeClamp, kLogSizeClamp)) * s,
             std::exp(std::clamp(ph, -kLogSizeClamp, kLogSizeClamp)) * s};
}

struct RawBox {
  double dx, dy, pw, ph;
};

/// Inverse of decode_box for a box whose centre lies strictly inside the cell.
inline RawBox encode_box(const Box& b, std::size_t row, std::size_t col, std::size_t stride) {
  const double s = static_cast<double>(stride);
  auto logit = [](double p) { return std::log(p / (1 - p)); };
  return RawBox{logit(b.cx / s - static_cast<double>(col)), logit(b.cy / s - static_cast<double>(row)),
                std::log(b.w / s), std::log(b.h / s)};
}

/// Class-aware greedy NMS; input order is the priority order.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::vector<Detection> kept;
  for (auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (k.class_id == d.class_id && iou(k.box, d.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

inline std::size_t cell_index(const GridCell& c, std::size_t grid_w) { return c.row * grid_w + c.col; }

/// Stable priority order: higher score first, then lower stride-8 cell index,
/// then lower pyramid level.
inline void sort_by_priority(std::vector<Detection>& dets, std::size_t grid_w) {
  std::stable_sort(dets.begin(), dets.end(), [grid_w](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto ia = cell_index(a.embedding_cell, grid_w), ib = cell_index(b.embedding_cell, grid_w);
    if (ia != ib) return ia < ib;
    return a.level < b.level;
  });
}

/// Candidates above the score threshold from raw head outputs.
/// `grid8_h/w` is the stride-8 grid used to assign embedding cells.
inline std::vector<Detection> decode_candidates(const std::vector<Tensor>& raws, double score_threshold,
                                                std::size_t grid8_h, std::size_t grid8_w) {
  std::vector<Detection> out;
  for (std::size_t l = 0; l < raws.size(); ++l) {
    const Tensor& r = raws[l];
    const std::size_t stride = embed::kLevelStrides[l];
    const std::size_t nc = r.dim(2) - kCls;
    for (std::size_t y = 0; y < r.dim(0); ++y)
      for (std::size_t x = 0; x < r.dim(1); ++x) {
        const double obj = numkit::sigmoid(r.at(y, x, kObj));
        std::size_t best = 0;
        double best_score = -1;
        for (std::size_t k = 0; k < nc; ++k) {
          const double s = numkit::sigmoid(r.at(y, x, kCls + k)) * obj;
          if (s > best_score) {
            best_score = s;
            best = k;
          }
        }
        if (best_score < score_threshold) continue;
        Detection d;
        d.box = decode_box(r.at(y, x, kDx), r.at(y, x, kDy), r.at(y, x, kPw), r.at(y, x, kPh), y, x, stride);
        d.score = best_score;
        d.class_id = static_cast<int>(best) + 1;
        d.level = l;
        d.level_cell = GridCell{y, x};
        const GridCell c = corr::cell_of(std::max(0.0, d.box.cx), std::max(0.0, d.box.cy), embed::kEmbedStride);
        d.embedding_cell = GridCell{std::min(c.row, grid8_h - 1), std::min(c.col, grid8_w - 1)};
        out.push_back(std::move(d));
      }
  }
  return out;
}

inline std::vector<Detection> detect(const std::vector<FusedFeature>& levels, const Weights& w,
                                     const HeadConfig& cfg) {
  cfg.validate();
  const auto raws = head_forward(levels, w);
  const std::size_t gh = levels[0].f.dim(0), gw = levels[0].f.dim(1);
  auto cands = decode_candidates(raws, cfg.score_threshold, gh, gw);
  sort_by_priority(cands, gw);
  return nms(std::move(cands), cfg.nms_iou_threshold);
}

/// Highest score wins; ties go to the lower row-major stride-8 cell.
inline std::size_t pick_top1(const std::vector<Detection>& dets, std::size_t grid_w) {
  if (dets.empty()) throw NoTargetError("pick_top1: no detections");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dets.size(); ++i) {
    const auto& a = dets[i];
    const auto& b = dets[best];
    if (a.score > b.score ||
        (a.score == b.score && cell_index(a.embedding_cell, grid_w) < cell_index(b.embedding_cell, grid_w)))
      best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Dynamic mask head
// ---------------------------------------------------------------------------

/// Relative coordinate of a pixel position with respect to an instance centre,
/// in stride-8 units.
inline std::array<double, 2> relative_coord(double px, double py, double cx, double cy) {
  const double s = static_cast<double>(embed::kEmbedStride);
  return {(px - cx) / s, (py - cy) / s};
}

struct MaskBranchCache {
  Tensor input, hidden, features;  // features: h8 x w8 x mask_channels
  Tensor upsampled;                // frame_h x frame_w x mask_channels
};

/// Shared (per-frame) part of the mask head: mask features upsampled to the
/// frame size.
inline Tensor mask_features(const Tensor& fused8, const Weights& w, std::size_t frame_h, std::size_t frame_w,
                            MaskBranchCache* cache = nullptr) {
  Tensor hidden = numkit::relu(conv(fused8, w, "mask.feat1", 1));
  Tensor feats = conv(hidden, w, "mask.feat2", 0);
  Tensor up = numkit::resize_bilinear(feats, frame_h, frame_w);
  if (cache) *cache = MaskBranchCache{fused8, std::move(hidden), std::move(feats), up};
  return up;
}

inline void mask_features_backward(const MaskBranchCache& cache, const Tensor& d_up, const Weights& w,
                                   Weights& grads) {
  const Tensor dfeat = numkit::resize_bilinear_backward(d_up, cache.features.dim(0), cache.features.dim(1));
  auto g2 = numkit::conv2d_backward(cache.hidden, w.at("mask.feat2.w"), 1, 0, dfeat, true);
  detail::accumulate_conv(grads, w, "mask.feat2", g2);
  const Tensor dh = numkit::relu_backward(cache.hidden, std::move(g2.input));
  auto g1 = numkit::conv2d_backward(cache.input, w.at("mask.feat1.w"), 1, 1, dh, false);
  detail::accumulate_conv(grads, w, "mask.feat1", g1);
}

/// Dynamic parameters predicted by the controller at a stride-8 cell of the
/// regression tower output.
inline std::vector<double> controller_params(const Tensor& reg_tower8, const GridCell& cell, const Weights& w) {
  const Tensor& k = w.at("mask.controller.w");
  const Tensor& b = w.at("mask.controller.b");
  const std::size_t in = k.dim(2), out = k.dim(3);
  std::vector<double> theta(b.values());
  for (std::size_t i = 0; i < in; ++i) {
    const double v = reg_tower8.at(cell.row, cell.col, i);
    for (std::size_t o = 0; o < out; ++o) theta[o] += v * k.values()[i * out + o];
  }
  return theta;
}

inline void controller_backward(const Tensor& reg_tower8, const GridCell& cell, std::span<const double> d_theta,
                                const Weights& w, Weights& grads) {
  const Tensor& k = w.at("mask.controller.w");
  const std::size_t in = k.dim(2), out = k.dim(3);
  auto& gk = grads.slot("mask.controller.w", k).values();
  auto& gb = grads.slot("mask.controller.b", w.at("mask.controller.b")).values();
  for (std::size_t o = 0; o < out; ++o) gb[o] += d_theta[o];
  for (std::size_t i = 0; i < in; ++i) {
    const double v = reg_tower8.at(cell.row, cell.col, i);
    for (std::size_t o = 0; o < out; ++o) gk[i * out + o] += v * d_theta[o];
  }
}

/// Views into the flat dynamic parameter vector: w1, w2, w3, b1, b2, b3.
struct DynamicLayout {
  std::size_t in, width;
  std::size_t w1() const { return 0; }
  std::size_t w2() const { return in * width; }
  std::size_t w3() const { return w2() + width * width; }
  std::size_t b1() const { return w3() + width; }
  std::size_t b2() const { return b1() + width; }
  std::size_t b3() const { return b2() + width; }
  std::size_t total() const { return b3() + 1; }
};

struct DynamicCache {
  std::vector<double> a1, a2;  // per pixel hidden activations (post-ReLU)
};

/// Per-pixel logits of the three dynamic 1x1 layers applied to
/// [mask features, relative coords].
inline std::vector<double> dynamic_mask_logits(const Tensor& feats_up, std::span<const double> theta, double cx,
                                               double cy, std::size_t width, DynamicCache* cache = nullptr) {
  const std::size_t H = feats_up.dim(0), W = feats_up.dim(1), mc = feats_up.dim(2);
  const DynamicLayout L{mc + 2, width};
  require(theta.size() == L.total(), "dynamic_mask_logits: parameter count mismatch");
  std::vector<double> logits(H * W);
  if (cache) {
    cache->a1.assign(H * W * width, 0.0);
    cache->a2.assign(H * W * width, 0.0);
  }
  std::vector<double> in(L.in), a1(width), a2(width);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < mc; ++c) in[c] = feats_up.at(y, x, c);
      const auto rc = relative_coord(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, cx, cy);
      in[mc] = rc[0];
      in[mc + 1] = rc[1];
      for (std::size_t o = 0; o < width; ++o) {
        double acc = theta[L.b1() + o];
        for (std::size_t i = 0; i < L.in; ++i) acc += in[i] * theta[L.w1() + i * width + o];
        a1[o] = acc > 0 ? acc : 0;
      }
      for (std::size_t o = 0; o < width; ++o) {
        double acc = theta[L.b2() + o];
        for (std::size_t i = 0; i < width; ++i) acc += a1[i] * theta[L.w2() + i * width + o];
        a2[o] = acc > 0 ? acc : 0;
      }
      double out = theta[L.b3()];
      for (std::size_t i = 0; i < width; ++i) out += a2[i] * theta[L.w3() + i];
      const std::size_t p = y * W + x;
      logits[p] = out;
      if (cache) {
        std::copy(a1.begin(), a1.end(), cache->a1.begin() + static_cast<long>(p * width));
        std::copy(a2.begin(), a2.end(), cache->a2.begin() + static_cast<long>(p * width));
      }
    }
  return logits;
}

/// Adjoint of dynamic_mask_logits: returns d theta and accumulates into d_feats.
inline std::vector<double> dynamic_mask_backward(const Tensor& feats_up, std::span<const double> theta, double cx,
                                                 double cy, std::size_t width, const DynamicCache& cache,
                                                 std::span<const double> d_logits, Tensor* d_feats) {
  const std::size_t H = feats_up.dim(0), W = feats_up.dim(1), mc = feats_up.dim(2);
  const DynamicLayout L{mc + 2, width};
  std::vector<double> dtheta(L.total(), 0.0);
  std::vector<double> in(L.in), da2(width), da1(width), din(L.in);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t p = y * W + x;
      const double g = d_logits[p];
      if (g == 0.0) continue;
      for (std::size_t c = 0; c < mc; ++c) in[c] = feats_up.at(y, x, c);
      const auto rc = relative_coord(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, cx, cy);
      in[mc] = rc[0];
      in[mc + 1] = rc[1];
      const double* a1 = &cache.a1[p * width];
      const double* a2 = &cache.a2[p * width];
      dtheta[L.b3()] += g;
      for (std::size_t i = 0; i < width; ++i) {
        dtheta[L.w3() + i] += g * a2[i];
        da2[i] = a2[i] > 0 ? g * theta[L.w3() + i] : 0.0;
      }
      for (std::size_t i = 0; i < width; ++i) da1[i] = 0.0;
      for (std::size_t o = 0; o < width; ++o) {
        if (da2[o] == 0.0) continue;
        dtheta[L.b2() + o] += da2[o];
        for (std::size_t i = 0; i < width; ++i) {
          dtheta[L.w2() + i * width + o] += a1[i] * da2[o];
          da1[i] += theta[L.w2() + i * width + o] * da2[o];
        }
      }
      for (std::size_t i = 0; i < width; ++i)
        if (a1[i] <= 0) da1[i] = 0.0;
      std::fill(din.begin(), din.end(), 0.0);
      for (std::size_t o = 0; o < width; ++o) {
        if (da1[o] == 0.0) continue;
        dtheta[L.b1() + o] += da1[o];
        for (std::size_t i = 0; i < L.in; ++i) {
          dtheta[L.w1() + i * width + o] += in[i] * da1[o];
          din[i] += theta[L.w1() + i * width + o] * da1[o];
        }
      }
      if (d_feats)
        for (std::size_t c = 0; c < mc; ++c) d_feats->at(y, x, c) += din[c];
    }
  return dtheta;
}

/// Per-frame state reused by every mask computed on that frame.
struct MaskContext {
  Tensor feats_up;    // frame-size mask features
  Tensor reg_tower8;  // stride-8 regression tower output, feeds the controller
};

inline MaskContext mask_context(const FusedFeature& fused8, const Weights& w, std::size_t frame_h,
                                std::size_t frame_w) {
  MaskContext ctx;
  head_level_forward(fused8.f, 0, w, nullptr, &ctx.reg_tower8);
  ctx.feats_up = mask_features(fused8.f, w, frame_h, frame_w);
  return ctx;
}

inline InstanceMask binarize(const std::vector<double>& logits, std::size_t h, std::size_t w, double threshold) {
  InstanceMask m(h, w);
  for (std::size_t i = 0; i < logits.size(); ++i) m.data[i] = numkit::sigmoid(logits[i]) >= threshold ? 1 : 0;
  return m;
}

inline InstanceMask mask_for(const MaskContext& ctx, const Detection& det, const Weights& w, const ModelSpec& spec,
                             const HeadConfig& cfg) {
  const auto theta = controller_params(ctx.reg_tower8, det.embedding_cell, w);
  const auto logits = dynamic_mask_logits(ctx.feats_up, theta, det.box.cx, det.box.cy, spec.dyn_width);
  return binarize(logits, ctx.feats_up.dim(0), ctx.feats_up.dim(1), cfg.mask_binarize_threshold);
}

inline InstanceMask mask_head(const FusedFeature& fused8, const Detection& det, const Weights& w,
                              const ModelSpec& spec, const HeadConfig& cfg, std::size_t frame_h,
                              std::size_t frame_w) {
  return mask_for(mask_context(fused8, w, frame_h, frame_w), det, w, spec, cfg);
}

}  // namespace unitrack::head
