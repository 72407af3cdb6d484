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

// Training losses with analytic gradients, and a central-difference checker.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "unitrack/backbone_embed.hpp"
#include "unitrack/correspondence.hpp"
#include "unitrack/errors.hpp"
#include "unitrack/geometry.hpp"
#include "unitrack/numkit.hpp"
#include "unitrack/unihead.hpp"

namespace unitrack::loss {

using numkit::Matrix;
using numkit::Tensor;

inline constexpr double kDiceEps = 1e-7;

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // with respect to the loss's stated argument
  bool flagged = false;      // degenerate input (nothing to supervise)
};

/// 1 - (2 sum(p g) + eps) / (sum p + sum g + eps); gradient with respect to p.
inline LossResult dice_loss(std::span<const double> pred, std::span<const double> gt, double eps = kDiceEps) {
  require(pred.size() == gt.size(), "dice_loss: length mismatch");
  double inter = 0, ps = 0, gs = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    ps += pred[i];
    gs += gt[i];
  }
  const double num = 2 * inter + eps;
  const double den = ps + gs + eps;
  LossResult r;
  if (den == 0.0) {
    // eps == 0 with empty inputs: treat as perfect agreement
    r.value = 0.0;
    r.grad.assign(pred.size(), 0.0);
    r.flagged = true;
    return r;
  }
  r.value = 1.0 - num / den;
  r.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) r.grad[i] = -(2 * gt[i] * den - num) / (den * den);
  return r;
}

inline LossResult dice_loss(const corr::TargetMap& pred, const corr::TargetMap& gt, double eps = kDiceEps) {
  return dice_loss(pred.t.data(), gt.t.data(), eps);
}

/// Mean over rows of G holding a single 1 of -log c[i][j*]. The gradient is
/// with respect to the pre-temperature logits: (c - onehot) / (t * rows).
inline LossResult contrastive_ce_loss(const corr::InstanceCorrespondence& ic, const corr::GroundTruthMatch& g) {
  require(ic.c.rows() == g.g.rows() && ic.c.cols() == g.g.cols(), "contrastive_ce_loss: shape mismatch");
  const std::size_t n = ic.c.rows(), m = ic.c.cols();
  LossResult r;
  r.grad.assign(n * m, 0.0);
  std::vector<std::size_t> rows, targets;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0, j = 0;
    for (std::size_t k = 0; k < m; ++k)
      if (g.g(i, k) == 1.0) {
        ++ones;
        j = k;
      }
    require(ones <= 1, "contrastive_ce_loss: ground-truth row with more than one match");
    if (ones == 1) {
      rows.push_back(i);
      targets.push_back(j);
    }
  }
  if (rows.empty()) {
    r.flagged = true;
    return r;
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t idx = 0; idx < rows.size(); ++idx) {
    const std::size_t i = rows[idx], j = targets[idx];
    r.value -= std::log(std::max(ic.c(i, j), 1e-300)) * inv;
    for (std::size_t k = 0; k < m; ++k)
      r.grad[i * m + k] = (ic.c(i, k) - (k == j ? 1.0 : 0.0)) * inv / ic.temperature;
  }
  return r;
}

inline LossResult contrastive_ce_loss(const Matrix& logits, const corr::GroundTruthMatch& g, double temperature = 1.0) {
  corr::InstanceCorrespondence ic;
  ic.logits = logits;
  ic.c = numkit::softmax_rows(logits, temperature);
  ic.temperature = temperature;
  return contrastive_ce_loss(ic, g);
}

// ---------------------------------------------------------------------------
// Detection loss
// ---------------------------------------------------------------------------

struct GroundTruthBox {
  Box box;
  int class_id = 1;  // 1-based
};

/// Positive assignment for one pyramid level: gt index per cell or -1.
struct LevelAssignment {
  std::size_t h = 0, w = 0, stride = 0;
  std::vector<long> gt_of_cell;
};

/// A cell is positive for a ground truth when its centre lies inside the
/// ground-truth box shrunk by half about its centre; overlapping claims go to
/// the smaller box. A ground truth left without any positive cell gets the
/// stride-8 cell containing its centre, if that cell is free.
inline std::vector<LevelAssignment> assign_positives(const std::vector<std::array<std::size_t, 2>>& level_dims,
                                                     const std::vector<GroundTruthBox>& gts) {
  std::vector<LevelAssignment> out;
  std::vector<bool> has_positive(gts.size(), false);
  for (std::size_t l = 0; l < level_dims.size(); ++l) {
    LevelAssignment la{level_dims[l][0], level_dims[l][1], embed::kLevelStrides[l], {}};
    la.gt_of_cell.assign(la.h * la.w, -1);
    const double s = static_cast<double>(la.stride);
    for (std::size_t r = 0; r < la.h; ++r)
      for (std::size_t c = 0; c < la.w; ++c) {
        const double x = (static_cast<double>(c) + 0.5) * s, y = (static_cast<double>(r) + 0.5) * s;
        double best_area = 0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
          const Box& b = gts[g].box;
          if (std::abs(x - b.cx) < b.w / 4 && std::abs(y - b.cy) < b.h / 4) {
            if (la.gt_of_cell[r * la.w + c] < 0 || b.area() < best_area) {
              la.gt_of_cell[r * la.w + c] = static_cast<long>(g);
              best_area = b.area();
            }
          }
        }
      }
    for (long g : la.gt_of_cell)
      if (g >= 0) has_positive[static_cast<std::size_t>(g)] = true;
    out.push_back(std::move(la));
  }
  if (!out.empty()) {
    auto& l0 = out[0];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (has_positive[g]) continue;
      const Box& b = gts[g].box;
      if (b.cx < 0 || b.cy < 0) continue;
      const GridCell cell = corr::cell_of(b.cx, b.cy, l0.stride);
      if (cell.row >= l0.h || cell.col >= l0.w) continue;
      long& slot = l0.gt_of_cell[cell.row * l0.w + cell.col];
      if (slot < 0) slot = static_cast<long>(g);
    }
  }
  return out;
}

/// Binary cross-entropy on a logit and its derivative.
inline double bce_with_logits(double x, double y, double* dx) {
  if (dx) *dx = numkit::sigmoid(x) - y;
  return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}

/// IoU between the decoded raw regression and a target box, with the
/// gradient with respect to (dx, dy, pw, ph).
inline double decoded_iou(const std::array<double, 4>& raw, std::size_t row, std::size_t col, std::size_t stride,
                          const Box& gt, std::array<double, 4>* grad) {
  const Box p = head::decode_box(raw[0], raw[1], raw[2], raw[3], row, col, stride);
  const double s = static_cast<double>(stride);
  const double ix1 = std::max(p.left(), gt.left()), ix2 = std::min(p.right(), gt.right());
  const double iy1 = std::max(p.top(), gt.top()), iy2 = std::min(p.bottom(), gt.bottom());
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = p.area() + gt.area() - inter;
  const double value = uni > 0 ? inter / uni : 0.0;
  if (!grad) return value;
  grad->fill(0.0);
  if (uni <= 0) return value;
  // d inter / d (left, right, top, bottom) of the prediction
  double di_l = 0, di_r = 0, di_t = 0, di_b = 0;
  if (iw > 0 && ih > 0) {
    if (p.left() > gt.left()) di_l = -ih;
    if (p.right() < gt.right()) di_r = ih;
    if (p.top() > gt.top()) di_t = -iw;
    if (p.bottom() < gt.bottom()) di_b = iw;
  }
  const double di_cx = di_l + di_r, di_w = (di_r - di_l) / 2;
  const double di_cy = di_t + di_b, di_h = (di_b - di_t) / 2;
  // IoU = I / U with U = Ap + Ag - I
  const double a = 1.0 / uni + inter / (uni * uni);
  const double b = inter / (uni * uni);
  const double d_cx = a * di_cx;
  const double d_cy = a * di_cy;
  const double d_w = a * di_w - b * p.h;
  const double d_h = a * di_h - b * p.w;
  const double sx = numkit::sigmoid(raw[0]), sy = numkit::sigmoid(raw[1]);
  (*grad)[0] = d_cx * s * sx * (1 - sx);
  (*grad)[1] = d_cy * s * sy * (1 - sy);
  (*grad)[2] = std::abs(raw[2]) < head::kLogSizeClamp ? d_w * p.w : 0.0;
  (*grad)[3] = std::abs(raw[3]) < head::kLogSizeClamp ? d_h * p.h : 0.0;
  return value;
}

struct DetectionLossParts {
  double objectness = 0, classification = 0, box = 0;
  std::size_t positives = 0;
};

/// Objectness BCE over every cell, class BCE and (1 - IoU) on positive cells,
/// summed with equal weight and divided by max(1, #positives). The gradient
/// is over the raw outputs of all levels, concatenated in level order.
inline LossResult detection_loss(const std::vector<Tensor>& raws, const std::vector<GroundTruthBox>& gts,
                                 DetectionLossParts* parts = nullptr) {
  std::vector<std::array<std::size_t, 2>> dims;
  std::size_t total = 0;
  for (const auto& r : raws) {
    dims.push_back({r.dim(0), r.dim(1)});
    total += r.size();
  }
  const auto assign = assign_positives(dims, gts);
  std::size_t npos = 0;
  for (const auto& la : assign)
    for (long g : la.gt_of_cell) npos += g >= 0;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, npos));
  LossResult r;
  r.grad.assign(total, 0.0);
  DetectionLossParts p;
  p.positives = npos;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < raws.size(); ++l) {
    const Tensor& raw = raws[l];
    const auto& la = assign[l];
    const std::size_t ch = raw.dim(2), nc = ch - head::kCls;
    for (std::size_t y = 0; y < raw.dim(0); ++y)
      for (std::size_t x = 0; x < raw.dim(1); ++x) {
        const std::size_t base = offset + (y * raw.dim(1) + x) * ch;
        const long g = la.gt_of_cell[y * la.w + x];
        double d = 0;
        p.objectness += bce_with_logits(raw.at(y, x, head::kObj), g >= 0 ? 1.0 : 0.0, &d);
        r.grad[base + head::kObj] = d * norm;
        if (g < 0) continue;
        const auto& gt = gts[static_cast<std::size_t>(g)];
        for (std::size_t k = 0; k < nc; ++k) {
          const double target = static_cast<int>(k) + 1 == gt.class_id ? 1.0 : 0.0;
          p.classification += bce_with_logits(raw.at(y, x, head::kCls + k), target, &d);
          r.grad[base + head::kCls + k] = d * norm;
        }
        std::array<double, 4> rb{raw.at(y, x, 0), raw.at(y, x, 1), raw.at(y, x, 2), raw.at(y, x, 3)};
        std::array<double, 4> gi{};
        const double v = decoded_iou(rb, y, x, la.stride, gt.box, &gi);
        p.box += 1.0 - v;
        for (std::size_t k = 0; k < 4; ++k) r.grad[base + k] = -gi[k] * norm;
      }
    offset += raw.size();
  }
  p.objectness *= norm;
  p.classification *= norm;
  p.box *= norm;
  r.value = p.objectness + p.classification + p.box;
  r.flagged = gts.empty();
  if (parts) *parts = p;
  return r;
}

/// Splits a flat gradient over concatenated raw outputs back into per-level tensors.
inline std::vector<Tensor> split_like(std::span<const double> flat, const std::vector<Tensor>& like) {
  std::vector<Tensor> out;
  std::size_t off = 0;
  for (const auto& t : like) {
    Tensor g(t.shape());
    std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + t.size()),
              g.values().begin());
    off += t.size();
    out.push_back(std::move(g));
  }
  return out;
}

/// Dice on sigmoid(logits); gradient with respect to the logits.
inline LossResult mask_loss(std::span<const double> logits, std::span<const double> gt, double eps = kDiceEps) {
  require(logits.size() == gt.size(), "mask_loss: dimension mismatch");
  std::vector<double> prob(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) prob[i] = numkit::sigmoid(logits[i]);
  LossResult r = dice_loss(prob, gt, eps);
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] *= prob[i] * (1 - prob[i]);
  return r;
}

inline LossResult mask_loss(std::span<const double> logits, const Mask& gt, double eps = kDiceEps) {
  std::vector<double> g(gt.data.begin(), gt.data.end());
  return mask_loss(logits, g, eps);
}

/// Weighted sum; the gradient is the concatenation (corr, det), each scaled.
inline LossResult stage1_loss(const LossResult& corr, const LossResult& det, double w_corr = 1.0,
                              double w_det = 1.0) {
  LossResult r;
  r.value = w_corr * corr.value + w_det * det.value;
  r.grad.reserve(corr.grad.size() + det.grad.size());
  for (double g : corr.grad) r.grad.push_back(w_corr * g);
  for (double g : det.grad) r.grad.push_back(w_det * g);
  return r;
}

using LossFn = std::function<LossResult(std::span<const double>)>;

/// Max relative error |a - n| / max(|a|, |n|) between the analytic gradient
/// and central differences, over coordinates with |analytic| > 1e-8.
inline double finite_diff_check(const LossFn& fn, std::span<const double> point, double eps) {
  require(eps >= 1e-7 && eps <= 1e-3, "finite_diff_check: eps outside [1e-7, 1e-3]");
  const LossResult base = fn(point);
  require(base.grad.size() == point.size(), "finite_diff_check: gradient length differs from point");
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = base.grad[i];
    if (std::abs(a) <= 1e-8) continue;
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = fn(x).value;
    x[i] = orig - eps;
    const double fm = fn(x).value;
    x[i] = orig;
    const double n = (fp - fm) / (2 * eps);
    worst = std::max(worst, std::abs(a - n) / std::max(std::abs(a), std::abs(n)));
  }
  return worst;
}

}  // namespace unitrack::loss
