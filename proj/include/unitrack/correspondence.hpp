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

// Pixel- and instance-level correspondence between a reference and a current
// frame, target-map propagation, and the per-task target prior.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "unitrack/backbone_embed.hpp"
#include "unitrack/errors.hpp"
#include "unitrack/geometry.hpp"
#include "unitrack/numkit.hpp"

namespace unitrack::corr {

using embed::Embedding;
using numkit::Matrix;
using numkit::Tensor;

enum class TaskKind { sot, mot, vos, mots };

inline std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::sot: return "sot";
    case TaskKind::mot: return "mot";
    case TaskKind::vos: return "vos";
    case TaskKind::mots: return "mots";
  }
  return "?";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "sot") return TaskKind::sot;
  if (s == "mot") return TaskKind::mot;
  if (s == "vos") return TaskKind::vos;
  if (s == "mots") return TaskKind::mots;
  throw InvalidArgument("unknown task '" + s + "'");
}

/// SOT and VOS propagate a given target; MOT and MOTS detect by category.
inline bool is_propagation_task(TaskKind t) { return t == TaskKind::sot || t == TaskKind::vos; }

/// Dot-product scaling used when no temperature is given: logits / sqrt(c).
inline double default_temperature(std::size_t channels) { return std::sqrt(static_cast<double>(channels)); }

struct PixelCorrespondence {
  Matrix logits;  // E_cur * E_ref^T, before temperature
  Matrix c;       // row-stochastic, row i is current cell i
  std::size_t h = 0, w = 0;
  double temperature = 1.0;
};

struct TargetMap {
  Matrix t;  // hw x 1
  bool binary = false;

  std::size_t size() const { return t.rows(); }
  double operator[](std::size_t i) const { return t(i, 0); }

  static TargetMap from_values(const std::vector<double>& v, bool binary) {
    for (double x : v) {
      require(x >= 0.0 && x <= 1.0, "TargetMap: value outside [0,1]");
      if (binary) require(x == 0.0 || x == 1.0, "TargetMap: binary map holds a non-{0,1} value");
    }
    return TargetMap{Matrix(v.size(), 1, v), binary};
  }
};

struct InstanceEmbedding {
  Matrix e;
  std::vector<GridCell> centers;

  std::size_t count() const { return e.rows(); }
};

struct InstanceCorrespondence {
  Matrix logits;  // e_cur * e_ref^T, before temperature
  Matrix c;       // N x M, row-stochastic
  double temperature = 1.0;
  bool empty = false;  // set when N == 0 or M == 0
};

struct TargetPrior {
  Tensor p;  // h x w x 1

  bool is_zero() const {
    return std::all_of(p.values().begin(), p.values().end(), [](double v) { return v == 0.0; });
  }
};

struct GroundTruthMatch {
  Matrix g;  // N x M of {0,1}; unmatched rows are all zero
};

inline PixelCorrespondence pixel_correspondence(const Embedding& e_cur, const Embedding& e_ref,
                                                std::optional<double> temperature = std::nullopt) {
  require(e_cur.channels() == e_ref.channels(), "pixel_correspondence: channel counts differ");
  require(e_cur.e.rows() == e_ref.e.rows(), "pixel_correspondence: grid sizes differ");
  const double t = temperature.value_or(default_temperature(e_cur.channels()));
  PixelCorrespondence pc;
  pc.logits = numkit::matmul_nt(e_cur.e, e_ref.e);
  pc.c = numkit::softmax_rows(pc.logits, t);
  pc.h = e_cur.h;
  pc.w = e_cur.w;
  pc.temperature = t;
  return pc;
}

/// Grid cell holding a pixel position; positions on a cell boundary belong to
/// the cell below/right of it (floor).
inline GridCell cell_of(double cx, double cy, std::size_t stride) {
  require(cx >= 0.0 && cy >= 0.0, "cell_of: negative coordinate");
  return GridCell{static_cast<std::size_t>(std::floor(cy / static_cast<double>(stride))),
                  static_cast<std::size_t>(std::floor(cx / static_cast<double>(stride)))};
}

inline InstanceEmbedding extract_instance_embeddings(const Embedding& e, const std::vector<Box>& boxes,
                                                     std::size_t stride = embed::kEmbedStride) {
  InstanceEmbedding out;
  out.e = Matrix(boxes.size(), e.channels());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    require(b.cx >= 0.0 && b.cy >= 0.0, "extract_instance_embeddings: centre outside grid");
    const GridCell cell = cell_of(b.cx, b.cy, stride);
    require(cell.row < e.h && cell.col < e.w, "extract_instance_embeddings: centre outside grid");
    auto src = e.e.row(cell.row * e.w + cell.col);
    std::copy(src.begin(), src.end(), out.e.row(i).begin());
    out.centers.push_back(cell);
  }
  return out;
}

inline InstanceCorrespondence instance_correspondence(const InstanceEmbedding& e_cur,
                                                      const InstanceEmbedding& e_ref,
                                                      std::optional<double> temperature = std::nullopt) {
  const std::size_t c = e_cur.e.cols() ? e_cur.e.cols() : e_ref.e.cols();
  require(e_cur.e.rows() == 0 || e_ref.e.rows() == 0 || e_cur.e.cols() == e_ref.e.cols(),
          "instance_correspondence: channel counts differ");
  InstanceCorrespondence ic;
  ic.temperature = temperature.value_or(default_temperature(std::max<std::size_t>(c, 1)));
  if (e_cur.count() == 0 || e_ref.count() == 0) {
    ic.empty = true;
    ic.logits = Matrix(e_cur.count(), e_ref.count());
    ic.c = ic.logits;
    return ic;
  }
  ic.logits = numkit::matmul_nt(e_cur.e, e_ref.e);
  ic.c = numkit::softmax_rows(ic.logits, ic.temperature);
  return ic;
}

/// T~_cur = C_pix * T_ref. The result is a convex combination of reference
/// values, so it is clamped into the reference range to absorb rounding.
inline TargetMap propagate(const PixelCorrespondence& pc, const TargetMap& t_ref) {
  require(pc.c.cols() == t_ref.size(), "propagate: correspondence and target map sizes differ");
  double lo = 0.0, hi = 0.0;
  if (t_ref.size() > 0) {
    lo = hi = t_ref[0];
    for (std::size_t i = 0; i < t_ref.size(); ++i) {
      lo = std::min(lo, t_ref[i]);
      hi = std::max(hi, t_ref[i]);
    }
  }
  TargetMap out{Matrix(pc.c.rows(), 1), false};
  for (std::size_t i = 0; i < pc.c.rows(); ++i) {
    auto row = pc.c.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) acc += row[k] * t_ref[k];
    out.t(i, 0) = std::clamp(acc, lo, hi);
  }
  return out;
}

inline TargetPrior make_target_prior(const std::optional<TargetMap>& t_prop, TaskKind task, std::size_t h,
                                     std::size_t w) {
  if (!is_propagation_task(task)) return TargetPrior{Tensor::hwc(h, w, 1)};
  require(t_prop.has_value(), "make_target_prior: SOT/VOS need a propagated target map");
  require(t_prop->size() == h * w, "make_target_prior: target map size differs from h*w");
  return TargetPrior{Tensor({h, w, 1}, t_prop->t.values())};
}

inline GroundTruthMatch ground_truth_match(const std::vector<long>& cur_ids, const std::vector<long>& ref_ids) {
  require(std::set<long>(cur_ids.begin(), cur_ids.end()).size() == cur_ids.size(),
          "ground_truth_match: duplicate current id");
  require(std::set<long>(ref_ids.begin(), ref_ids.end()).size() == ref_ids.size(),
          "ground_truth_match: duplicate reference id");
  GroundTruthMatch m{Matrix(cur_ids.size(), ref_ids.size())};
  for (std::size_t i = 0; i < cur_ids.size(); ++i)
    for (std::size_t k = 0; k < ref_ids.size(); ++k)
      if (cur_ids[i] == ref_ids[k]) m.g(i, k) = 1.0;
  return m;
}

/// Binary target map over an h x w stride grid: cells whose centres fall
/// inside the box. A box covering no centre falls back to its centre cell.
inline TargetMap target_map_from_box(const Box& box, std::size_t h, std::size_t w,
                                     std::size_t stride = embed::kEmbedStride) {
  const double s = static_cast<double>(stride);
  require(box.right() > 0 && box.bottom() > 0 && box.left() < static_cast<double>(w) * s &&
              box.top() < static_cast<double>(h) * s,
          "target_map_from_box: box lies fully outside the frame");
  std::vector<double> v(h * w, 0.0);
  bool any = false;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * s, y = (static_cast<double>(r) + 0.5) * s;
      if (x >= box.left() && x < box.right() && y >= box.top() && y < box.bottom()) {
        v[r * w + c] = 1.0;
        any = true;
      }
    }
  }
  if (!any) {
    const double cx = std::clamp(box.cx, 0.0, static_cast<double>(w) * s - 1e-9);
    const double cy = std::clamp(box.cy, 0.0, static_cast<double>(h) * s - 1e-9);
    const GridCell cell = cell_of(cx, cy, stride);
    v[cell.row * w + cell.col] = 1.0;
  }
  return TargetMap::from_values(v, true);
}

/// Binary target map from a pixel mask: a cell is on when more than half of
/// its pixels are on. An empty mask is rejected; a mask with no majority cell
/// falls back to the centre cell of its bounding box.
inline TargetMap target_map_from_mask(const Mask& mask, std::size_t stride = embed::kEmbedStride) {
  const auto bbox = mask.bounding_box();
  require(bbox.has_value(), "target_map_from_mask: empty mask");
  const std::size_t h = mask.height / stride, w = mask.width / stride;
  std::vector<double> v(h * w, 0.0);
  bool any = false;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t on = 0;
      for (std::size_t y = r * stride; y < (r + 1) * stride; ++y)
        for (std::size_t x = c * stride; x < (c + 1) * stride; ++x) on += mask.at(y, x);
      if (2 * on > stride * stride) {
        v[r * w + c] = 1.0;
        any = true;
      }
    }
  if (!any) {
    const GridCell cell = cell_of(bbox->cx, bbox->cy, stride);
    v[std::min(cell.row, h - 1) * w + std::min(cell.col, w - 1)] = 1.0;
  }
  return TargetMap::from_values(v, true);
}

}  // namespace unitrack::corr
