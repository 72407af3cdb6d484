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

// Toy convolutional backbone (feature pyramid at strides 8/16/32) and the
// cross-frame interaction stage that turns the stride-16 maps of a frame
// pair into stride-8 embeddings.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "unitrack/model_spec.hpp"
#include "unitrack/numkit.hpp"
#include "unitrack/numkit_grad.hpp"
#include "unitrack/weights.hpp"

namespace unitrack::embed {

using numkit::Matrix;
using numkit::Tensor;

inline constexpr std::array<std::size_t, 3> kLevelStrides{8, 16, 32};
inline constexpr std::size_t kEmbedStride = 8;
inline constexpr double kGroupNormEps = 1e-5;

/// RGB frame, values in [0, 1], stored HWC. Both sides are multiples of 32.
struct Frame {
  Tensor pixels;

  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }

  static Frame from_pixels(Tensor pixels) {
    require(pixels.rank() == 3 && pixels.dim(2) == 3, "Frame: expected HxWx3 pixels");
    require(pixels.dim(0) > 0 && pixels.dim(0) % 32 == 0 && pixels.dim(1) > 0 && pixels.dim(1) % 32 == 0,
            "Frame: height and width must be positive multiples of 32");
    for (double v : pixels.values()) require(v >= 0.0 && v <= 1.0, "Frame: pixel outside [0,1]");
    return Frame{std::move(pixels)};
  }
};

struct FeaturePyramid {
  std::array<Tensor, 3> levels;  // strides 8, 16, 32

  const Tensor& stride8() const { return levels[0]; }
  const Tensor& stride16() const { return levels[1]; }
  bool operator==(const FeaturePyramid&) const = default;
};

/// Spatially flattened stride-8 embedding; row r is grid cell (r / w, r % w).
struct Embedding {
  std::size_t h = 0;
  std::size_t w = 0;
  Matrix e;

  std::size_t channels() const { return e.cols(); }
  bool operator==(const Embedding&) const = default;
};

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

inline void add_backbone_weights(Weights& w, const ModelSpec& spec, Rng& rng) {
  std::size_t cin = 3;
  for (std::size_t i = 0; i < spec.backbone_channels.size(); ++i) {
    add_conv(w, "backbone.conv" + std::to_string(i), 3, cin, spec.backbone_channels[i], rng);
    cin = spec.backbone_channels[i];
  }
}

/// Per-stage activations kept for backbone_backward.
struct BackboneCache {
  std::vector<Tensor> inputs;    // conv input of each stage
  std::vector<Tensor> pre_norm;  // conv output
  std::vector<Tensor> outputs;   // after norm and ReLU
};

/// The same operator (and weights) is applied to every frame, so feeding the
/// reference and current frame through it is weight sharing by construction.
inline FeaturePyramid extract_pyramid(const Frame& frame, const Weights& w, const ModelSpec& spec,
                                      BackboneCache* cache = nullptr) {
  require(frame.height() % 32 == 0 && frame.width() % 32 == 0, "extract_pyramid: frame size not a multiple of 32");
  FeaturePyramid pyr;
  if (cache) *cache = BackboneCache{};
  Tensor x = frame.pixels;
  for (std::size_t i = 0; i < spec.backbone_channels.size(); ++i) {
    const std::string p = "backbone.conv" + std::to_string(i);
    Tensor pre = numkit::conv2d(x, w.at(p + ".w"), 2, 1, w.at(p + ".b").data());
    Tensor y = numkit::relu(numkit::group_norm(pre, spec.gn_groups, kGroupNormEps));
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre_norm.push_back(std::move(pre));
      cache->outputs.push_back(y);
    }
    x = std::move(y);
    if (i >= 2) pyr.levels[i - 2] = x;
  }
  return pyr;
}

/// Accumulates backbone parameter gradients given gradients with respect to
/// the pyramid levels. Empty entries of `d_levels` count as zero.
inline void backbone_backward(const BackboneCache& cache, const ModelSpec& spec, const Weights& w,
                              const std::array<Tensor, 3>& d_levels, Weights& grads) {
  const std::size_t n = spec.backbone_channels.size();
  require(cache.outputs.size() == n, "backbone_backward: cache does not match the model layout");
  Tensor d;
  for (std::size_t i = n; i-- > 0;) {
    if (d.size() == 0) d = Tensor(cache.outputs[i].shape());
    if (i >= 2 && d_levels[i - 2].size() > 0) numkit::add_into(d.values(), d_levels[i - 2].values());
    const Tensor dn = numkit::relu_backward(cache.outputs[i], std::move(d));
    const Tensor dpre = numkit::group_norm_backward(cache.pre_norm[i], spec.gn_groups, kGroupNormEps, dn);
    const std::string p = "backbone.conv" + std::to_string(i);
    auto g = numkit::conv2d_backward(cache.inputs[i], w.at(p + ".w"), 2, 1, dpre, i > 0);
    numkit::add_into(grads.slot(p + ".w", w.at(p + ".w")).values(), g.kernel.values());
    numkit::add_into(grads.slot(p + ".b", w.at(p + ".b")).values(), g.bias);
    d = std::move(g.input);
  }
}

// ---------------------------------------------------------------------------
// Linear helpers over token matrices (n x in) with weights stored {in, out}.
// ---------------------------------------------------------------------------

inline Matrix linear(const Matrix& x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  require(x.cols() == in, "linear: input width differs from weight rows");
  Matrix y(x.rows(), out);
  const auto& wv = w.values();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto yr = y.row(r);
    for (std::size_t o = 0; o < out; ++o) yr[o] = b[o];
    auto xr = x.row(r);
    for (std::size_t i = 0; i < in; ++i) {
      const double v = xr[i];
      const double* wr = &wv[i * out];
      for (std::size_t o = 0; o < out; ++o) yr[o] += v * wr[o];
    }
  }
  return y;
}

inline void linear_backward(const Matrix& x, const Tensor& w, const Matrix& dy, Tensor& dw, Tensor& db,
                            Matrix* dx) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto gr = dy.row(r);
    for (std::size_t o = 0; o < out; ++o) db[o] += gr[o];
    for (std::size_t i = 0; i < in; ++i) {
      double* dwr = &dw.values()[i * out];
      const double* wr = &w.values()[i * out];
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        dwr[o] += xr[i] * gr[o];
        acc += wr[o] * gr[o];
      }
      if (dx) (*dx)(r, i) += acc;
    }
  }
}

// ---------------------------------------------------------------------------
// Deformable attention: each query samples K points per head in each of two
// value maps (its own frame first, then the other frame) around its own grid
// location; offsets and mixing weights are linear in the query.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDeformLevels = 2;

struct BilinearCorner {
  long y, x;
  double w, dwdx, dwdy;
};

/// Corners touched when sampling at continuous grid coordinates (x, y), where
/// integer coordinates are cell centres. Corners outside the grid read zero.
inline std::array<BilinearCorner, 4> bilinear_corners(double x, double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  return {{{y0, x0, (1 - fx) * (1 - fy), -(1 - fy), -(1 - fx)},
           {y0, x0 + 1, fx * (1 - fy), (1 - fy), -fx},
           {y0 + 1, x0, (1 - fx) * fy, -fy, (1 - fx)},
           {y0 + 1, x0 + 1, fx * fy, fy, fx}}};
}

struct DeformCache {
  Matrix offsets;  // n x (heads * levels * K * 2), (x, y) pairs
  Matrix attn;     // n x (heads * levels * K), softmax within each head
};

inline std::size_t deform_index(std::size_t head, std::size_t level, std::size_t k, std::size_t K) {
  return (head * kDeformLevels + level) * K + k;
}

/// Attended values (before the output projection) for queries `xq` laid out on
/// an h x w grid. `values[0]` is the query's own frame.
inline Matrix deform_attend(const Matrix& xq, const std::array<const Matrix*, 2>& values, std::size_t h,
                            std::size_t w, std::size_t heads, std::size_t K, const Weights& wts,
                            const std::string& prefix, DeformCache* cache = nullptr) {
  const std::size_t n = xq.rows();
  const std::size_t d = values[0]->cols();
  const std::size_t dh = d / heads;
  Matrix offsets = linear(xq, wts.at(prefix + ".offset.w"), wts.at(prefix + ".offset.b"));
  Matrix attn = linear(xq, wts.at(prefix + ".attn.w"), wts.at(prefix + ".attn.b"));
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t hd = 0; hd < heads; ++hd)
      numkit::softmax_inplace(attn.row(q).subspan(hd * kDeformLevels * K, kDeformLevels * K));
  Matrix out(n, d);
  for (std::size_t q = 0; q < n; ++q) {
    const double qy = static_cast<double>(q / w), qx = static_cast<double>(q % w);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      for (std::size_t lv = 0; lv < kDeformLevels; ++lv) {
        const Matrix& v = *values[lv];
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t idx = deform_index(hd, lv, k, K);
          const double a = attn(q, idx);
          const auto corners = bilinear_corners(qx + offsets(q, 2 * idx), qy + offsets(q, 2 * idx + 1));
          for (const auto& c : corners) {
            if (c.y < 0 || c.x < 0 || c.y >= static_cast<long>(h) || c.x >= static_cast<long>(w)) continue;
            const std::size_t cell = static_cast<std::size_t>(c.y) * w + static_cast<std::size_t>(c.x);
            const double s = a * c.w;
            if (s == 0.0) continue;
            for (std::size_t ch = hd * dh; ch < (hd + 1) * dh; ++ch) out(q, ch) += s * v(cell, ch);
          }
        }
      }
    }
  }
  if (cache) {
    cache->offsets = std::move(offsets);
    cache->attn = std::move(attn);
  }
  return out;
}

/// Adjoint of deform_attend. Accumulates parameter gradients into `grads`,
/// input gradients into `dxq` and `dvalues`.
inline void deform_attend_backward(const Matrix& xq, const std::array<const Matrix*, 2>& values,
                                   std::size_t h, std::size_t w, std::size_t heads, std::size_t K,
                                   const Weights& wts, const std::string& prefix, const DeformCache& cache,
                                   const Matrix& dout, Weights& grads, Matrix& dxq,
                                   const std::array<Matrix*, 2>& dvalues) {
  const std::size_t n = xq.rows();
  const std::size_t d = values[0]->cols();
  const std::size_t dh = d / heads;
  Matrix doff(n, cache.offsets.cols());
  Matrix dattn(n, cache.attn.cols());
  for (std::size_t q = 0; q < n; ++q) {
    const double qy = static_cast<double>(q / w), qx = static_cast<double>(q % w);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      for (std::size_t lv = 0; lv < kDeformLevels; ++lv) {
        const Matrix& v = *values[lv];
        Matrix& dv = *dvalues[lv];
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t idx = deform_index(hd, lv, k, K);
          const double a = cache.attn(q, idx);
          const auto corners =
              bilinear_corners(qx + cache.offsets(q, 2 * idx), qy + cache.offsets(q, 2 * idx + 1));
          double da = 0.0, dx = 0.0, dy = 0.0;
          for (const auto& c : corners) {
            if (c.y < 0 || c.x < 0 || c.y >= static_cast<long>(h) || c.x >= static_cast<long>(w)) continue;
            const std::size_t cell = static_cast<std::size_t>(c.y) * w + static_cast<std::size_t>(c.x);
            double g = 0.0;
            for (std::size_t ch = hd * dh; ch < (hd + 1) * dh; ++ch) {
              g += dout(q, ch) * v(cell, ch);
              dv(cell, ch) += a * c.w * dout(q, ch);
            }
            da += c.w * g;
            dx += a * c.dwdx * g;
            dy += a * c.dwdy * g;
          }
          dattn(q, idx) = da;
          doff(q, 2 * idx) = dx;
          doff(q, 2 * idx + 1) = dy;
        }
      }
    }
  }
  // softmax adjoint within each head block
  Matrix dlogits(n, cache.attn.cols());
  const std::size_t block = kDeformLevels * K;
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      double dot = 0.0;
      for (std::size_t j = hd * block; j < (hd + 1) * block; ++j) dot += cache.attn(q, j) * dattn(q, j);
      for (std::size_t j = hd * block; j < (hd + 1) * block; ++j)
        dlogits(q, j) = cache.attn(q, j) * (dattn(q, j) - dot);
    }
  }
  linear_backward(xq, wts.at(prefix + ".attn.w"), dlogits, grads.slot(prefix + ".attn.w", wts.at(prefix + ".attn.w")),
                  grads.slot(prefix + ".attn.b", wts.at(prefix + ".attn.b")), &dxq);
  linear_backward(xq, wts.at(prefix + ".offset.w"), doff,
                  grads.slot(prefix + ".offset.w", wts.at(prefix + ".offset.w")),
                  grads.slot(prefix + ".offset.b", wts.at(prefix + ".offset.b")), &dxq);
}

// ---------------------------------------------------------------------------
// Full attention over the concatenated token sequence of both frames. Keys are
// visited own-frame first so the computation is identical under a role swap.
// ---------------------------------------------------------------------------

inline Matrix head_slice(const Matrix& m, std::size_t head, std::size_t dh) {
  Matrix s(m.rows(), dh);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < dh; ++c) s(r, c) = m(r, head * dh + c);
  return s;
}

inline Matrix stack_rows(const Matrix& a, const Matrix& b) {
  Matrix s(a.rows() + b.rows(), a.cols());
  std::copy(a.values().begin(), a.values().end(), s.values().begin());
  std::copy(b.values().begin(), b.values().end(), s.values().begin() + static_cast<long>(a.values().size()));
  return s;
}

struct FullCache {
  std::vector<Matrix> probs;  // per head: n x 2n
};

/// Attended values for queries of one frame given Q of that frame and K/V of
/// (own, other).
inline Matrix full_attend(const Matrix& q, const Matrix& k_own, const Matrix& k_other, const Matrix& v_own,
                          const Matrix& v_other, std::size_t heads, FullCache* cache = nullptr) {
  const std::size_t n = q.rows(), d = q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix kcat = stack_rows(k_own, k_other);
  const Matrix vcat = stack_rows(v_own, v_other);
  Matrix out(n, d);
  if (cache) cache->probs.clear();
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const Matrix qh = head_slice(q, hd, dh);
    const Matrix kh = head_slice(kcat, hd, dh);
    const Matrix vh = head_slice(vcat, hd, dh);
    Matrix scores = numkit::matmul_nt(qh, kh);
    for (double& s : scores.values()) s *= scale;
    for (std::size_t r = 0; r < n; ++r) numkit::softmax_inplace(scores.row(r));
    const Matrix o = numkit::matmul(scores, vh);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < dh; ++c) out(r, hd * dh + c) = o(r, c);
    if (cache) cache->probs.push_back(std::move(scores));
  }
  return out;
}

/// Adjoint of full_attend; accumulates into dq, dk_*, dv_*.
inline void full_attend_backward(const Matrix& q, const Matrix& k_own, const Matrix& k_other, const Matrix& v_own,
                                 const Matrix& v_other, std::size_t heads, const FullCache& cache,
                                 const Matrix& dout, Matrix& dq, Matrix& dk_own, Matrix& dk_other, Matrix& dv_own,
                                 Matrix& dv_other) {
  const std::size_t n = q.rows(), d = q.cols(), dh = d / heads;
  const std::size_t m_own = k_own.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix kcat = stack_rows(k_own, k_other);
  const Matrix vcat = stack_rows(v_own, v_other);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const Matrix& p = cache.probs[hd];
    const Matrix qh = head_slice(q, hd, dh);
    const Matrix kh = head_slice(kcat, hd, dh);
    const Matrix vh = head_slice(vcat, hd, dh);
    const Matrix doh = head_slice(dout, hd, dh);
    const Matrix dp = numkit::matmul_nt(doh, vh);          // n x 2n
    const Matrix dvh = numkit::matmul(numkit::transpose(p), doh);  // 2n x dh
    Matrix ds = numkit::softmax_rows_backward(p, dp, 1.0);
    for (double& v : ds.values()) v *= scale;
    const Matrix dqh = numkit::matmul(ds, kh);                       // n x dh
    const Matrix dkh = numkit::matmul(numkit::transpose(ds), qh);    // 2n x dh
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < dh; ++c) dq(r, hd * dh + c) += dqh(r, c);
    for (std::size_t r = 0; r < kcat.rows(); ++r) {
      Matrix& dk = r < m_own ? dk_own : dk_other;
      Matrix& dv = r < m_own ? dv_own : dv_other;
      const std::size_t rr = r < m_own ? r : r - m_own;
      for (std::size_t c = 0; c < dh; ++c) {
        dk(rr, hd * dh + c) += dkh(r, c);
        dv(rr, hd * dh + c) += dvh(r, c);
      }
    }
  }
  (void)d;
}

// ---------------------------------------------------------------------------
// Interaction stage
// ---------------------------------------------------------------------------

inline std::string layer_prefix(std::size_t layer) { return "interact.l" + std::to_string(layer); }

inline void add_interaction_weights(Weights& w, const ModelSpec& spec, Rng& rng) {
  const auto& cfg = spec.interaction;
  const std::size_t d = spec.interaction_dim();
  const std::size_t hk = cfg.heads * kDeformLevels * cfg.sample_points;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = layer_prefix(l);
    switch (cfg.mode) {
      case InteractionMode::deformable:
        add_linear(w, p + ".value", d, d, rng);
        add_linear(w, p + ".offset", d, 2 * hk, rng);
        add_linear(w, p + ".attn", d, hk, rng);
        break;
      case InteractionMode::full:
        add_linear(w, p + ".query", d, d, rng);
        add_linear(w, p + ".key", d, d, rng);
        add_linear(w, p + ".value", d, d, rng);
        break;
      case InteractionMode::none:
        add_conv(w, p + ".conv", 3, d, d, rng);
        break;
    }
    add_linear(w, p + ".out", d, d, rng);
  }
  add_conv(w, "embed.conv", 3, d, spec.embed_dim, rng);
}

struct InteractLayerCache {
  std::array<Matrix, 2> x;         // layer inputs (ref, cur)
  std::array<Matrix, 2> q, k, v;   // projections (full: q,k,v; deformable: v)
  std::array<DeformCache, 2> deform;
  std::array<FullCache, 2> full;
  std::array<Matrix, 2> attended;  // before the output projection
};

struct InteractCache {
  std::size_t h = 0, w = 0;  // stride-16 grid
  std::vector<InteractLayerCache> layers;
  std::array<Tensor, 2> mixed;      // h x w x d after the last layer
  std::array<Tensor, 2> upsampled;  // 2h x 2w x d
};

/// Returns (E_ref, E_cur). Both inputs are stride-16 maps of equal shape.
inline std::pair<Embedding, Embedding> interact_forward(const Tensor& f_ref, const Tensor& f_cur,
                                                        const InteractionConfig& cfg, const Weights& wts,
                                                        InteractCache* cache = nullptr) {
  require(f_ref.rank() == 3 && f_ref.shape() == f_cur.shape(), "interact: reference and current maps differ in shape");
  cfg.validate();
  const std::size_t h = f_ref.dim(0), w = f_ref.dim(1), d = f_ref.dim(2);
  require(d % cfg.heads == 0, "interact: channels not divisible by heads");
  std::array<Matrix, 2> x{numkit::as_matrix(f_ref), numkit::as_matrix(f_cur)};
  if (cache) {
    cache->h = h;
    cache->w = w;
    cache->layers.clear();
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = layer_prefix(l);
    InteractLayerCache lc;
    lc.x = x;
    std::array<Matrix, 2> att;
    switch (cfg.mode) {
      case InteractionMode::deformable: {
        for (int f = 0; f < 2; ++f) lc.v[f] = linear(x[f], wts.at(p + ".value.w"), wts.at(p + ".value.b"));
        for (int f = 0; f < 2; ++f)
          att[f] = deform_attend(x[f], {&lc.v[f], &lc.v[1 - f]}, h, w, cfg.heads, cfg.sample_points, wts, p,
                                 &lc.deform[f]);
        break;
      }
      case InteractionMode::full: {
        for (int f = 0; f < 2; ++f) {
          lc.q[f] = linear(x[f], wts.at(p + ".query.w"), wts.at(p + ".query.b"));
          lc.k[f] = linear(x[f], wts.at(p + ".key.w"), wts.at(p + ".key.b"));
          lc.v[f] = linear(x[f], wts.at(p + ".value.w"), wts.at(p + ".value.b"));
        }
        for (int f = 0; f < 2; ++f)
          att[f] = full_attend(lc.q[f], lc.k[f], lc.k[1 - f], lc.v[f], lc.v[1 - f], cfg.heads, &lc.full[f]);
        break;
      }
      case InteractionMode::none: {
        for (int f = 0; f < 2; ++f) {
          const Tensor grid = numkit::as_hwc(x[f], h, w);
          att[f] = numkit::as_matrix(numkit::conv2d(grid, wts.at(p + ".conv.w"), 1, 1, wts.at(p + ".conv.b").data()));
        }
        break;
      }
    }
    for (int f = 0; f < 2; ++f) {
      Matrix proj = linear(att[f], wts.at(p + ".out.w"), wts.at(p + ".out.b"));
      for (std::size_t i = 0; i < proj.values().size(); ++i) proj.values()[i] += x[f].values()[i];
      x[f] = std::move(proj);
    }
    if (cache) {
      lc.attended = std::move(att);
      cache->layers.push_back(std::move(lc));
    }
  }
  std::array<Embedding, 2> out;
  for (int f = 0; f < 2; ++f) {
    Tensor mixed = numkit::as_hwc(x[f], h, w);
    Tensor up = numkit::bilinear_upsample2x(mixed);
    Tensor e = numkit::conv2d(up, wts.at("embed.conv.w"), 1, 1, wts.at("embed.conv.b").data());
    out[f] = Embedding{2 * h, 2 * w, numkit::as_matrix(e)};
    if (cache) {
      cache->mixed[f] = std::move(mixed);
      cache->upsampled[f] = std::move(up);
    }
  }
  return {std::move(out[0]), std::move(out[1])};
}

inline std::pair<Embedding, Embedding> interact(const Tensor& f_ref, const Tensor& f_cur,
                                                const InteractionConfig& cfg, const Weights& wts) {
  return interact_forward(f_ref, f_cur, cfg, wts, nullptr);
}

/// Adjoint of interact_forward. `d_ref` / `d_cur` are gradients with respect
/// to the embedding matrices. Input-map gradients are written to `d_inputs`
/// when provided.
inline void interact_backward(const InteractCache& cache, const InteractionConfig& cfg, const Weights& wts,
                              const Matrix& d_ref, const Matrix& d_cur, Weights& grads,
                              std::array<Tensor, 2>* d_inputs = nullptr) {
  const std::size_t h = cache.h, w = cache.w;
  std::array<Matrix, 2> dx;
  const std::array<const Matrix*, 2> de{&d_ref, &d_cur};
  for (int f = 0; f < 2; ++f) {
    const Tensor& up = cache.upsampled[f];
    const Tensor de_t = numkit::as_hwc(*de[f], up.dim(0), up.dim(1));
    auto cg = numkit::conv2d_backward(up, wts.at("embed.conv.w"), 1, 1, de_t, true);
    numkit::add_into(grads.slot("embed.conv.w", cg.kernel).values(), cg.kernel.values());
    numkit::add_into(grads.slot("embed.conv.b", wts.at("embed.conv.b")).values(), cg.bias);
    const Tensor dmixed = numkit::resize_bilinear_backward(cg.input, h, w);
    dx[f] = numkit::as_matrix(dmixed);
  }
  for (std::size_t li = cfg.layers; li-- > 0;) {
    const auto& lc = cache.layers[li];
    const std::string p = layer_prefix(li);
    const std::size_t n = lc.x[0].rows(), d = lc.x[0].cols();
    // residual: gradient passes straight through to the layer input
    std::array<Matrix, 2> dxin{dx[0], dx[1]};
    std::array<Matrix, 2> datt;
    for (int f = 0; f < 2; ++f) {
      datt[f] = Matrix(n, d);
      linear_backward(lc.attended[f], wts.at(p + ".out.w"), dx[f], grads.slot(p + ".out.w", wts.at(p + ".out.w")),
                      grads.slot(p + ".out.b", wts.at(p + ".out.b")), &datt[f]);
    }
    switch (cfg.mode) {
      case InteractionMode::deformable: {
        std::array<Matrix, 2> dv{Matrix(n, d), Matrix(n, d)};
        for (int f = 0; f < 2; ++f)
          deform_attend_backward(lc.x[f], {&lc.v[f], &lc.v[1 - f]}, h, w, cfg.heads, cfg.sample_points, wts, p,
                                 lc.deform[f], datt[f], grads, dxin[f], {&dv[f], &dv[1 - f]});
        for (int f = 0; f < 2; ++f)
          linear_backward(lc.x[f], wts.at(p + ".value.w"), dv[f], grads.slot(p + ".value.w", wts.at(p + ".value.w")),
                          grads.slot(p + ".value.b", wts.at(p + ".value.b")), &dxin[f]);
        break;
      }
      case InteractionMode::full: {
        std::array<Matrix, 2> dq{Matrix(n, d), Matrix(n, d)}, dk{Matrix(n, d), Matrix(n, d)},
            dv{Matrix(n, d), Matrix(n, d)};
        for (int f = 0; f < 2; ++f)
          full_attend_backward(lc.q[f], lc.k[f], lc.k[1 - f], lc.v[f], lc.v[1 - f], cfg.heads, lc.full[f], datt[f],
                               dq[f], dk[f], dk[1 - f], dv[f], dv[1 - f]);
        for (int f = 0; f < 2; ++f) {
          linear_backward(lc.x[f], wts.at(p + ".query.w"), dq[f], grads.slot(p + ".query.w", wts.at(p + ".query.w")),
                          grads.slot(p + ".query.b", wts.at(p + ".query.b")), &dxin[f]);
          linear_backward(lc.x[f], wts.at(p + ".key.w"), dk[f], grads.slot(p + ".key.w", wts.at(p + ".key.w")),
                          grads.slot(p + ".key.b", wts.at(p + ".key.b")), &dxin[f]);
          linear_backward(lc.x[f], wts.at(p + ".value.w"), dv[f], grads.slot(p + ".value.w", wts.at(p + ".value.w")),
                          grads.slot(p + ".value.b", wts.at(p + ".value.b")), &dxin[f]);
        }
        break;
      }
      case InteractionMode::none: {
        for (int f = 0; f < 2; ++f) {
          const Tensor grid = numkit::as_hwc(lc.x[f], h, w);
          auto cg = numkit::conv2d_backward(grid, wts.at(p + ".conv.w"), 1, 1, numkit::as_hwc(datt[f], h, w), true);
          numkit::add_into(grads.slot(p + ".conv.w", cg.kernel).values(), cg.kernel.values());
          numkit::add_into(grads.slot(p + ".conv.b", wts.at(p + ".conv.b")).values(), cg.bias);
          numkit::add_into(dxin[f].values(), cg.input.values());
        }
        break;
      }
    }
    dx = std::move(dxin);
  }
  if (d_inputs) {
    for (int f = 0; f < 2; ++f) (*d_inputs)[f] = numkit::as_hwc(dx[f], h, w);
  }
}

}  // namespace unitrack::embed
