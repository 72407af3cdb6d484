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

// Dense row-major kernels shared by every other module. Feature maps are
// stored HWC (height, width, channels) with channels innermost.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "unitrack/errors.hpp"

namespace unitrack::numkit {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(element_count(shape_) == data_.size(), "Tensor: shape/data size mismatch");
    for (double v : data_) require(std::isfinite(v), "Tensor: non-finite value");
  }

  static Tensor hwc(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0) {
    return Tensor({h, w, c}, fill);
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // HWC accessors; only valid on rank-3 tensors.
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  bool operator==(const Tensor&) const = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(rows_ * cols_ == data_.size(), "Matrix: rows*cols != data size");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      require(r.size() == cols_, "Matrix: ragged initializer");
      for (double v : r) {
        require(std::isfinite(v), "Matrix: non-finite literal");
        data_.push_back(v);
      }
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  require(a.cols() > 0, "matmul: empty inner dimension");
  Matrix out(a.rows(), b.cols());
  const std::size_t k_dim = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < k_dim; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

/// a * b^T without materialising the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  require(a.cols() > 0, "matmul_nt: empty inner dimension");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

inline void softmax_inplace(std::span<double> row, double temperature = 1.0) {
  if (row.empty()) return;
  double mx = row[0] / temperature;
  for (double v : row) mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v / temperature - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

inline Matrix softmax_rows(const Matrix& m, double temperature = 1.0) {
  require(temperature > 0.0, "softmax_rows: temperature must be positive");
  for (double v : m.data()) require(std::isfinite(v), "softmax_rows: non-finite input");
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r), temperature);
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Kernel layout is [kh][kw][cin][cout]; bias (optional) has cout entries.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                     std::size_t pad, std::span<const double> bias = {}) {
  require(input.rank() == 3 && kernel.rank() == 4, "conv2d: expected HWC input and 4-d kernel");
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  require(kernel.dim(2) == cin, "conv2d: kernel input channels differ from input");
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extent must be odd");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(bias.empty() || bias.size() == cout, "conv2d: bias length differs from cout");
  const long oh_l = (static_cast<long>(h + 2 * pad) - static_cast<long>(kh)) / static_cast<long>(stride) + 1;
  const long ow_l = (static_cast<long>(w + 2 * pad) - static_cast<long>(kw)) / static_cast<long>(stride) + 1;
  require(h + 2 * pad >= kh && w + 2 * pad >= kw && oh_l >= 1 && ow_l >= 1,
          "conv2d: output size < 1");
  const auto oh = static_cast<std::size_t>(oh_l), ow = static_cast<std::size_t>(ow_l);
  Tensor out = Tensor::hwc(oh, ow, cout);
  const auto& in = input.values();
  const auto& k = kernel.values();
  std::vector<double> acc(cout);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      if (bias.empty()) std::fill(acc.begin(), acc.end(), 0.0);
      else std::copy(bias.begin(), bias.end(), acc.begin());
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const double* px = &in[(static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin];
          const double* kp = &k[(ky * kw + kx) * cin * cout];
          double* __restrict a = acc.data();
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = px[ci];
            if (v == 0.0) continue;
            const double* __restrict kr = kp + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) a[co] += v * kr[co];
          }
        }
      }
      std::copy(acc.begin(), acc.end(), &out.values()[(oy * ow + ox) * cout]);
    }
  }
  return out;
}

namespace detail {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Source taps for resizing an axis from `in` to `out` samples, half-pixel
// centres (align_corners = false), clamped at the borders.
inline std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 >= in - 1) {
      taps[d] = {in - 1, in - 1, 0.0};
    } else {
      taps[d] = {i0, i0 + 1, src - static_cast<double>(i0)};
    }
  }
  return taps;
}

}  // namespace detail

inline Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require(input.rank() == 3, "resize_bilinear: expected HWC input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  require(h >= 1 && w >= 1 && out_h >= 1 && out_w >= 1, "resize_bilinear: empty extent");
  const auto ty = detail::resize_taps(h, out_h);
  const auto tx = detail::resize_taps(w, out_w);
  Tensor out = Tensor::hwc(out_h, out_w, c);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [y0, y1, wy] = ty[y];
      const auto [x0, x1, wx] = tx[x];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = input.at(y0, x0, ch) * (1.0 - wx) + input.at(y0, x1, ch) * wx;
        const double bot = input.at(y1, x0, ch) * (1.0 - wx) + input.at(y1, x1, ch) * wx;
        out.at(y, x, ch) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

/// Adjoint of resize_bilinear: scatters an output-space gradient back to the input grid.
inline Tensor resize_bilinear_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w) {
  const std::size_t out_h = grad_out.dim(0), out_w = grad_out.dim(1), c = grad_out.dim(2);
  const auto ty = detail::resize_taps(in_h, out_h);
  const auto tx = detail::resize_taps(in_w, out_w);
  Tensor gin = Tensor::hwc(in_h, in_w, c);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [y0, y1, wy] = ty[y];
      const auto [x0, x1, wx] = tx[x];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = grad_out.at(y, x, ch);
        gin.at(y0, x0, ch) += g * (1.0 - wy) * (1.0 - wx);
        gin.at(y0, x1, ch) += g * (1.0 - wy) * wx;
        gin.at(y1, x0, ch) += g * wy * (1.0 - wx);
        gin.at(y1, x1, ch) += g * wy * wx;
      }
    }
  }
  return gin;
}

inline Tensor bilinear_upsample2x(const Tensor& input) {
  require(input.rank() == 3 && input.dim(0) >= 1 && input.dim(1) >= 1,
          "bilinear_upsample2x: expected non-empty HWC input");
  return resize_bilinear(input, 2 * input.dim(0), 2 * input.dim(1));
}

/// Normalises each channel group over (h, w, channels-in-group), then applies
/// the optional per-channel affine (gamma, beta).
inline Tensor group_norm(const Tensor& input, std::size_t groups, double eps,
                         std::span<const double> gamma = {}, std::span<const double> beta = {}) {
  require(input.rank() == 3, "group_norm: expected HWC input");
  const std::size_t c = input.dim(2);
  require(groups >= 1 && c % groups == 0, "group_norm: channels not divisible by groups");
  require(gamma.empty() || gamma.size() == c, "group_norm: gamma length");
  require(beta.empty() || beta.size() == c, "group_norm: beta length");
  const std::size_t per = c / groups;
  const std::size_t pixels = input.dim(0) * input.dim(1);
  const double n = static_cast<double>(pixels * per);
  Tensor out = input;
  for (std::size_t g = 0; g < groups; ++g) {
    double mean = 0.0;
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch) mean += input[p * c + ch];
    mean /= n;
    double var = 0.0;
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch) {
        const double d = input[p * c + ch] - mean;
        var += d * d;
      }
    var /= n;
    const double denom = std::sqrt(var + eps);
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch) {
        double v = denom > 0.0 ? (input[p * c + ch] - mean) / denom : 0.0;
        if (!gamma.empty()) v *= gamma[ch];
        if (!beta.empty()) v += beta[ch];
        out[p * c + ch] = v;
      }
  }
  return out;
}

inline Tensor relu(Tensor t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
  return t;
}

inline Matrix as_matrix(const Tensor& hwc) {
  require(hwc.rank() == 3, "as_matrix: expected HWC tensor");
  return Matrix(hwc.dim(0) * hwc.dim(1), hwc.dim(2), hwc.values());
}

inline Tensor as_hwc(const Matrix& m, std::size_t h, std::size_t w) {
  require(m.rows() == h * w, "as_hwc: row count differs from h*w");
  return Tensor({h, w, m.cols()}, m.values());
}

}  // namespace unitrack::numkit
