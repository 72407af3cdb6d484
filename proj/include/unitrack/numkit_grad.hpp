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

// Hand-derived adjoints of the numkit forward kernels. There is no tape:
// callers keep whatever forward activations they need and chain these
// explicitly.

#pragma once

#include "unitrack/numkit.hpp"

namespace unitrack::numkit {

struct ConvGrads {
  Tensor input;   // empty unless requested
  Tensor kernel;
  std::vector<double> bias;
};

inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, std::size_t stride,
                                 std::size_t pad, const Tensor& grad_out, bool want_input_grad) {
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  const std::size_t oh = grad_out.dim(0), ow = grad_out.dim(1);
  require(grad_out.dim(2) == cout, "conv2d_backward: gradient channels differ from cout");
  ConvGrads g;
  g.kernel = Tensor(kernel.shape());
  g.bias.assign(cout, 0.0);
  if (want_input_grad) g.input = Tensor(input.shape());
  const auto& in = input.values();
  const auto& k = kernel.values();
  auto& gk = g.kernel.values();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double* __restrict go = &grad_out.values()[(oy * ow + ox) * cout];
      for (std::size_t co = 0; co < cout; ++co) g.bias[co] += go[co];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const std::size_t base = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
          const std::size_t kbase = (ky * kw + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = in[base + ci];
            double* __restrict gkr = &gk[kbase + ci * cout];
            const double* __restrict kr = &k[kbase + ci * cout];
            double acc = 0.0;
            for (std::size_t co = 0; co < cout; ++co) {
              gkr[co] += v * go[co];
              acc += kr[co] * go[co];
            }
            if (want_input_grad) g.input.values()[base + ci] += acc;
          }
        }
      }
    }
  }
  return g;
}

/// Masks `grad` by the positive support of a ReLU output.
inline Tensor relu_backward(const Tensor& relu_out, Tensor grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (relu_out[i] <= 0.0) grad[i] = 0.0;
  return grad;
}

/// Gradient of row-wise softmax(z / temperature) with respect to z, given the
/// softmax output and the gradient with respect to it.
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_probs, double temperature) {
  Matrix gz(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) dot += probs(r, c) * grad_probs(r, c);
    for (std::size_t c = 0; c < probs.cols(); ++c)
      gz(r, c) = probs(r, c) * (grad_probs(r, c) - dot) / temperature;
  }
  return gz;
}

/// Gradient of group_norm without affine terms with respect to its input.
inline Tensor group_norm_backward(const Tensor& input, std::size_t groups, double eps, const Tensor& grad_out) {
  require(input.rank() == 3 && grad_out.shape() == input.shape(), "group_norm_backward: shape mismatch");
  const std::size_t c = input.dim(2);
  require(groups >= 1 && c % groups == 0, "group_norm_backward: channels not divisible by groups");
  const std::size_t per = c / groups;
  const std::size_t pixels = input.dim(0) * input.dim(1);
  const double n = static_cast<double>(pixels * per);
  Tensor gin(input.shape());
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
    if (!(denom > 0.0)) continue;
    double gmean = 0.0, gxhat = 0.0;
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch) {
        const double xhat = (input[p * c + ch] - mean) / denom;
        gmean += grad_out[p * c + ch];
        gxhat += grad_out[p * c + ch] * xhat;
      }
    gmean /= n;
    gxhat /= n;
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch) {
        const double xhat = (input[p * c + ch] - mean) / denom;
        gin[p * c + ch] = (grad_out[p * c + ch] - gmean - xhat * gxhat) / denom;
      }
  }
  return gin;
}

inline void add_into(std::span<double> dst, std::span<const double> src) {
  require(dst.size() == src.size(), "add_into: length mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace unitrack::numkit
