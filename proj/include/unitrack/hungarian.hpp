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
#include <limits>
#include <utility>
#include <vector>

#include "unitrack/errors.hpp"
#include "unitrack/numkit.hpp"

namespace unitrack::track {

using numkit::Matrix;

/// Cost assigned to gated-out pairs.
inline constexpr double kGateSentinel = 1e6;

/// Minimum-cost assignment for a rectangular cost matrix (potentials /
/// shortest augmenting path, O(n^2 m)). Returns (row, col) pairs sorted by
/// row; pairs whose cost is >= sentinel / 2 are dropped as unmatched.
inline std::vector<std::pair<std::size_t, std::size_t>> hungarian(const Matrix& cost,
                                                                  double sentinel = kGateSentinel) {
  for (double v : cost.data()) require(std::isfinite(v), "hungarian: non-finite cost");
  const bool transposed = cost.rows() > cost.cols();
  const Matrix a = transposed ? numkit::transpose(cost) : cost;
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<std::pair<std::size_t, std::size_t>> result;
  if (n == 0 || m == 0) return result;

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);  // p[j]: row matched to column j (1-based)
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t r = p[j] - 1, c = j - 1;
    if (a(r, c) >= sentinel / 2) continue;
    result.emplace_back(transposed ? c : r, transposed ? r : c);
  }
  std::sort(result.begin(), result.end());
  return result;
}

}  // namespace unitrack::track
