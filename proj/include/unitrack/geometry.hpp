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
#include <cstdint>
#include <optional>
#include <vector>

namespace unitrack {

/// Axis-aligned box in pixels, centre + size.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  static Box from_tlwh(double x, double y, double w, double h) { return {x + w / 2, y + h / 2, w, h}; }
  double left() const { return cx - w / 2; }
  double top() const { return cy - h / 2; }
  double right() const { return cx + w / 2; }
  double bottom() const { return cy + h / 2; }
  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  return (iw > 0 && ih > 0) ? iw * ih : 0.0;
}

/// Intersection over union; an empty union gives 0.
inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Integer cell on a strided grid.
struct GridCell {
  std::size_t row = 0, col = 0;
  bool operator==(const GridCell&) const = default;
};


/// Binary mask, row-major, one byte per pixel holding 0 or 1.
struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::size_t area() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
  bool operator==(const Mask&) const = default;

  /// Tight pixel bounding box as (x, y, w, h) edges; nullopt for an empty mask.
  std::optional<Box> bounding_box() const {
    std::size_t x0 = width, y0 = height, x1 = 0, y1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        if (at(y, x)) {
          any = true;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x + 1);
          y1 = std::max(y1, y + 1);
        }
    if (!any) return std::nullopt;
    return Box::from_tlwh(double(x0), double(y0), double(x1 - x0), double(y1 - y0));
  }
};

}  // namespace unitrack
