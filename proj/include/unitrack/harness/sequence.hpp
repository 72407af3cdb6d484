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
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unitrack/backbone_embed.hpp"
#include "unitrack/errors.hpp"
#include "unitrack/geometry.hpp"
#include "unitrack/harness/formats.hpp"
#include "unitrack/weights.hpp"

namespace unitrack::harness {

enum class Shape { rectangle, ellipse };

inline std::string to_string(Shape s) { return s == Shape::rectangle ? "rectangle" : "ellipse"; }

inline Shape shape_from_string(std::string_view s) {
  if (s == "rectangle") return Shape::rectangle;
  if (s == "ellipse") return Shape::ellipse;
  throw InvalidArgument("unknown shape '" + std::string(s) + "'");
}

/// Frames are 1-based and inclusive; the object is hidden for the window.
struct Occlusion {
  long id = 0;
  std::size_t first = 0, last = 0;
};

/// Fully specified object; overrides the seeded draw for that id.
struct ObjectSpec {
  double x = 0, y = 0, w = 0, h = 0;  // top-left on frame 1
  double vx = 0, vy = 0;
  Shape shape = Shape::rectangle;
};

using Rgb = std::array<int, 3>;

struct SequenceSpec {
  std::size_t frames = 30;
  std::size_t height = 128, width = 128;
  std::size_t num_objects = 2;
  std::vector<Shape> shapes{Shape::rectangle, Shape::ellipse};
  double min_size = 16, max_size = 28;
  double min_speed = 0.5, max_speed = 2.5;  // px/frame along x; y uses half
  double jitter = 0.5;
  std::vector<Occlusion> occlusions;
  std::vector<Rgb> colors;                  // per object, 0..255; drawn from a palette when empty
  std::map<long, ObjectSpec> objects;       // explicit objects by id
  Rgb background{40, 40, 40};
  std::uint64_t seed = 1;

  void validate() const {
    require(frames >= 1, "SequenceSpec: frames must be >= 1");
    require(height >= 32 && height % 32 == 0 && width >= 32 && width % 32 == 0,
            "SequenceSpec: height and width must be positive multiples of 32");
    require(num_objects >= 1, "SequenceSpec: num_objects must be >= 1");
    require(!shapes.empty(), "SequenceSpec: no shapes");
    require(min_size >= 2 && max_size >= min_size, "SequenceSpec: bad size range");
    require(min_speed >= 0 && max_speed >= min_speed, "SequenceSpec: bad speed range");
    require(jitter >= 0 && jitter <= 0.5, "SequenceSpec: jitter outside [0, 0.5]");
    require(colors.empty() || colors.size() >= num_objects, "SequenceSpec: fewer colors than objects");
    for (const auto& c : colors)
      for (int v : c) require(v >= 0 && v <= 255, "SequenceSpec: color channel outside 0..255");
    for (const auto& o : occlusions)
      require(o.id >= 1 && o.id <= static_cast<long>(num_objects) && o.first >= 1 && o.last >= o.first,
              "SequenceSpec: bad occlusion window");
    for (const auto& [id, o] : objects)
      require(id >= 1 && id <= static_cast<long>(num_objects) && o.w > 0 && o.h > 0 &&
                  o.w <= static_cast<double>(width) && o.h <= static_cast<double>(height),
              "SequenceSpec: bad explicit object");
  }

  bool occluded(long id, std::size_t frame1) const {
    return std::any_of(occlusions.begin(), occlusions.end(),
                       [&](const Occlusion& o) { return o.id == id && frame1 >= o.first && frame1 <= o.last; });
  }
};

struct GtObject {
  long id = 0;
  Box box;
  Mask mask;
  int class_id = 1;
};

struct SyntheticSequence {
  std::size_t height = 0, width = 0;
  std::vector<embed::Frame> frames;
  std::vector<std::vector<GtObject>> gt;  // per frame, sorted by id
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::array<Rgb, 8> kPalette{{{230, 25, 75},
                                              {60, 180, 75},
                                              {255, 225, 25},
                                              {0, 130, 200},
                                              {245, 130, 48},
                                              {145, 30, 180},
                                              {70, 240, 240},
                                              {240, 50, 230}}};

/// Position after bouncing between lo and hi.
inline double reflect(double p, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double u = std::fmod(p - lo, 2 * span);
  if (u < 0) u += 2 * span;
  return lo + (u > span ? 2 * span - u : u);
}

struct Track {
  ObjectSpec o;
  double y_lo = 0, y_hi = 0;  // allowed top-left y range
  Rgb color{};
};

inline Mask rasterize(Shape shape, const Box& b, std::size_t h, std::size_t w) {
  Mask m(h, w);
  const long y0 = std::max(0L, static_cast<long>(std::floor(b.top())));
  const long y1 = std::min(static_cast<long>(h), static_cast<long>(std::ceil(b.bottom())) + 1);
  const long x0 = std::max(0L, static_cast<long>(std::floor(b.left())));
  const long x1 = std::min(static_cast<long>(w), static_cast<long>(std::ceil(b.right())) + 1);
  for (long y = y0; y < y1; ++y)
    for (long x = x0; x < x1; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      bool in = false;
      if (shape == Shape::rectangle) {
        in = px >= b.left() && px < b.right() && py >= b.top() && py < b.bottom();
      } else {
        const double dx = (px - b.cx) / (b.w / 2), dy = (py - b.cy) / (b.h / 2);
        in = dx * dx + dy * dy <= 1.0;
      }
      if (in) m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
    }
  return m;
}

inline Box clip(const Box& b, std::size_t h, std::size_t w) {
  const double l = std::max(0.0, b.left()), t = std::max(0.0, b.top());
  const double r = std::min(static_cast<double>(w), b.right()), btm = std::min(static_cast<double>(h), b.bottom());
  return Box::from_tlwh(l, t, std::max(0.0, r - l), std::max(0.0, btm - t));
}

}  // namespace detail

/// Deterministic per seed. Seeded objects get their own horizontal lane so
/// they never overlap; explicit objects bounce within the whole frame.
inline SyntheticSequence generate_sequence(const SequenceSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
  const double lane = H / static_cast<double>(spec.num_objects);
  const std::size_t seeded =
      spec.num_objects - static_cast<std::size_t>(std::count_if(spec.objects.begin(), spec.objects.end(), [&](auto& kv) {
        return kv.first <= static_cast<long>(spec.num_objects);
      }));
  if (seeded > 0)
    require(lane - 2 * spec.jitter >= spec.min_size, "generate_sequence: too many objects for the frame height");

  std::vector<Rgb> palette(detail::kPalette.begin(), detail::kPalette.end());
  for (std::size_t i = palette.size(); i > 1; --i) std::swap(palette[i - 1], palette[rng.index(i)]);

  std::vector<detail::Track> tracks(spec.num_objects);
  for (std::size_t i = 0; i < spec.num_objects; ++i) {
    const long id = static_cast<long>(i) + 1;
    auto& t = tracks[i];
    // draws happen for every object so explicit overrides do not shift the others
    const double lane_top = lane * static_cast<double>(i) + spec.jitter;
    const double lane_size = lane - 2 * spec.jitter;
    const double sw = rng.uniform(spec.min_size, spec.max_size);
    const double sh = std::min(rng.uniform(spec.min_size, spec.max_size), lane_size);
    const double x = rng.uniform(0.0, W - sw);
    const double y = lane_top + rng.uniform(0.0, std::max(0.0, lane_size - sh));
    const double sx = rng.uniform() < 0.5 ? -1.0 : 1.0, sy = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double vx = sx * rng.uniform(spec.min_speed, spec.max_speed);
    const double vy = sy * rng.uniform(0.0, spec.max_speed / 2);
    t.o = ObjectSpec{x, y, sw, sh, vx, vy, spec.shapes[i % spec.shapes.size()]};
    t.y_lo = lane_top;
    t.y_hi = lane_top + lane_size - sh;
    if (auto it = spec.objects.find(id); it != spec.objects.end()) {
      t.o = it->second;
      t.y_lo = 0;
      t.y_hi = H - t.o.h;
    }
    if (!spec.colors.empty()) {
      t.color = spec.colors[i];
    } else if (i < palette.size()) {
      t.color = palette[i];
    } else {
      t.color = {static_cast<int>(rng.index(256)), static_cast<int>(rng.index(256)), static_cast<int>(rng.index(256))};
    }
  }

  SyntheticSequence seq;
  seq.height = spec.height;
  seq.width = spec.width;
  for (std::size_t f = 0; f < spec.frames; ++f) {
    const std::size_t frame1 = f + 1;
    Tensor px = Tensor::hwc(spec.height, spec.width, 3);
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x)
        for (std::size_t c = 0; c < 3; ++c) px.at(y, x, c) = spec.background[c] / 255.0;
    std::vector<GtObject> gts;
    for (std::size_t i = 0; i < spec.num_objects; ++i) {
      const auto& t = tracks[i];
      const long id = static_cast<long>(i) + 1;
      const double fx = static_cast<double>(f);
      const double jx = rng.uniform(-spec.jitter, spec.jitter), jy = rng.uniform(-spec.jitter, spec.jitter);
      if (spec.occluded(id, frame1)) continue;
      const double x = detail::reflect(t.o.x + t.o.vx * fx, 0.0, W - t.o.w) + jx;
      const double y = detail::reflect(t.o.y + t.o.vy * fx, t.y_lo, t.y_hi) + jy;
      const Box full = Box::from_tlwh(x, y, t.o.w, t.o.h);
      GtObject g{id, detail::clip(full, spec.height, spec.width), detail::rasterize(t.o.shape, full, spec.height, spec.width), 1};
      for (std::size_t p = 0; p < g.mask.data.size(); ++p)
        if (g.mask.data[p])
          for (std::size_t c = 0; c < 3; ++c) px[p * 3 + c] = t.color[c] / 255.0;
      gts.push_back(std::move(g));
    }
    seq.frames.push_back(embed::Frame::from_pixels(std::move(px)));
    seq.gt.push_back(std::move(gts));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Spec files
// ---------------------------------------------------------------------------

inline SequenceSpec parse_sequence_spec(const KeyValues& kv) {
  SequenceSpec s;
  std::vector<std::string> known{"frames", "height", "width", "num_objects", "shapes", "min_size", "max_size",
                                 "min_speed", "max_speed", "jitter", "occlusions", "colors", "background", "seed"};
  for (const auto& [k, _] : kv.values())
    if (k.rfind("object.", 0) == 0) known.push_back(k);
  kv.check_known(known);
  s.frames = kv.get<std::size_t>("frames", s.frames);
  s.height = kv.get<std::size_t>("height", s.height);
  s.width = kv.get<std::size_t>("width", s.width);
  s.num_objects = kv.get<std::size_t>("num_objects", s.num_objects);
  s.min_size = kv.get<double>("min_size", s.min_size);
  s.max_size = kv.get<double>("max_size", s.max_size);
  s.min_speed = kv.get<double>("min_speed", s.min_speed);
  s.max_speed = kv.get<double>("max_speed", s.max_speed);
  s.jitter = kv.get<double>("jitter", s.jitter);
  s.seed = kv.get<std::uint64_t>("seed", s.seed);
  auto bad = [&](const std::string& key, const std::string& why) { return ParseError("<spec>", kv.line_of(key), why); };
  if (kv.has("shapes")) {
    s.shapes.clear();
    const std::string text = kv.get_string("shapes");
    for (auto tok : detail::split(text, ',')) s.shapes.push_back(shape_from_string(detail::trim(tok)));
  }
  auto parse_rgb = [&](std::string_view text, const std::string& key) {
    Rgb c{};
    const auto parts = detail::split(detail::trim(text), ' ');
    if (parts.size() != 3) throw bad(key, "expected 'r g b'");
    for (int k = 0; k < 3; ++k)
      if (!detail::parse_number(parts[k], c[k])) throw bad(key, "bad color channel");
    return c;
  };
  if (kv.has("colors")) {
    const std::string text = kv.get_string("colors");
    for (auto tok : detail::split(text, ',')) s.colors.push_back(parse_rgb(tok, "colors"));
  }
  if (kv.has("background")) s.background = parse_rgb(kv.get_string("background"), "background");
  if (kv.has("occlusions") && !kv.get_string("occlusions").empty()) {
    // id:first-last, comma separated
    const std::string text = kv.get_string("occlusions");
    for (auto tok : detail::split(text, ',')) {
      Occlusion o;
      const auto colon = tok.find(':');
      const auto dash = tok.find('-', colon == std::string_view::npos ? 0 : colon);
      if (colon == std::string_view::npos || dash == std::string_view::npos ||
          !detail::parse_number(tok.substr(0, colon), o.id) ||
          !detail::parse_number(tok.substr(colon + 1, dash - colon - 1), o.first) ||
          !detail::parse_number(tok.substr(dash + 1), o.last))
        throw bad("occlusions", "expected id:first-last");
      s.occlusions.push_back(o);
    }
  }
  for (const auto& [k, v] : kv.values()) {
    if (k.rfind("object.", 0) != 0) continue;
    long id = 0;
    if (!detail::parse_number(std::string_view(k).substr(7), id)) throw bad(k, "bad object id");
    // x y w h vx vy [shape]
    std::istringstream in(v);
    ObjectSpec o;
    std::string shape;
    if (!(in >> o.x >> o.y >> o.w >> o.h >> o.vx >> o.vy)) throw bad(k, "expected 'x y w h vx vy [shape]'");
    if (in >> shape) o.shape = shape_from_string(shape);
    s.objects[id] = o;
  }
  s.validate();
  return s;
}

inline SequenceSpec load_sequence_spec(const std::string& path) { return parse_sequence_spec(KeyValues::load(path)); }

// ---------------------------------------------------------------------------
// Sequence directories
//
//   meta.cfg                 height, width, frames
//   frames/000001.ppm ...
//   gt.csv                   MOT-Challenge lines, 1-based frames
//   masks/000001_<id>.rle
// ---------------------------------------------------------------------------

inline std::string frame_name(std::size_t frame1) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", frame1);
  return buf;
}

inline std::string mask_name(std::size_t frame1, long id) { return frame_name(frame1) + "_" + std::to_string(id) + ".rle"; }

inline void write_sequence(const std::string& dir, const SyntheticSequence& seq) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "frames");
  fs::create_directories(fs::path(dir) / "masks");
  KeyValues meta;
  meta.set("height", std::to_string(seq.height));
  meta.set("width", std::to_string(seq.width));
  meta.set("frames", std::to_string(seq.frames.size()));
  detail::write_file((fs::path(dir) / "meta.cfg").string(), meta.to_text());
  std::vector<MotRecord> records;
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    write_ppm((fs::path(dir) / "frames" / (frame_name(f + 1) + ".ppm")).string(), seq.frames[f]);
    for (const auto& g : seq.gt[f]) {
      records.push_back(MotRecord{static_cast<long>(f + 1), g.id, g.box.left(), g.box.top(), g.box.w, g.box.h, 1.0,
                                  g.class_id, 1.0});
      write_rle((fs::path(dir) / "masks" / mask_name(f + 1, g.id)).string(), g.mask);
    }
  }
  write_mot_csv(records, (fs::path(dir) / "gt.csv").string());
}

/// Reads frames, boxes and (when present) masks. Boxes come back rounded to
/// two decimals, as stored.
inline SyntheticSequence read_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto meta = KeyValues::load((fs::path(dir) / "meta.cfg").string());
  SyntheticSequence seq;
  seq.height = meta.get<std::size_t>("height", 0);
  seq.width = meta.get<std::size_t>("width", 0);
  const auto n = meta.get<std::size_t>("frames", 0);
  for (std::size_t f = 1; f <= n; ++f) {
    auto frame = read_ppm((fs::path(dir) / "frames" / (frame_name(f) + ".ppm")).string());
    require(frame.height() == seq.height && frame.width() == seq.width, "read_sequence: frame size differs from meta.cfg");
    seq.frames.push_back(std::move(frame));
  }
  seq.gt.assign(n, {});
  const auto gt_path = fs::path(dir) / "gt.csv";
  if (fs::exists(gt_path)) {
    for (const auto& r : read_mot_csv(gt_path.string())) {
      require(r.frame >= 1 && static_cast<std::size_t>(r.frame) <= n, "read_sequence: gt frame out of range");
      GtObject g{r.id, r.box(), Mask(), r.class_id};
      const auto mp = fs::path(dir) / "masks" / mask_name(static_cast<std::size_t>(r.frame), r.id);
      if (fs::exists(mp)) g.mask = read_rle(mp.string());
      seq.gt[static_cast<std::size_t>(r.frame - 1)].push_back(std::move(g));
    }
  }
  return seq;
}

}  // namespace unitrack::harness
