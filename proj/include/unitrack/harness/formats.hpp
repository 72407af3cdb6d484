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

// Text and binary file formats: RLE masks, MOT-Challenge CSV, PPM frames and
// flat key=value files.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "unitrack/backbone_embed.hpp"
#include "unitrack/errors.hpp"
#include "unitrack/geometry.hpp"

namespace unitrack::harness {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// RLE
// ---------------------------------------------------------------------------

/// Row-major run lengths that alternate 0-runs and 1-runs, starting with a
/// (possibly empty) 0-run.
struct RleMask {
  std::size_t height = 0, width = 0;
  std::vector<std::size_t> counts;
  bool operator==(const RleMask&) const = default;
};

inline RleMask rle_encode(const Mask& m) {
  require(m.data.size() == m.height * m.width, "rle_encode: mask data size differs from dims");
  RleMask r{m.height, m.width, {}};
  std::uint8_t cur = 0;
  std::size_t run = 0;
  for (auto v : m.data) {
    if (v != cur) {
      r.counts.push_back(run);
      run = 0;
      cur = v;
    }
    ++run;
  }
  r.counts.push_back(run);
  return r;
}

inline Mask rle_decode(const RleMask& r) {
  std::size_t total = 0;
  for (auto c : r.counts) total += c;
  require(total == r.height * r.width, "rle_decode: counts do not sum to height*width");
  Mask m(r.height, r.width);
  std::size_t pos = 0;
  std::uint8_t v = 0;
  for (auto c : r.counts) {
    std::fill_n(m.data.begin() + static_cast<long>(pos), c, v);
    pos += c;
    v ^= 1;
  }
  return m;
}

inline std::string rle_to_text(const RleMask& r) {
  std::string s = std::to_string(r.height) + " " + std::to_string(r.width) + "\n";
  for (std::size_t i = 0; i < r.counts.size(); ++i) s += (i ? " " : "") + std::to_string(r.counts[i]);
  return s + "\n";
}

inline RleMask rle_from_text(const std::string& text, const std::string& name = "<rle>") {
  std::istringstream in(text);
  std::string header, body;
  std::getline(in, header);
  std::getline(in, body);
  RleMask r;
  const auto hw = detail::split(detail::trim(header), ' ');
  if (hw.size() != 2 || !detail::parse_number(hw[0], r.height) || !detail::parse_number(hw[1], r.width))
    throw ParseError(name, 1, "expected 'height width'");
  std::istringstream counts(body);
  std::string tok;
  while (counts >> tok) {
    std::size_t c = 0;
    if (!detail::parse_number(std::string_view(tok), c)) throw ParseError(name, 2, "bad run length '" + tok + "'");
    r.counts.push_back(c);
  }
  std::size_t total = 0;
  for (auto c : r.counts) total += c;
  if (total != r.height * r.width) throw ParseError(name, 2, "counts do not sum to height*width");
  return r;
}

inline void write_rle(const std::string& path, const Mask& m) { detail::write_file(path, rle_to_text(rle_encode(m))); }
inline Mask read_rle(const std::string& path) { return rle_decode(rle_from_text(detail::read_file(path), path)); }

// ---------------------------------------------------------------------------
// MOT-Challenge CSV
// ---------------------------------------------------------------------------

struct MotRecord {
  long frame = 1;  // 1-based
  long id = 0;
  double x = 0, y = 0, w = 0, h = 0;  // top-left and size
  double conf = 1;
  int class_id = 1;
  double visibility = 1;

  Box box() const { return Box::from_tlwh(x, y, w, h); }
  bool operator==(const MotRecord&) const = default;
};

inline std::string format_mot_line(const MotRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%ld,%.2f,%.2f,%.2f,%.2f,%.2f,%d,%.2f", r.frame, r.id, r.x, r.y, r.w, r.h, r.conf,
                r.class_id, r.visibility);
  return buf;
}

/// Sorted by (frame, id); values rounded to two decimals.
inline std::string mot_csv_text(std::vector<MotRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const MotRecord& a, const MotRecord& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });
  std::string out;
  for (const auto& r : records) out += format_mot_line(r) + "\n";
  return out;
}

inline std::vector<MotRecord> parse_mot_csv(const std::string& text, const std::string& name = "<csv>") {
  std::vector<MotRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(detail::trim(line), ',');
    if (f.size() != 9) throw ParseError(name, lineno, "expected 9 fields, got " + std::to_string(f.size()));
    MotRecord r;
    const bool ok = detail::parse_number(f[0], r.frame) && detail::parse_number(f[1], r.id) &&
                    detail::parse_number(f[2], r.x) && detail::parse_number(f[3], r.y) &&
                    detail::parse_number(f[4], r.w) && detail::parse_number(f[5], r.h) &&
                    detail::parse_number(f[6], r.conf) && detail::parse_number(f[7], r.class_id) &&
                    detail::parse_number(f[8], r.visibility);
    if (!ok) throw ParseError(name, lineno, "malformed number");
    if (!(r.w > 0 && r.h > 0)) throw ParseError(name, lineno, "box width and height must be positive");
    if (r.frame < 1) throw ParseError(name, lineno, "frame numbers start at 1");
    out.push_back(r);
  }
  return out;
}

inline void write_mot_csv(const std::vector<MotRecord>& records, const std::string& path) {
  detail::write_file(path, mot_csv_text(records));
}

inline std::vector<MotRecord> read_mot_csv(const std::string& path) {
  return parse_mot_csv(detail::read_file(path), path);
}

// ---------------------------------------------------------------------------
// PPM frames (binary P6, 8 bit)
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const embed::Frame& f) {
  std::string data = "P6\n" + std::to_string(f.width()) + " " + std::to_string(f.height()) + "\n255\n";
  data.reserve(data.size() + f.pixels.size());
  for (double v : f.pixels.values()) data.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
  detail::write_file(path, data);
}

inline embed::Frame read_ppm(const std::string& path) {
  const std::string raw = detail::read_file(path);
  std::istringstream in(raw);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || !in || maxval != 255) throw ParseError(path, 1, "expected an 8-bit binary PPM (P6)");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (raw.size() != offset + w * h * 3) throw ParseError(path, 1, "pixel data size mismatch");
  Tensor px = Tensor::hwc(h, w, 3);
  for (std::size_t i = 0; i < w * h * 3; ++i) px[i] = static_cast<std::uint8_t>(raw[offset + i]) / 255.0;
  return embed::Frame::from_pixels(std::move(px));
}

// ---------------------------------------------------------------------------
// key=value files
// ---------------------------------------------------------------------------

/// Flat `key=value` text; `#` starts a comment, blank lines are ignored.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& name = "<config>") {
    KeyValues kv;
    kv.name_ = name;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view s = line;
      if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
      s = detail::trim(s);
      if (s.empty()) continue;
      const auto eq = s.find('=');
      if (eq == std::string_view::npos) throw ParseError(name, lineno, "expected key=value");
      const std::string key(detail::trim(s.substr(0, eq)));
      if (key.empty()) throw ParseError(name, lineno, "empty key");
      if (kv.values_.count(key)) throw ParseError(name, lineno, "duplicate key '" + key + "'");
      kv.values_[key] = std::string(detail::trim(s.substr(eq + 1)));
      kv.lines_[key] = lineno;
    }
    return kv;
  }

  static KeyValues load(const std::string& path) { return parse(detail::read_file(path), path); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <class T>
  T get(const std::string& key, T fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    T v{};
    if (!detail::parse_number(it->second, v)) throw ParseError(name_, line_of(key), "bad value for '" + key + "'");
    return v;
  }

  /// Rejects keys outside `known`.
  void check_known(const std::vector<std::string>& known) const {
    for (const auto& [k, _] : values_)
      if (std::find(known.begin(), known.end(), k) == known.end()) throw ParseError(name_, line_of(k), "unknown key '" + k + "'");
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  std::size_t line_of(const std::string& key) const {
    auto it = lines_.find(key);
    return it == lines_.end() ? 0 : it->second;
  }

 private:
  std::string name_ = "<config>";
  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
};

}  // namespace unitrack::harness
