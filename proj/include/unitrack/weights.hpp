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

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unitrack/errors.hpp"
#include "unitrack/numkit.hpp"

namespace unitrack {

using numkit::Matrix;
using numkit::Tensor;

/// Deterministic 64-bit generator. Distributions are derived by hand so the
/// same seed gives the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9E3779B97F4A7C15ull) { next(); }

  std::uint64_t next() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
  double normal() {
    // Box-Muller, one value per call
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

/// Named parameter tensors, iterated in name order.
class Weights {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    auto [it, inserted] = tensors_.insert_or_assign(name, std::move(t));
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InvalidArgument("missing weight tensor '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InvalidArgument("missing weight tensor '" + name + "'");
    return it->second;
  }
  /// Accumulating access used for gradients: creates a zero tensor shaped like
  /// `like` on first use.
  Tensor& slot(const std::string& name, const Tensor& like) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) it = tensors_.emplace(name, Tensor(like.shape())).first;
    return it->second;
  }

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  std::size_t count() const { return tensors_.size(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  /// Zero-valued copy with identical names and shapes.
  Weights zeros_like() const {
    Weights z;
    for (const auto& [name, t] : tensors_) z.add(name, Tensor(t.shape()));
    return z;
  }

  bool operator==(const Weights&) const = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Scaled uniform init: values in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

inline void add_conv(Weights& w, const std::string& prefix, std::size_t k, std::size_t cin,
                     std::size_t cout, Rng& rng) {
  const std::size_t fan_in = k * k * cin;
  w.add(prefix + ".w", uniform_init({k, k, cin, cout}, fan_in, rng));
  w.add(prefix + ".b", uniform_init({cout}, fan_in, rng));
}

inline void add_linear(Weights& w, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  w.add(prefix + ".w", uniform_init({in, out}, in, rng));
  w.add(prefix + ".b", uniform_init({out}, in, rng));
}

// ---------------------------------------------------------------------------
// Weight file: one line of JSON header, '\n', then every tensor's values as
// little-endian IEEE-754 doubles in header order.
// ---------------------------------------------------------------------------

constexpr const char* kWeightFormat = "unitrack-weights";
constexpr int kWeightFormatVersion = 1;

struct WeightFile {
  Weights weights;
  nlohmann::json meta;  // free-form: seed, model spec, ...
};

namespace detail {
inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
  return r;
}
}  // namespace detail

inline void save_weights(const std::string& path, const Weights& weights, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = kWeightFormat;
  header["version"] = kWeightFormatVersion;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : weights) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open weight file for writing: " + path);
  out << header.dump() << '\n';
  for (const auto& [_, t] : weights) {
    for (double v : t.values()) {
      auto bits = detail::to_le(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw std::runtime_error("failed writing weight file: " + path);
}

inline WeightFile load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, 1, std::string("bad header: ") + e.what());
  }
  if (header.value("format", "") != kWeightFormat) throw ParseError(path, 1, "not a unitrack weight file");
  if (header.value("version", 0) != kWeightFormatVersion) throw ParseError(path, 1, "unsupported version");
  WeightFile wf;
  wf.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::vector<double> data(Tensor::element_count(shape));
    for (double& v : data) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
        throw std::runtime_error("weight file truncated: " + path);
      v = std::bit_cast<double>(detail::to_le(bits));
    }
    wf.weights.add(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in weight file: " + path);
  return wf;
}

}  // namespace unitrack
