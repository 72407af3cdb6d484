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

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "unitrack/backbone_embed.hpp"
#include "unitrack/model_spec.hpp"
#include "unitrack/unihead.hpp"
#include "unitrack/weights.hpp"

namespace unitrack {

struct Model {
  ModelSpec spec;
  Weights weights;
};

/// Deterministic initialisation: backbone, interaction, head, mask branch,
/// drawn in that order from one seeded stream.
inline Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m{spec, {}};
  Rng rng(seed);
  embed::add_backbone_weights(m.weights, spec, rng);
  embed::add_interaction_weights(m.weights, spec, rng);
  head::add_head_weights(m.weights, spec, rng);
  head::add_mask_weights(m.weights, spec, rng);
  return m;
}

inline bool is_backbone_param(const std::string& name) { return name.rfind("backbone.", 0) == 0; }
inline bool is_mask_param(const std::string& name) { return name.rfind("mask.", 0) == 0; }

inline void save_model(const std::string& path, const Model& m, nlohmann::json extra = nlohmann::json::object()) {
  extra["model"] = m.spec;
  save_weights(path, m.weights, extra);
}

/// Loads a weight file and checks it against the model spec stored in its
/// header: every expected tensor present with the expected shape, no extras.
inline Model load_model(const std::string& path) {
  WeightFile wf = load_weights(path);
  if (!wf.meta.contains("model")) throw ParseError(path, 1, "weight file has no model spec");
  Model m{wf.meta.at("model").get<ModelSpec>(), std::move(wf.weights)};
  const Model expected = init_model(m.spec, 0);
  for (const auto& [name, t] : expected.weights) {
    if (!m.weights.contains(name)) throw ParseError(path, 1, "missing tensor " + name);
    if (m.weights.at(name).shape() != t.shape()) throw ParseError(path, 1, "shape mismatch for " + name);
  }
  if (m.weights.parameter_count() != expected.weights.parameter_count())
    throw ParseError(path, 1, "unexpected tensors in weight file");
  return m;
}

}  // namespace unitrack
