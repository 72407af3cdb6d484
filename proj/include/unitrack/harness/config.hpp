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

// key=value config files: one place for every tunable threshold.

#pragma once

#include <string>
#include <vector>

#include "unitrack/harness/formats.hpp"
#include "unitrack/harness/trainer.hpp"
#include "unitrack/tracker.hpp"

namespace unitrack::harness {

inline const std::vector<std::string>& tracker_keys() {
  static const std::vector<std::string> keys{"score_threshold", "nms_iou_threshold", "mask_threshold", "lambda_emb",
                                             "gate_cosine",     "confirm_hits",      "max_misses",     "embedding_ema",
                                             "temperature"};
  return keys;
}

inline const std::vector<std::string>& train_keys() {
  static const std::vector<std::string> keys{"lr",          "mask_lr",       "stage1_steps", "stage2_steps",
                                             "seed",        "pairs_per_task", "max_gap",     "w_corr",
                                             "w_det",       "clip_norm",     "interaction",  "layers",
                                             "heads",       "sample_points", "optimizer",   "batch_pairs",
                                             "cosine_decay", "train_backbone"};
  return keys;
}

/// Keys outside both tables are rejected.
inline void check_config_keys(const KeyValues& kv) {
  std::vector<std::string> all = tracker_keys();
  all.insert(all.end(), train_keys().begin(), train_keys().end());
  kv.check_known(all);
}

inline track::TrackerConfig tracker_config(const KeyValues& kv) {
  check_config_keys(kv);
  track::TrackerConfig c;
  c.head.score_threshold = kv.get<double>("score_threshold", c.head.score_threshold);
  c.head.nms_iou_threshold = kv.get<double>("nms_iou_threshold", c.head.nms_iou_threshold);
  c.head.mask_binarize_threshold = kv.get<double>("mask_threshold", c.head.mask_binarize_threshold);
  c.lambda_emb = kv.get<double>("lambda_emb", c.lambda_emb);
  c.gate_cosine = kv.get<double>("gate_cosine", c.gate_cosine);
  c.confirm_hits = kv.get<std::size_t>("confirm_hits", c.confirm_hits);
  c.max_misses = kv.get<std::size_t>("max_misses", c.max_misses);
  c.embedding_ema = kv.get<double>("embedding_ema", c.embedding_ema);
  if (kv.has("temperature")) c.temperature = kv.get<double>("temperature", 1.0);
  c.validate();
  return c;
}

inline TrainConfig train_config(const KeyValues& kv) {
  check_config_keys(kv);
  TrainConfig c;
  c.lr = kv.get<double>("lr", c.lr);
  c.mask_lr = kv.get<double>("mask_lr", c.mask_lr);
  c.stage1_steps = kv.get<std::size_t>("stage1_steps", c.stage1_steps);
  c.stage2_steps = kv.get<std::size_t>("stage2_steps", c.stage2_steps);
  c.seed = kv.get<std::uint64_t>("seed", c.seed);
  c.pairs_per_task = kv.get<std::size_t>("pairs_per_task", c.pairs_per_task);
  c.max_gap = kv.get<std::size_t>("max_gap", c.max_gap);
  c.w_corr = kv.get<double>("w_corr", c.w_corr);
  c.w_det = kv.get<double>("w_det", c.w_det);
  c.clip_norm = kv.get<double>("clip_norm", c.clip_norm);
  if (kv.has("optimizer")) c.optimizer = optimizer_from_string(kv.get_string("optimizer"));
  c.batch_pairs = kv.get<std::size_t>("batch_pairs", c.batch_pairs);
  c.cosine_decay = kv.get<int>("cosine_decay", c.cosine_decay ? 1 : 0) != 0;
  c.train_backbone = kv.get<int>("train_backbone", c.train_backbone ? 1 : 0) != 0;
  if (kv.has("interaction")) c.model.interaction.mode = interaction_mode_from_string(kv.get_string("interaction"));
  c.model.interaction.layers = kv.get<std::size_t>("layers", c.model.interaction.layers);
  c.model.interaction.heads = kv.get<std::size_t>("heads", c.model.interaction.heads);
  c.model.interaction.sample_points = kv.get<std::size_t>("sample_points", c.model.interaction.sample_points);
  c.validate();
  return c;
}

}  // namespace unitrack::harness
