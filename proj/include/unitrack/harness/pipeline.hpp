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

// File-level pipeline steps behind the CLI: track a sequence directory into
// result files, and score result files against a sequence's ground truth.

#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "unitrack/evalkit.hpp"
#include "unitrack/harness/formats.hpp"
#include "unitrack/harness/sequence.hpp"
#include "unitrack/model.hpp"
#include "unitrack/tracker.hpp"

namespace unitrack::harness {

namespace fs = std::filesystem;

/// The object tracked in SOT/VOS runs: `requested`, or the lowest id present
/// on the first frame.
inline long pick_target(const SyntheticSequence& seq, std::optional<long> requested) {
  require(!seq.frames.empty() && !seq.gt.empty() && !seq.gt[0].empty(), "track: first frame has no ground-truth object");
  if (requested) {
    for (const auto& g : seq.gt[0])
      if (g.id == *requested) return g.id;
    throw InvalidArgument("track: target " + std::to_string(*requested) + " is not on the first frame");
  }
  long best = seq.gt[0][0].id;
  for (const auto& g : seq.gt[0]) best = std::min(best, g.id);
  return best;
}

inline const GtObject& gt_object(const SyntheticSequence& seq, std::size_t frame, long id) {
  for (const auto& g : seq.gt[frame])
    if (g.id == id) return g;
  throw InvalidArgument("missing ground truth for id " + std::to_string(id));
}

inline MotRecord record_of(std::size_t frame1, long id, const Box& b, double conf, int class_id) {
  return MotRecord{static_cast<long>(frame1), id, b.left(), b.top(), std::max(b.w, 0.01), std::max(b.h, 0.01), conf,
                   class_id, 1.0};
}

/// Writes `results.csv` (and `masks/` for vos/mots) into `out_dir`. SOT/VOS
/// runs start from the first-frame ground truth of the target.
inline void run_track(corr::TaskKind task, const SyntheticSequence& seq, std::shared_ptr<const Model> model,
                      const track::TrackerConfig& cfg, const std::string& out_dir,
                      std::optional<long> target = std::nullopt) {
  fs::create_directories(out_dir);
  const bool masks = task == corr::TaskKind::vos || task == corr::TaskKind::mots;
  if (masks) fs::create_directories(fs::path(out_dir) / "masks");
  std::vector<MotRecord> records;
  auto save_mask = [&](std::size_t frame1, long id, const Mask& m) {
    write_rle((fs::path(out_dir) / "masks" / mask_name(frame1, id)).string(), m);
  };

  if (corr::is_propagation_task(task)) {
    const long id = pick_target(seq, target);
    const GtObject& first = gt_object(seq, 0, id);
    track::TrackerState st = task == corr::TaskKind::vos
                                 ? track::init_sot(model, seq.frames[0], first.mask, task, cfg)
                                 : track::init_sot(model, seq.frames[0], first.box, task, cfg);
    records.push_back(record_of(1, id, first.box, 1.0, first.class_id));
    if (masks) save_mask(1, id, first.mask);
    for (std::size_t f = 1; f < seq.frames.size(); ++f) {
      const auto out = track::track_sot(st, seq.frames[f]);
      records.push_back(record_of(f + 1, id, out.box, out.score, 1));
      if (masks) save_mask(f + 1, id, out.mask ? *out.mask : Mask(seq.height, seq.width));
    }
  } else {
    track::TrackerState st = track::init_mot(model, task, cfg);
    for (std::size_t f = 0; f < seq.frames.size(); ++f) {
      for (const auto& o : track::step_mot(st, seq.frames[f])) {
        records.push_back(record_of(f + 1, o.id, o.det.box, o.det.score, o.det.class_id));
        if (masks && o.det.mask) save_mask(f + 1, o.id, *o.det.mask);
      }
    }
  }
  write_mot_csv(records, (fs::path(out_dir) / "results.csv").string());
}

/// Scores `results_dir` against the sequence. SOT/VOS skip the first frame,
/// which is given to the tracker.
inline eval::MetricReport run_eval(corr::TaskKind task, const std::string& results_dir, const SyntheticSequence& seq) {
  const auto records = read_mot_csv((fs::path(results_dir) / "results.csv").string());
  const std::size_t n = seq.frames.size();
  std::vector<std::vector<MotRecord>> by_frame(n);
  for (const auto& r : records) {
    require(r.frame >= 1 && static_cast<std::size_t>(r.frame) <= n, "eval: result frame outside the sequence");
    by_frame[static_cast<std::size_t>(r.frame - 1)].push_back(r);
  }
  auto load_mask = [&](std::size_t frame1, long id) {
    const auto p = fs::path(results_dir) / "masks" / mask_name(frame1, id);
    return fs::exists(p) ? read_rle(p.string()) : Mask(seq.height, seq.width);
  };

  if (corr::is_propagation_task(task)) {
    require(!records.empty(), "eval: no results");
    const long id = records.front().id;
    std::vector<Box> pb, gb;
    std::vector<Mask> pm, gm;
    for (std::size_t f = 1; f < n; ++f) {
      const GtObject* g = nullptr;
      for (const auto& o : seq.gt[f])
        if (o.id == id) g = &o;
      if (!g) continue;
      const MotRecord* r = nullptr;
      for (const auto& rec : by_frame[f])
        if (rec.id == id) r = &rec;
      require(r != nullptr, "eval: no result for frame " + std::to_string(f + 1));
      pb.push_back(r->box());
      gb.push_back(g->box);
      if (task == corr::TaskKind::vos) {
        pm.push_back(load_mask(f + 1, id));
        gm.push_back(g->mask);
      }
    }
    return task == corr::TaskKind::sot ? eval::sot_success_auc(pb, gb) : eval::vos_jf(pm, gm);
  }

  if (task == corr::TaskKind::mot) {
    std::vector<std::vector<eval::IdBox>> pred(n), gt(n);
    for (std::size_t f = 0; f < n; ++f) {
      for (const auto& r : by_frame[f]) pred[f].push_back({r.id, r.box()});
      for (const auto& g : seq.gt[f]) gt[f].push_back({g.id, g.box});
    }
    return eval::mot_clear(pred, gt);
  }
  std::vector<std::vector<eval::IdMask>> pred(n), gt(n);
  for (std::size_t f = 0; f < n; ++f) {
    for (const auto& r : by_frame[f]) pred[f].push_back({r.id, load_mask(f + 1, r.id)});
    for (const auto& g : seq.gt[f]) gt[f].push_back({g.id, g.mask});
  }
  return eval::mots_smotsa(pred, gt);
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// metrics.txt and metrics.json; the JSON carries a generation timestamp
/// unless `deterministic` is set.
inline void write_report(const eval::MetricReport& r, const std::string& out_dir, bool deterministic) {
  fs::create_directories(out_dir);
  detail::write_file((fs::path(out_dir) / "metrics.txt").string(), r.to_text());
  auto j = r.to_json();
  if (!deterministic) j["generated_at"] = utc_timestamp();
  detail::write_file((fs::path(out_dir) / "metrics.json").string(), j.dump(2) + "\n");
}

}  // namespace unitrack::harness
