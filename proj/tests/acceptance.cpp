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
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. argv[1] is a scratch directory.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unitrack/correspondence.hpp"
#include "unitrack/evalkit.hpp"
#include "unitrack/harness/formats.hpp"
#include "unitrack/harness/sequence.hpp"
#include "unitrack/harness/trainer.hpp"
#include "unitrack/hungarian.hpp"
#include "unitrack/losses.hpp"
#include "unitrack/model.hpp"
#include "unitrack/unihead.hpp"

namespace {

using namespace unitrack;
namespace fs = std::filesystem;
using numkit::Matrix;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// --- CLI plumbing ---------------------------------------------------------------

struct Cli {
  fs::path work;

  int run(const std::string& args, const std::string& log_name) const {
    const fs::path log = work / (log_name + ".log");
    const std::string cmd = std::string("\"") + UNITRACK_CLI_PATH + "\" " + args + " >\"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json metrics_of(const fs::path& report_dir) {
  return nlohmann::json::parse(slurp(report_dir / "metrics.json")).at("metrics");
}

/// Relative path -> bytes for every regular file under `root`.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

// --- random inputs ----------------------------------------------------------------

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo, double hi) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

embed::Embedding random_embedding(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  return embed::Embedding{h, w, random_matrix(h * w, c, rng, -1, 1)};
}

std::vector<Box> random_boxes(std::size_t n, std::size_t grid, Rng& rng) {
  std::vector<Box> out;
  const double extent = static_cast<double>(grid * embed::kEmbedStride);
  for (std::size_t i = 0; i < n; ++i) out.push_back(Box{rng.uniform(0, extent - 1e-6), rng.uniform(0, extent - 1e-6), 6, 6});
  return out;
}

double max_row_sum_error(const Matrix& c) {
  double worst = 0;
  for (std::size_t r = 0; r < c.rows(); ++r) {
    double s = 0;
    for (std::size_t k = 0; k < c.cols(); ++k) s += c(r, k);
    worst = std::max(worst, std::abs(s - 1));
  }
  return worst;
}

// --- criteria 1-6 -----------------------------------------------------------------

Verdict correspondence_algebra() {
  Rng rng(101);
  double worst = 0;
  bool maps_ok = true;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t g = 2 + rng.index(7), c = 4 + rng.index(29);
    const auto a = random_embedding(g, g, c, rng), b = random_embedding(g, g, c, rng);
    const auto pc = corr::pixel_correspondence(a, b);
    worst = std::max(worst, max_row_sum_error(pc.c));
    const auto ia = corr::extract_instance_embeddings(a, random_boxes(1 + rng.index(5), g, rng));
    const auto ib = corr::extract_instance_embeddings(b, random_boxes(1 + rng.index(5), g, rng));
    worst = std::max(worst, max_row_sum_error(corr::instance_correspondence(ia, ib).c));
    for (double v : {0.0, 1.0}) {
      const auto t = corr::TargetMap::from_values(std::vector<double>(g * g, v), true);
      maps_ok = maps_ok && corr::propagate(pc, t).t == t.t;
    }
  }
  return {worst <= 1e-9 && maps_ok, "max row-sum error " + fmt("%.3g", worst) + (maps_ok ? ", constant maps kept" : ", constant map changed")};
}

Verdict submatrix_property() {
  Rng rng(202);
  std::size_t mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t c = 4 + rng.index(29);
    const auto a = random_embedding(4, 4, c, rng), b = random_embedding(4, 4, c, rng);
    const auto ia = corr::extract_instance_embeddings(a, random_boxes(1 + rng.index(6), 4, rng));
    const auto ib = corr::extract_instance_embeddings(b, random_boxes(1 + rng.index(6), 4, rng));
    const auto pc = corr::pixel_correspondence(a, b);
    const auto ic = corr::instance_correspondence(ia, ib);
    for (std::size_t r = 0; r < ia.centers.size(); ++r)
      for (std::size_t k = 0; k < ib.centers.size(); ++k) {
        const std::size_t pr = ia.centers[r].row * 4 + ia.centers[r].col;
        const std::size_t pk = ib.centers[k].row * 4 + ib.centers[k].col;
        mismatches += ic.logits(r, k) != pc.logits(pr, pk);
      }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatching logits"};
}

bool same_detection(const head::Detection& a, const head::Detection& b) {
  return a.box == b.box && a.score == b.score && a.class_id == b.class_id && a.level == b.level &&
         a.level_cell.row == b.level_cell.row && a.level_cell.col == b.level_cell.col &&
         a.embedding_cell.row == b.embedding_cell.row && a.embedding_cell.col == b.embedding_cell.col;
}

Verdict prior_zero_degeneration() {
  Rng rng(303);
  Model m = init_model(ModelSpec{}, 303);
  // neutral biases so the seeded head actually produces detections to compare
  for (const char* name : {"head.obj_pred.b", "head.cls_pred.b"})
    for (double& v : m.weights.at(name).values()) v = 0.0;
  head::HeadConfig hc;
  hc.score_threshold = 0.01;
  std::size_t differing = 0, total = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t g = 4 + 4 * rng.index(3);
    embed::FeaturePyramid pyr;
    for (std::size_t l = 0; l < 3; ++l) {
      pyr.levels[l] = Tensor::hwc(std::max<std::size_t>(1, g >> l), std::max<std::size_t>(1, g >> l), m.spec.level_channels(l));
      for (auto& v : pyr.levels[l].values()) v = rng.uniform(-1, 3);
    }
    const auto zero = corr::make_target_prior(std::nullopt, corr::TaskKind::mot, g, g);
    const auto a = head::detect(head::fuse_pyramid(pyr, zero), m.weights, hc);
    const auto b = head::detect(head::unfused(pyr), m.weights, hc);
    total += b.size();
    if (a.size() != b.size()) {
      ++differing;
      continue;
    }
    for (std::size_t k = 0; k < a.size(); ++k)
      if (!same_detection(a[k], b[k])) {
        ++differing;
        break;
      }
  }
  return {differing == 0 && total > 0, std::to_string(differing) + " differing feature sets, " + std::to_string(total) + " detections compared"};
}

Verdict gradient_fidelity() {
  Rng rng(404);
  double dice = 0, ce = 0, det = 0, mask = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rng.index(40);
    std::vector<double> p(n), z(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(0.1, 0.9);
      z[i] = rng.uniform(-3, 3);
      g[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    dice = std::max(dice, loss::finite_diff_check([&](std::span<const double> x) { return loss::dice_loss(x, g); }, p, 1e-5));
    mask = std::max(mask, loss::finite_diff_check([&](std::span<const double> x) { return loss::mask_loss(x, g); }, z, 1e-5));

    const std::size_t rows = 1 + rng.index(5), cols = 1 + rng.index(6);
    std::vector<long> ref_ids(cols), cur_ids(rows);
    std::iota(ref_ids.begin(), ref_ids.end(), 1);
    for (auto& id : cur_ids) id = 1 + static_cast<long>(rng.index(cols + 2));  // some ids are new
    cur_ids[0] = ref_ids[rng.index(cols)];
    std::sort(cur_ids.begin(), cur_ids.end());
    cur_ids.erase(std::unique(cur_ids.begin(), cur_ids.end()), cur_ids.end());
    const auto gm = corr::ground_truth_match(cur_ids, ref_ids);
    std::vector<double> logits(cur_ids.size() * cols);
    for (auto& v : logits) v = rng.uniform(-3, 3);
    const double temp = rng.uniform(0.5, 2);
    ce = std::max(ce, loss::finite_diff_check(
                          [&](std::span<const double> x) {
                            return loss::contrastive_ce_loss(Matrix(cur_ids.size(), cols, {x.begin(), x.end()}), gm, temp);
                          },
                          logits, 1e-5));

    std::vector<Tensor> like;
    for (std::size_t s : {4u, 2u, 1u}) like.push_back(Tensor::hwc(s, s, head::kCls + 1));
    std::vector<loss::GroundTruthBox> gts;
    for (std::size_t i = 0, k = 1 + rng.index(3); i < k; ++i)
      gts.push_back({Box{rng.uniform(4, 28), rng.uniform(4, 28), rng.uniform(4, 24), rng.uniform(4, 24)}, 1});
    std::vector<double> raw;
    for (const auto& t : like)
      for (std::size_t i = 0; i < t.size(); ++i) raw.push_back(rng.uniform(-2, 2));
    det = std::max(det, loss::finite_diff_check(
                            [&](std::span<const double> x) { return loss::detection_loss(loss::split_like(x, like), gts); },
                            raw, 1e-6));
  }
  const double worst = std::max({dice, ce, det, mask});
  return {worst < 1e-4, "max relative error dice " + fmt("%.2g", dice) + ", ce " + fmt("%.2g", ce) + ", detection " +
                            fmt("%.2g", det) + ", mask " + fmt("%.2g", mask)};
}

double brute_force_min(const Matrix& cost) {
  const bool t = cost.rows() > cost.cols();
  const Matrix a = t ? numkit::transpose(cost) : cost;
  std::vector<std::size_t> cols(a.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, cols[r]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

Verdict assignment_optimality() {
  Rng rng(505);
  std::size_t wrong = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t r = 1 + rng.index(7), c = 1 + rng.index(7);
    // integer costs keep every permutation sum exact
    Matrix cost(r, c);
    for (auto& v : cost.data()) v = static_cast<double>(rng.index(20));
    double got = 0;
    const auto pairs = track::hungarian(cost);
    for (const auto& [a, b] : pairs) got += cost(a, b);
    wrong += pairs.size() != std::min(r, c) || got != brute_force_min(cost);
  }
  return {wrong == 0, std::to_string(wrong) + " of 200 suboptimal"};
}

Verdict metric_oracles() {
  const Box a = Box::from_tlwh(0, 0, 10, 10), b = Box::from_tlwh(50, 50, 10, 10), far = Box::from_tlwh(90, 0, 5, 5);
  // frame 2 adds a false positive, frame 3 misses object 2 and relabels object 1
  const std::vector<std::vector<eval::IdBox>> gt{{{1, a}, {2, b}}, {{1, a}, {2, b}}, {{1, a}, {2, b}}};
  const std::vector<std::vector<eval::IdBox>> pr{{{1, a}, {2, b}}, {{1, a}, {2, b}, {3, far}}, {{4, a}}};
  const double mota = eval::mot_clear(pr, gt).at("mota");

  std::vector<Box> pb, gb;
  for (int i = 0; i < 10; ++i) {
    gb.push_back(Box::from_tlwh(i, 0, 2, 1));
    pb.push_back(Box::from_tlwh(i, 0, 1, 1));
  }
  const double auc = eval::sot_success_auc(pb, gb).at("auc");

  Mask gm(1, 5), pm(1, 5);
  gm.data = {1, 1, 1, 1, 1};
  pm.data = {1, 1, 1, 1, 0};
  const double smotsa = eval::mots_smotsa({{{1, pm}}}, {{{1, gm}}}).at("smotsa");

  const bool ok = std::abs(mota - 0.5) <= 1e-9 && std::abs(auc - 11.0 / 21.0) <= 1e-9 && std::abs(smotsa - 0.8) <= 1e-9;
  return {ok, "mota " + fmt("%.12g", mota) + ", auc " + fmt("%.12g", auc) + ", smotsa " + fmt("%.12g", smotsa)};
}

// --- criteria 7-10 ----------------------------------------------------------------

struct Pipeline {
  Cli cli;
  fs::path weights, seq, tracker_cfg;
  bool trained = false;
  double train_seconds = 0;
  std::size_t stage1_steps = 0;

  /// track + eval for one task; returns the metrics or null on a CLI failure.
  nlohmann::json track_eval(const std::string& task, double* seconds = nullptr) const {
    const fs::path res = cli.work / ("results_" + task), rep = cli.work / ("report_" + task);
    const auto t0 = Clock::now();
    const int rc = cli.run("--deterministic track --task " + task + " --seq " + seq.string() + " --weights " + weights.string() +
                               " --out " + res.string() + " --config " + tracker_cfg.string(),
                           "track_" + task);
    if (rc != 0) return nullptr;
    if (cli.run("--deterministic eval --task " + task + " --results " + res.string() + " --seq " + seq.string() + " --out " +
                    rep.string(),
                "eval_" + task) != 0)
      return nullptr;
    if (seconds) *seconds = seconds_since(t0);
    return metrics_of(rep);
  }
};

Verdict synthetic_sot(const Pipeline& p) {
  if (!p.trained) return {false, "train-toy failed, see train.log"};
  const auto m = p.track_eval("sot");
  if (m.is_null()) return {false, "track/eval failed"};
  const double iou = m.at("mean_iou"), auc = m.at("auc");
  const bool ok = p.stage1_steps <= 2000 && p.train_seconds < 600 && iou >= 0.5 && auc >= 0.5;
  return {ok, "train " + fmt("%.0f s", p.train_seconds) + " for " + std::to_string(p.stage1_steps) + " stage-1 steps, mean IoU " +
                  fmt("%.3f", iou) + ", AUC " + fmt("%.3f", auc)};
}

Verdict synthetic_mot(const Pipeline& p) {
  if (!p.trained) return {false, "train-toy failed"};
  double secs = 0;
  const auto m = p.track_eval("mot", &secs);
  if (m.is_null()) return {false, "track/eval failed"};
  const double mota = m.at("mota"), ids = m.at("ids");
  return {mota >= 0.9 && ids == 0 && secs < 120,
          "MOTA " + fmt("%.3f", mota) + ", IDS " + fmt("%.0f", ids) + ", IDF1 " + fmt("%.3f", m.at("idf1").get<double>()) + ", " +
              fmt("%.1f s", secs)};
}

Verdict synthetic_masks(const Pipeline& p) {
  if (!p.trained) return {false, "train-toy failed"};
  const auto meta = load_weights(p.weights.string()).meta;
  const double before = meta.at("mask_loss_before"), after = meta.at("mask_loss_after");
  const auto vos = p.track_eval("vos");
  const auto mots = p.track_eval("mots");
  if (vos.is_null() || mots.is_null()) return {false, "track/eval failed"};
  const double j = vos.at("j");

  // stage 2 on top of an identical stage 1 must leave every non-mask tensor untouched
  harness::TrainConfig cfg;
  cfg.stage1_steps = 10;
  cfg.pairs_per_task = 8;
  std::vector<harness::SyntheticSequence> seqs;
  for (auto s : harness::default_training_specs(cfg.seed, 3)) {
    s.frames = 6;
    seqs.push_back(harness::generate_sequence(s));
  }
  cfg.stage2_steps = 0;
  const auto a = harness::train_toy(seqs, cfg);
  cfg.stage2_steps = 10;
  const auto b = harness::train_toy(seqs, cfg);
  std::size_t changed_frozen = 0, changed_mask = 0;
  for (const auto& [name, t] : a.model.weights) {
    const bool same = t.values() == b.model.weights.at(name).values();
    if (is_mask_param(name)) changed_mask += !same;
    else changed_frozen += !same;
  }
  const bool ok = after <= 0.5 * before && j >= 0.6 && changed_frozen == 0 && changed_mask > 0;
  return {ok, "mask loss " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) + ", VOS J " + fmt("%.3f", j) + ", MOTS sMOTSA " +
                  fmt("%.3f", mots.at("smotsa").get<double>()) + ", " + std::to_string(changed_frozen) +
                  " frozen tensors changed, " + std::to_string(changed_mask) + " mask tensors updated"};
}

/// selftest, simulate, train-toy, track and eval; every output under `dir`.
bool determinism_run(const fs::path& spec, const fs::path& tracker_cfg, const fs::path& dir) {
  // console logs go beside the artifacts; some of them echo the output paths
  const fs::path logs = dir.string() + "_logs";
  fs::create_directories(dir);
  fs::create_directories(logs);
  const Cli sub{logs};
  const std::string d = dir.string();
  return sub.run("--deterministic selftest", "selftest") == 0 &&
         sub.run("--deterministic simulate --spec " + spec.string() + " --out " + d + "/seq", "simulate") == 0 &&
         sub.run("--deterministic train-toy --stage1-steps 6 --stage2-steps 4 --out " + d + "/w.bin --trace " + d + "/trace.csv",
                 "train") == 0 &&
         sub.run("--deterministic track --task mots --seq " + d + "/seq --weights " + d + "/w.bin --out " + d +
                     "/res --config " + tracker_cfg.string(),
                 "track") == 0 &&
         sub.run("--deterministic eval --task mots --results " + d + "/res --seq " + d + "/seq --out " + d + "/report", "eval") == 0;
}

Verdict determinism(const Cli& cli, const fs::path& spec, const fs::path& tracker_cfg) {
  const fs::path a = cli.work / "det_a", b = cli.work / "det_b";
  if (!determinism_run(spec, tracker_cfg, a) || !determinism_run(spec, tracker_cfg, b))
    return {false, "a pipeline step failed"};
  auto ta = tree_bytes(a), tb = tree_bytes(b);
  for (const char* log : {"selftest.log", "train.log", "eval.log"}) {
    ta[log] = slurp(a.string() + "_logs/" + log);
    tb[log] = slurp(b.string() + "_logs/" + log);
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : ta) {
    auto it = tb.find(name);
    differing += it == tb.end() || it->second != bytes;
  }
  differing += tb.size() > ta.size() ? tb.size() - ta.size() : 0;
  return {differing == 0 && ta.size() > 3, std::to_string(ta.size()) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "unitrack_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  bool all = true;

  auto report = [&](int n, const std::string& name, double limit, const std::function<Verdict()>& body) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = body();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (limit > 0 && secs >= limit) {
      v.pass = false;
      v.detail += ", over the " + fmt("%.0f s", limit) + " limit";
    }
    all = all && v.pass;
    std::printf("%s %2d %s: %s (%.2f s)\n", v.pass ? "PASS" : "FAIL", n, name.c_str(), v.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "correspondence algebra", 5, correspondence_algebra);
  report(2, "instance logits are a submatrix", 5, submatrix_property);
  report(3, "zero prior degenerates to plain detection", 10, prior_zero_degeneration);
  report(4, "gradient fidelity", 30, gradient_fidelity);
  report(5, "assignment optimality", 10, assignment_optimality);
  report(6, "metric oracles", 0, metric_oracles);

  // Shared end-to-end setup: toy weights from the default training run and one
  // held-out two-object sequence.
  Pipeline p{Cli{work}, work / "toy.bin", work / "heldout", work / "tracker.cfg"};
  harness::detail::write_file(p.tracker_cfg.string(), "score_threshold=0.1\nnms_iou_threshold=0.3\n");
  const fs::path heldout_spec = work / "heldout.cfg";
  harness::detail::write_file(heldout_spec.string(), "frames=30\nheight=128\nwidth=128\nnum_objects=2\nseed=424242\n");
  {
    const auto t0 = Clock::now();
    const int rc = p.cli.run("--deterministic train-toy --out " + p.weights.string() + " --trace " + (work / "trace.csv").string(),
                             "train");
    p.train_seconds = seconds_since(t0);
    p.trained = rc == 0 && p.cli.run("simulate --spec " + heldout_spec.string() + " --out " + p.seq.string(), "simulate") == 0;
    if (p.trained) {
      std::istringstream trace(slurp(work / "trace.csv"));
      std::string line;
      std::getline(trace, line);
      while (std::getline(trace, line)) p.stage1_steps += line.rfind("1,", 0) == 0;
    }
  }
  report(7, "synthetic SOT", 0, [&] { return synthetic_sot(p); });
  report(8, "synthetic MOT", 0, [&] { return synthetic_mot(p); });
  report(9, "synthetic VOS/MOTS and frozen stage 2", 0, [&] { return synthetic_masks(p); });
  report(10, "determinism", 0, [&] { return determinism(p.cli, heldout_spec, p.tracker_cfg); });

  std::printf("%s\n", all ? "ALL PASS" : "SOME FAILED");
  return all ? 0 : 1;
}
