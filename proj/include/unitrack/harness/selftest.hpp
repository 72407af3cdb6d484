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

// Quick invariant suite run by `unitrack selftest`. Output is deterministic.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "unitrack/correspondence.hpp"
#include "unitrack/evalkit.hpp"
#include "unitrack/harness/formats.hpp"
#include "unitrack/harness/sequence.hpp"
#include "unitrack/hungarian.hpp"
#include "unitrack/kalman.hpp"
#include "unitrack/losses.hpp"
#include "unitrack/model.hpp"
#include "unitrack/unihead.hpp"

namespace unitrack::harness {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace selftest_detail {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1, double hi = 1) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

inline embed::Embedding random_embedding(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  return embed::Embedding{h, w, random_matrix(h * w, c, rng)};
}

inline double brute_force_min(const Matrix& cost) {
  const bool t = cost.rows() > cost.cols();
  const Matrix a = t ? numkit::transpose(cost) : cost;
  std::vector<std::size_t> cols(a.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  // each permutation prefix of length rows is one injective assignment
  do {
    double s = 0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, cols[r]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

inline double assignment_total(const Matrix& cost, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  double s = 0;
  for (const auto& [r, c] : pairs) s += cost(r, c);
  return s;
}

}  // namespace selftest_detail

inline std::vector<CheckResult> run_selftest(std::uint64_t seed = 1) {
  using namespace selftest_detail;
  std::vector<CheckResult> out;
  auto check = [&](const std::string& name, const std::function<std::string()>& body) {
    try {
      const std::string err = body();
      out.push_back({name, err.empty(), err});
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("exception: ") + e.what()});
    }
  };
  Rng rng(seed);

  check("correspondence rows sum to one", [&]() -> std::string {
    for (int i = 0; i < 100; ++i) {
      const auto a = random_embedding(4, 4, 8, rng), b = random_embedding(4, 4, 8, rng);
      const auto pc = corr::pixel_correspondence(a, b);
      for (std::size_t r = 0; r < pc.c.rows(); ++r) {
        double s = 0;
        for (double v : pc.c.row(r)) s += v;
        if (std::abs(s - 1) > 1e-9) return "row sum " + std::to_string(s);
      }
    }
    return {};
  });

  check("propagation keeps constant maps", [&]() -> std::string {
    const auto a = random_embedding(4, 4, 8, rng), b = random_embedding(4, 4, 8, rng);
    const auto pc = corr::pixel_correspondence(a, b);
    for (double v : {0.0, 1.0}) {
      const auto t = corr::TargetMap::from_values(std::vector<double>(16, v), true);
      if (!(corr::propagate(pc, t).t == t.t)) return "map not preserved";
    }
    return {};
  });

  check("instance logits are a submatrix of pixel logits", [&]() -> std::string {
    for (int i = 0; i < 20; ++i) {
      const auto a = random_embedding(4, 4, 8, rng), b = random_embedding(4, 4, 8, rng);
      std::vector<Box> ba, bb;
      for (int k = 0; k < 3; ++k) {
        ba.push_back(Box{rng.uniform(0, 32), rng.uniform(0, 32), 4, 4});
        bb.push_back(Box{rng.uniform(0, 32), rng.uniform(0, 32), 4, 4});
      }
      const auto ia = corr::extract_instance_embeddings(a, ba), ib = corr::extract_instance_embeddings(b, bb);
      const auto pc = corr::pixel_correspondence(a, b);
      const auto ic = corr::instance_correspondence(ia, ib);
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
          if (ic.logits(r, c) != pc.logits(ia.centers[r].row * 4 + ia.centers[r].col, ib.centers[c].row * 4 + ib.centers[c].col))
            return "logit mismatch";
    }
    return {};
  });

  check("zero prior leaves detection unchanged", [&]() -> std::string {
    const Model m = init_model(ModelSpec{}, seed);
    for (int i = 0; i < 5; ++i) {
      embed::FeaturePyramid pyr;
      for (std::size_t l = 0; l < 3; ++l) {
        const std::size_t g = 8 >> l;
        pyr.levels[l] = Tensor::hwc(g, g, m.spec.level_channels(l));
        for (auto& v : pyr.levels[l].values()) v = rng.uniform(0, 2);
      }
      head::HeadConfig hc;
      hc.score_threshold = 0.01;
      const auto prior = corr::make_target_prior(std::nullopt, corr::TaskKind::mot, 8, 8);
      const auto a = head::detect(head::fuse_pyramid(pyr, prior), m.weights, hc);
      const auto b = head::detect(head::unfused(pyr), m.weights, hc);
      if (a.size() != b.size()) return "detection count differs";
      for (std::size_t k = 0; k < a.size(); ++k)
        if (a[k].score != b[k].score || a[k].box.cx != b[k].box.cx || a[k].box.w != b[k].box.w) return "detection differs";
    }
    return {};
  });

  check("loss gradients match finite differences", [&]() -> std::string {
    for (int i = 0; i < 10; ++i) {
      std::vector<double> p(6), g(6);
      for (auto& v : p) v = rng.uniform(0.1, 0.9);
      for (auto& v : g) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      const double e1 = loss::finite_diff_check([&](std::span<const double> x) { return loss::dice_loss(x, g); }, p, 1e-5);
      const double e2 = loss::finite_diff_check([&](std::span<const double> x) { return loss::mask_loss(x, g); }, p, 1e-5);
      const auto gm = corr::ground_truth_match({1, 2}, {2, 1, 3});
      std::vector<double> z(6);
      for (auto& v : z) v = rng.uniform(-2, 2);
      const double e3 = loss::finite_diff_check(
          [&](std::span<const double> x) { return loss::contrastive_ce_loss(Matrix(2, 3, {x.begin(), x.end()}), gm, 1.5); },
          z, 1e-5);
      if (std::max({e1, e2, e3}) >= 1e-4) return "relative error " + std::to_string(std::max({e1, e2, e3}));
    }
    return {};
  });

  check("hungarian matches brute force", [&]() -> std::string {
    for (int i = 0; i < 50; ++i) {
      const std::size_t r = 1 + rng.index(6), c = 1 + rng.index(6);
      // integer costs keep every permutation sum exact
      Matrix cost(r, c);
      for (auto& v : cost.data()) v = static_cast<double>(rng.index(20));
      const double got = assignment_total(cost, track::hungarian(cost));
      if (got != brute_force_min(cost)) return "suboptimal assignment";
    }
    return {};
  });

  check("kalman covariance stays symmetric", [&]() -> std::string {
    auto s = track::kalman_initiate(Box{50, 50, 20, 40});
    for (int i = 0; i < 1000; ++i) {
      const Box p = track::kalman_predict(s);
      track::kalman_update(s, Box{p.cx + rng.uniform(-1, 1), p.cy + rng.uniform(-1, 1), 20, 40});
    }
    if ((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff() > 1e-9) return "asymmetric covariance";
    return {};
  });

  check("metric oracles", [&]() -> std::string {
    std::vector<Box> p, g;
    for (int i = 0; i < 4; ++i) {
      g.push_back(Box::from_tlwh(0, 0, 2, 1));
      p.push_back(Box::from_tlwh(0, 0, 1, 1));  // IoU 0.5
    }
    if (std::abs(eval::sot_success_auc(p, g).at("auc") - 11.0 / 21.0) > 1e-9) return "auc";
    const Box a = Box::from_tlwh(0, 0, 10, 10), b = Box::from_tlwh(50, 50, 10, 10), far = Box::from_tlwh(90, 0, 5, 5);
    const std::vector<std::vector<eval::IdBox>> gt{{{1, a}, {2, b}}, {{1, a}, {2, b}}, {{1, a}, {2, b}}};
    const std::vector<std::vector<eval::IdBox>> pr{{{1, a}, {2, b}}, {{1, a}, {2, b}, {3, far}}, {{4, a}}};
    if (std::abs(eval::mot_clear(pr, gt).at("mota") - 0.5) > 1e-9) return "mota";
    Mask gm(1, 5), pm(1, 5);
    gm.data = {1, 1, 1, 1, 1};
    pm.data = {1, 1, 1, 1, 0};
    if (std::abs(eval::mots_smotsa({{{1, pm}}}, {{{1, gm}}}).at("smotsa") - 0.8) > 1e-9) return "smotsa";
    return {};
  });

  check("file formats round trip", [&]() -> std::string {
    for (int i = 0; i < 20; ++i) {
      Mask m(1 + rng.index(9), 1 + rng.index(9));
      for (auto& v : m.data) v = rng.uniform() < 0.4;
      if (!(rle_decode(rle_encode(m)) == m)) return "rle";
    }
    const std::vector<MotRecord> recs{{2, 1, 1.5, 2.25, 3, 4, 0.5, 1, 1}, {1, 3, 10, 20, 5, 5, 1, 1, 1}};
    auto back = parse_mot_csv(mot_csv_text(recs));
    if (back.size() != 2 || !(back[0] == recs[1]) || !(back[1] == recs[0])) return "csv";
    return {};
  });

  check("generator is deterministic and consistent", [&]() -> std::string {
    SequenceSpec s;
    s.frames = 4;
    s.num_objects = 3;
    s.seed = seed;
    const auto a = generate_sequence(s), b = generate_sequence(s);
    for (std::size_t f = 0; f < a.frames.size(); ++f) {
      if (!(a.frames[f].pixels == b.frames[f].pixels)) return "frames differ";
      for (const auto& g : a.gt[f]) {
        const auto bb = g.mask.bounding_box();
        if (!bb || std::abs(bb->left() - g.box.left()) > 1 || std::abs(bb->right() - g.box.right()) > 1 ||
            std::abs(bb->top() - g.box.top()) > 1 || std::abs(bb->bottom() - g.box.bottom()) > 1)
          return "mask and box disagree";
      }
    }
    return {};
  });
  return out;
}

}  // namespace unitrack::harness
