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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unitrack/harness/sequence.hpp"
#include "unitrack/tracker.hpp"

namespace {

using namespace unitrack;
using namespace unitrack::track;
using numkit::Matrix;

// --- hungarian ----------------------------------------------------------------

double brute_force_min(const Matrix& c) {
  const bool t = c.rows() > c.cols();
  const std::size_t n = t ? c.cols() : c.rows(), m = t ? c.rows() : c.cols();
  std::vector<std::size_t> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  // every injective map from the smaller side: enumerate permutations of the
  // larger side and read off the first n
  do {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += t ? c(cols[i], i) : c(i, cols[i]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

double total_of(const Matrix& c, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  double s = 0;
  for (auto [r, k] : pairs) s += c(r, k);
  return s;
}

TEST(Hungarian, TwoByTwo) {
  const Matrix c(2, 2, {1, 2, 2, 1});
  const auto p = hungarian(c);
  EXPECT_EQ(p, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_DOUBLE_EQ(total_of(c, p), 2.0);
}

TEST(Hungarian, DiagonalZerosGiveIdentity) {
  Matrix c(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) c(i, j) = i == j ? 0.0 : 1.0;
  EXPECT_EQ(hungarian(c), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {2, 2}}));
}

TEST(Hungarian, RandomSixBySixMatchesBruteForce) {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    Matrix c(6, 6);
    for (double& v : c.values()) v = rng.uniform(0, 10);
    const auto p = hungarian(c);
    EXPECT_EQ(p.size(), 6u);
    EXPECT_NEAR(total_of(c, p), brute_force_min(c), 1e-9);
  }
}

TEST(Hungarian, RectangularUpToSevenMatchesBruteForce) {
  Rng rng(2);
  for (std::size_t n = 1; n <= 7; ++n)
    for (std::size_t m = 1; m <= 7; ++m)
      for (int rep = 0; rep < 3; ++rep) {
        Matrix c(n, m);
        for (double& v : c.values()) v = std::round(rng.uniform(0, 5));  // ties are common
        const auto p = hungarian(c);
        ASSERT_EQ(p.size(), std::min(n, m));
        std::vector<bool> row(n), col(m);
        for (auto [r, k] : p) {
          EXPECT_FALSE(row[r]);
          EXPECT_FALSE(col[k]);
          row[r] = col[k] = true;
        }
        EXPECT_NEAR(total_of(c, p), brute_force_min(c), 1e-9) << n << "x" << m;
      }
}

TEST(Hungarian, SentinelPairsAreDropped) {
  const Matrix c(2, 2, {kGateSentinel, kGateSentinel, kGateSentinel, 0.5});
  EXPECT_EQ(hungarian(c), (std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}}));
}

TEST(Hungarian, EmptyAndNonFinite) {
  EXPECT_TRUE(hungarian(Matrix(3, 0)).empty());
  EXPECT_TRUE(hungarian(Matrix(0, 2)).empty());
  EXPECT_THROW(hungarian(Matrix(1, 1, {std::nan("")})), InvalidArgument);
}

// --- build_cost ---------------------------------------------------------------

TEST(BuildCost, IdenticalItemCostsZero) {
  const AssocItem a{Box{10, 10, 4, 4}, {1, 0, 0}};
  const auto ac = build_cost({a}, {a}, 0.7);
  EXPECT_NEAR(ac.cost(0, 0), 0.0, 1e-15);
  EXPECT_FALSE(ac.gated[0]);
}

TEST(BuildCost, OrthogonalDisjointIsGated) {
  const AssocItem a{Box{10, 10, 4, 4}, {1, 0}}, b{Box{40, 40, 4, 4}, {0, 1}};
  const auto ac = build_cost({a}, {b}, 0.7);
  EXPECT_TRUE(ac.gated[0]);
  EXPECT_EQ(ac.cost(0, 0), kGateSentinel);
  // the ungated value would be 0.7 * 1 + 0.3 * 1
  const auto open = build_cost({a}, {b}, 0.7, -2.0);
  EXPECT_NEAR(open.cost(0, 0), 1.0, 1e-15);
}

TEST(BuildCost, MixesCosineAndOverlap) {
  const double s = std::sqrt(0.5);
  const AssocItem a{Box{0, 0, 2, 2}, {1, 0}}, b{Box{1, 0, 2, 2}, {s, s}};
  const auto ac = build_cost({a}, {b}, 0.7);
  EXPECT_NEAR(ac.cost(0, 0), 0.7 * (1 - s) + 0.3 * (1 - 1.0 / 3), 1e-12);
}

TEST(BuildCost, EmptyTracksGiveZeroColumns) {
  const auto ac = build_cost({AssocItem{Box{1, 1, 1, 1}, {1}}}, {}, 0.7);
  EXPECT_EQ(ac.cost.rows(), 1u);
  EXPECT_EQ(ac.cost.cols(), 0u);
}

TEST(BuildCost, RejectsNonUnitEmbedding) {
  EXPECT_THROW(build_cost({AssocItem{Box{1, 1, 1, 1}, {2, 0}}}, {}, 0.7), InvalidArgument);
}

// --- kalman -------------------------------------------------------------------

TEST(Kalman, ZeroVelocityPredictsSameBox) {
  const Box b{20, 30, 8, 16};
  auto s = kalman_initiate(b);
  const Box p = kalman_predict(s);
  EXPECT_NEAR(p.cx, b.cx, 1e-12);
  EXPECT_NEAR(p.cy, b.cy, 1e-12);
  EXPECT_NEAR(p.w, b.w, 1e-12);
  EXPECT_NEAR(p.h, b.h, 1e-12);
}

TEST(Kalman, ConstantVelocity) {
  auto s = kalman_initiate(Box{10, 5, 4, 4});
  s.mean(4) = 2.0;
  EXPECT_NEAR(kalman_predict(s).cx, 12.0, 1e-12);
  EXPECT_NEAR(kalman_predict(s).cx, 14.0, 1e-12);
}

TEST(Kalman, UpdateWithPredictionKeepsMeanAndShrinksCovariance) {
  auto s = kalman_initiate(Box{10, 5, 4, 6});
  s.mean(4) = 1.0;
  const Box p = kalman_predict(s);
  const Vec8 mean = s.mean;
  const double trace = s.cov.trace();
  kalman_update(s, p);
  EXPECT_LT((s.mean - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(s.cov.trace(), trace);
}

TEST(Kalman, CovarianceStaysSymmetricOverManyCycles) {
  Rng rng(3);
  auto s = kalman_initiate(Box{50, 50, 10, 20});
  for (int i = 0; i < 1000; ++i) {
    const Box p = kalman_predict(s);
    kalman_update(s, Box{p.cx + rng.uniform(-2, 2), p.cy + rng.uniform(-2, 2), 10 + rng.uniform(-1, 1),
                         20 + rng.uniform(-1, 1)});
    ASSERT_LE((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_NO_THROW(require_psd(s.cov));
}

TEST(Kalman, RejectsInvalidCovariance) {
  auto s = kalman_initiate(Box{10, 10, 4, 4});
  s.cov(0, 0) = -1.0;
  EXPECT_THROW(kalman_predict(s), InvalidArgument);
  auto t = kalman_initiate(Box{10, 10, 4, 4});
  t.cov(0, 1) = 1.0;
  EXPECT_THROW(kalman_update(t, Box{10, 10, 4, 4}), InvalidArgument);
}

// --- lifecycle ------------------------------------------------------------------

Detection det_at(const Box& b) {
  Detection d;
  d.box = b;
  d.score = 0.9;
  d.class_id = 1;
  return d;
}

TrackerState lifecycle_state() {
  TrackerState s;
  s.task = TaskKind::mot;
  return s;
}

std::vector<std::vector<double>> embeddings(std::size_t n) {
  std::vector<std::vector<double>> e;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(n, 0.0);
    v[i] = 1.0;
    e.push_back(v);
  }
  return e;
}

TEST(Lifecycle, FirstFrameSpawnsTentativeTracksAndEmitsNothing) {
  auto s = lifecycle_state();
  const std::vector<Detection> dets{det_at(Box{10, 10, 6, 6}), det_at(Box{40, 10, 6, 6}), det_at(Box{10, 40, 6, 6})};
  EXPECT_TRUE(associate(s, dets, embeddings(3)).empty());
  ASSERT_EQ(s.tracks.size(), 3u);
  for (const auto& t : s.tracks) EXPECT_EQ(t.status, TrackStatus::tentative);
  const auto out = associate(s, dets, embeddings(3));
  ASSERT_EQ(out.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out[i].id, static_cast<long>(i + 1));
}

TEST(Lifecycle, StationaryObjectKeepsItsId) {
  auto s = lifecycle_state();
  std::vector<long> ids;
  for (int f = 0; f < 5; ++f)
    for (const auto& o : associate(s, {det_at(Box{20, 20, 8, 8})}, {{1.0, 0.0}})) ids.push_back(o.id);
  EXPECT_EQ(ids, (std::vector<long>{1, 1, 1, 1}));
}

TEST(Lifecycle, LongAbsenceRemovesTrackAndReappearanceGetsNewId) {
  auto s = lifecycle_state();
  const auto d = det_at(Box{20, 20, 8, 8});
  associate(s, {d}, {{1.0}});
  associate(s, {d}, {{1.0}});
  for (int f = 0; f < 5; ++f) {
    EXPECT_TRUE(associate(s, {}, {}).empty());
    ASSERT_EQ(s.tracks.size(), 1u);
    EXPECT_EQ(s.tracks[0].status, TrackStatus::lost);
  }
  associate(s, {}, {});
  EXPECT_TRUE(s.tracks.empty());
  associate(s, {d}, {{1.0}});
  const auto out = associate(s, {d}, {{1.0}});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, 2);
}

TEST(Lifecycle, LostTrackWithinBudgetIsRecovered) {
  auto s = lifecycle_state();
  const auto d = det_at(Box{20, 20, 8, 8});
  associate(s, {d}, {{1.0}});
  associate(s, {d}, {{1.0}});
  for (int f = 0; f < 3; ++f) associate(s, {}, {});
  const auto out = associate(s, {d}, {{1.0}});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, 1);
}

TEST(Lifecycle, UnmatchedTentativeTrackIsDropped) {
  auto s = lifecycle_state();
  associate(s, {det_at(Box{20, 20, 8, 8})}, {{1.0}});
  associate(s, {}, {});
  EXPECT_TRUE(s.tracks.empty());
}

TEST(Lifecycle, IdsStrictlyIncreaseAndAreNeverReused) {
  Rng rng(4);
  auto s = lifecycle_state();
  long last = 0;
  for (int f = 0; f < 60; ++f) {
    std::vector<Detection> dets;
    std::vector<std::vector<double>> emb;
    const std::size_t n = rng.index(4);
    for (std::size_t i = 0; i < n; ++i) {
      dets.push_back(det_at(Box{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(4, 12), rng.uniform(4, 12)}));
      emb.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.1, 1)});
    }
    associate(s, dets, emb);
    for (const auto& t : s.tracks) {
      if (t.id > last) {
        EXPECT_EQ(t.id, last + 1);
        last = t.id;
      }
    }
    for (std::size_t i = 0; i < s.tracks.size(); ++i)
      for (std::size_t j = i + 1; j < s.tracks.size(); ++j) EXPECT_NE(s.tracks[i].id, s.tracks[j].id);
  }
  EXPECT_EQ(last + 1, s.next_id);
}

TEST(Lifecycle, EmbeddingStaysUnitAfterEma) {
  auto s = lifecycle_state();
  associate(s, {det_at(Box{20, 20, 8, 8})}, {{3.0, 4.0}});
  associate(s, {det_at(Box{21, 20, 8, 8})}, {{4.0, 3.0}});
  ASSERT_EQ(s.tracks.size(), 1u);
  const auto& e = s.tracks[0].embedding;
  EXPECT_NEAR(e[0] * e[0] + e[1] * e[1], 1.0, 1e-12);
  EXPECT_NEAR(e[0], (0.9 * 0.6 + 0.1 * 0.8) / std::hypot(0.9 * 0.6 + 0.1 * 0.8, 0.9 * 0.8 + 0.1 * 0.6), 1e-12);
}

// --- end to end with a small random model ----------------------------------------

ModelSpec small_spec() {
  ModelSpec s;
  s.backbone_channels = {4, 8, 8, 8, 8};
  s.gn_groups = 2;
  s.interaction.heads = 2;
  s.interaction.sample_points = 2;
  s.embed_dim = 8;
  s.head_width = 8;
  return s;
}

std::shared_ptr<const Model> small_model(double obj_bias) {
  Model m = init_model(small_spec(), 21);
  for (double& v : m.weights.at("head.obj_pred.b").values()) v = obj_bias;
  for (double& v : m.weights.at("head.cls_pred.b").values()) v = obj_bias;
  return std::make_shared<const Model>(std::move(m));
}

harness::SyntheticSequence small_sequence(std::size_t frames = 4) {
  harness::SequenceSpec spec;
  spec.frames = frames;
  spec.height = 64;
  spec.width = 64;
  spec.min_size = 10;
  spec.max_size = 16;
  spec.seed = 9;
  return harness::generate_sequence(spec);
}

TEST(Sot, InitBuildsTargetMapFromBox) {
  const auto seq = small_sequence(1);
  const Frame& f = seq.frames[0];
  auto s = init_sot(small_model(0), f, Box::from_tlwh(9, 9, 14, 6), TaskKind::sot);
  ASSERT_EQ(s.targets.size(), 1u);
  const auto& t = s.targets[0].t_ref.t;
  EXPECT_EQ(t.rows() * t.cols(), 64u);
  EXPECT_EQ(std::count(t.data().begin(), t.data().end(), 1.0), 2);
  auto full = init_sot(small_model(0), f, Box{32, 32, 64, 64}, TaskKind::sot);
  const auto& tf = full.targets[0].t_ref.t;
  EXPECT_EQ(std::count(tf.data().begin(), tf.data().end(), 1.0), 64);
}

TEST(Sot, InitRejectsBadTargets) {
  const auto seq = small_sequence(1);
  EXPECT_THROW(init_sot(small_model(0), seq.frames[0], Mask(64, 64), TaskKind::vos), InvalidArgument);
  EXPECT_THROW(init_sot(small_model(0), seq.frames[0], Box{200, 200, 4, 4}, TaskKind::sot), InvalidArgument);
  EXPECT_THROW(init_sot(small_model(0), seq.frames[0], Box{20, 20, 4, 4}, TaskKind::mot), InvalidArgument);
}

TEST(Sot, UninitialisedStateIsRejected) {
  TrackerState s;
  const auto seq = small_sequence(1);
  EXPECT_THROW(track_sot(s, seq.frames[0]), InvalidArgument);
}

TEST(Sot, NoDetectionRepeatsPreviousBoxWithZeroScore) {
  const auto seq = small_sequence(3);
  const Box ref = seq.gt[0][0].box;
  auto s = init_sot(small_model(-1e3), seq.frames[0], ref, TaskKind::sot);
  for (std::size_t f = 1; f < 3; ++f) {
    const auto o = track_sot(s, seq.frames[f]);
    EXPECT_EQ(o.score, 0.0);
    EXPECT_EQ(o.box.cx, ref.cx);
    EXPECT_EQ(o.box.cy, ref.cy);
    EXPECT_EQ(o.box.w, ref.w);
    EXPECT_EQ(o.box.h, ref.h);
  }
}

TEST(Sot, ReferenceStateIsBitwiseConstant) {
  const auto seq = small_sequence(4);
  auto s = init_sot(small_model(0), seq.frames[0], seq.gt[0][0].box, TaskKind::sot);
  const auto t_ref = s.targets[0].t_ref;
  const auto pyr = *s.ref_pyramid;
  for (std::size_t f = 1; f < 4; ++f) {
    track_sot(s, seq.frames[f]);
    EXPECT_EQ(s.targets[0].t_ref.t, t_ref.t);
    EXPECT_EQ(*s.ref_pyramid, pyr);
  }
}

TEST(Sot, MultipleTargetsShareOneBackbonePass) {
  const auto seq = small_sequence(3);
  std::vector<TargetInit> targets{seq.gt[0][0].mask, seq.gt[0][1].mask};
  auto s = init_sot(small_model(0), seq.frames[0], targets, TaskKind::vos);
  EXPECT_EQ(s.counters.backbone_passes, 1u);
  const auto out = track_sot_all(s, seq.frames[1]);
  EXPECT_EQ(out.size(), 2u);
  EXPECT_EQ(s.counters.backbone_passes, 2u);
  EXPECT_EQ(s.counters.head_passes, 2u);
  for (const auto& o : out) {
    ASSERT_TRUE(o.mask.has_value());
    EXPECT_EQ(o.mask->height, 64u);
    EXPECT_EQ(o.mask->width, 64u);
  }
}

TEST(Mot, DetectionsMatchHeadOutsideTheTracker) {
  const auto seq = small_sequence(3);
  const auto model = small_model(0);
  TrackerConfig cfg;
  cfg.head.score_threshold = 0.2;
  auto s = init_mot(model, TaskKind::mot, cfg);
  for (const auto& frame : seq.frames) {
    step_mot(s, frame);
    const auto pyr = embed::extract_pyramid(frame, model->weights, model->spec);
    const auto direct = head::detect(head::unfused(pyr), model->weights, cfg.head);
    ASSERT_EQ(s.last_detections.size(), direct.size());
    ASSERT_FALSE(direct.empty());
    for (std::size_t i = 0; i < direct.size(); ++i) {
      EXPECT_EQ(s.last_detections[i].box.cx, direct[i].box.cx);
      EXPECT_EQ(s.last_detections[i].box.cy, direct[i].box.cy);
      EXPECT_EQ(s.last_detections[i].box.w, direct[i].box.w);
      EXPECT_EQ(s.last_detections[i].box.h, direct[i].box.h);
      EXPECT_EQ(s.last_detections[i].score, direct[i].score);
    }
  }
}

TEST(Mot, MotsAttachesFrameSizedMasks) {
  const auto seq = small_sequence(3);
  TrackerConfig cfg;
  cfg.head.score_threshold = 0.2;
  auto s = init_mot(small_model(0), TaskKind::mots, cfg);
  std::size_t emitted = 0;
  for (const auto& frame : seq.frames)
    for (const auto& o : step_mot(s, frame)) {
      ++emitted;
      ASSERT_TRUE(o.det.mask.has_value());
      EXPECT_EQ(o.det.mask->height, 64u);
    }
  EXPECT_GT(emitted, 0u);
  EXPECT_EQ(s.counters.mask_passes, emitted);
  EXPECT_EQ(s.counters.backbone_passes, 3u);
}

TEST(Mot, RejectsWrongTaskAndChangedFrameSize) {
  EXPECT_THROW(init_mot(small_model(0), TaskKind::sot), InvalidArgument);
  auto s = init_mot(small_model(0), TaskKind::mot);
  const auto seq = small_sequence(1);
  step_mot(s, seq.frames[0]);
  EXPECT_THROW(step_mot(s, Frame::from_pixels(numkit::Tensor::hwc(32, 32, 3))), InvalidArgument);
}

TEST(TrackerConfig, Validation) {
  TrackerConfig c;
  c.lambda_emb = 1.5;
  EXPECT_THROW(c.validate(), InvalidArgument);
  TrackerConfig d;
  d.confirm_hits = 0;
  EXPECT_THROW(d.validate(), InvalidArgument);
  TrackerConfig e;
  e.temperature = 0.0;
  EXPECT_THROW(e.validate(), InvalidArgument);
}

}  // namespace
