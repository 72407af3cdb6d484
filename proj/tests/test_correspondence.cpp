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

#include "unitrack/correspondence.hpp"
#include "unitrack/weights.hpp"

namespace {

using namespace unitrack;
using namespace unitrack::corr;
using embed::Embedding;
using numkit::Matrix;

Embedding random_embedding(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  Embedding e{h, w, Matrix(h * w, c)};
  for (double& v : e.e.values()) v = rng.uniform(-2, 2);
  return e;
}

void expect_row_stochastic(const Matrix& c, double tol) {
  for (std::size_t r = 0; r < c.rows(); ++r) {
    double s = 0;
    for (double v : c.row(r)) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      s += v;
    }
    ASSERT_LT(std::abs(s - 1.0), tol);
  }
}

TEST(PixelCorrespondence, ZeroEmbeddingsAreUniform) {
  const Embedding e{2, 1, Matrix(2, 1)};
  const auto pc = pixel_correspondence(e, e);
  EXPECT_EQ(pc.c, (Matrix{{0.5, 0.5}, {0.5, 0.5}}));
}

TEST(PixelCorrespondence, IdentityEmbeddingsHandSoftmax) {
  const Embedding e{2, 1, Matrix{{1, 0}, {0, 1}}};
  const auto pc = pixel_correspondence(e, e, 1.0);
  const double a = std::exp(1.0) / (std::exp(1.0) + 1);
  EXPECT_NEAR(pc.c(0, 0), a, 1e-12);
  EXPECT_NEAR(pc.c(0, 1), 1 - a, 1e-12);
  EXPECT_NEAR(pc.c(1, 0), 1 - a, 1e-12);
  EXPECT_NEAR(pc.c(1, 1), a, 1e-12);
  EXPECT_NEAR(pc.c(0, 0), 0.73106, 1e-5);
}

TEST(PixelCorrespondence, DefaultTemperatureIsSqrtChannels) {
  Rng rng(1);
  const auto a = random_embedding(rng, 2, 2, 9), b = random_embedding(rng, 2, 2, 9);
  EXPECT_EQ(pixel_correspondence(a, b).c, pixel_correspondence(a, b, 3.0).c);
  EXPECT_DOUBLE_EQ(pixel_correspondence(a, b).temperature, 3.0);
}

TEST(PixelCorrespondence, RejectsMismatch) {
  Rng rng(2);
  EXPECT_THROW(pixel_correspondence(random_embedding(rng, 2, 2, 3), random_embedding(rng, 2, 2, 4)), InvalidArgument);
  EXPECT_THROW(pixel_correspondence(random_embedding(rng, 2, 2, 3), random_embedding(rng, 2, 3, 3)), InvalidArgument);
}

TEST(CorrespondenceProperty, RowStochasticOnFuzz) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t h = 1 + rng.index(4), w = 1 + rng.index(4), c = 1 + rng.index(8);
    const auto a = random_embedding(rng, h, w, c), b = random_embedding(rng, h, w, c);
    expect_row_stochastic(pixel_correspondence(a, b, rng.uniform(0.2, 3)).c, 1e-9);
    std::vector<Box> boxes;
    for (std::size_t i = 0; i < 1 + rng.index(4); ++i)
      boxes.push_back({rng.uniform(0, 8.0 * w - 1e-6), rng.uniform(0, 8.0 * h - 1e-6), 4, 4});
    const auto ic = instance_correspondence(extract_instance_embeddings(a, boxes),
                                            extract_instance_embeddings(b, boxes));
    expect_row_stochastic(ic.c, 1e-9);
  }
}

TEST(ExtractInstance, CentreMapsToFloorCell) {
  Rng rng(4);
  const auto e = random_embedding(rng, 4, 4, 3);
  const auto ie = extract_instance_embeddings(e, {Box{12, 20, 6, 6}});
  ASSERT_EQ(ie.centers.size(), 1u);
  EXPECT_EQ(ie.centers[0], (GridCell{2, 1}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(ie.e(0, c), e.e(2 * 4 + 1, c));
}

TEST(ExtractInstance, SharedCellGivesIdenticalRows) {
  Rng rng(5);
  const auto e = random_embedding(rng, 4, 4, 3);
  const auto ie = extract_instance_embeddings(e, {Box{9, 9, 4, 4}, Box{15.5, 10, 20, 2}});
  EXPECT_EQ(std::vector<double>(ie.e.row(0).begin(), ie.e.row(0).end()),
            std::vector<double>(ie.e.row(1).begin(), ie.e.row(1).end()));
}

TEST(ExtractInstance, BoundaryResolvesDownward) {
  Rng rng(5);
  const auto e = random_embedding(rng, 4, 4, 3);
  EXPECT_EQ(extract_instance_embeddings(e, {Box{8, 16, 2, 2}}).centers[0], (GridCell{2, 1}));
}

TEST(ExtractInstance, RejectsCentreOutsideGrid) {
  Rng rng(6);
  const auto e = random_embedding(rng, 4, 4, 3);
  EXPECT_THROW(extract_instance_embeddings(e, {Box{32, 5, 2, 2}}), InvalidArgument);
  EXPECT_THROW(extract_instance_embeddings(e, {Box{-1, 5, 2, 2}}), InvalidArgument);
}

TEST(InstanceCorrespondence, SingleInstanceIsOne) {
  Rng rng(7);
  InstanceEmbedding a{Matrix(1, 3), {}}, b{Matrix(1, 3), {}};
  for (double& v : a.e.values()) v = rng.uniform(-1, 1);
  for (double& v : b.e.values()) v = rng.uniform(-1, 1);
  EXPECT_EQ(instance_correspondence(a, b).c, (Matrix{{1.0}}));
}

TEST(InstanceCorrespondence, HandSoftmax) {
  const InstanceEmbedding cur{Matrix{{1, 0}}, {}}, ref{Matrix{{1, 0}, {0, 1}}, {}};
  const auto ic = instance_correspondence(cur, ref, 1.0);
  EXPECT_NEAR(ic.c(0, 0), 0.73106, 1e-5);
  EXPECT_NEAR(ic.c(0, 1), 0.26894, 1e-5);
}

TEST(InstanceCorrespondence, EmptySideIsFlagged) {
  const InstanceEmbedding none{Matrix(0, 2), {}}, one{Matrix{{1, 0}}, {}};
  EXPECT_TRUE(instance_correspondence(none, one).empty);
  EXPECT_TRUE(instance_correspondence(one, none).empty);
  EXPECT_FALSE(instance_correspondence(one, one).empty);
}

TEST(CorrespondenceProperty, InstanceIsSubmatrixOfPixel) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const auto ec = random_embedding(rng, 4, 4, 5), er = random_embedding(rng, 4, 4, 5);
    std::vector<Box> bc, br;
    for (std::size_t i = 0; i < 1 + rng.index(5); ++i) bc.push_back({rng.uniform(0, 31.99), rng.uniform(0, 31.99), 3, 3});
    for (std::size_t i = 0; i < 1 + rng.index(5); ++i) br.push_back({rng.uniform(0, 31.99), rng.uniform(0, 31.99), 3, 3});
    const auto ic_e = extract_instance_embeddings(ec, bc), ir_e = extract_instance_embeddings(er, br);
    const auto pc = pixel_correspondence(ec, er);
    const auto ic = instance_correspondence(ic_e, ir_e);
    for (std::size_t i = 0; i < bc.size(); ++i) {
      const std::size_t pi = ic_e.centers[i].row * 4 + ic_e.centers[i].col;
      double z = 0;
      for (std::size_t k = 0; k < br.size(); ++k) {
        const std::size_t pk = ir_e.centers[k].row * 4 + ir_e.centers[k].col;
        ASSERT_EQ(ic.logits(i, k), pc.logits(pi, pk));
        z += std::exp(pc.logits(pi, pk) / pc.temperature);
      }
      for (std::size_t k = 0; k < br.size(); ++k) {
        const std::size_t pk = ir_e.centers[k].row * 4 + ir_e.centers[k].col;
        EXPECT_NEAR(ic.c(i, k), std::exp(pc.logits(pi, pk) / pc.temperature) / z, 1e-12);
      }
    }
  }
}

TEST(Propagate, ConstantMapsArePreservedBitwise) {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const auto pc = pixel_correspondence(random_embedding(rng, 3, 4, 4), random_embedding(rng, 3, 4, 4));
    const auto zeros = propagate(pc, TargetMap::from_values(std::vector<double>(12, 0.0), true));
    const auto ones = propagate(pc, TargetMap::from_values(std::vector<double>(12, 1.0), true));
    for (std::size_t i = 0; i < 12; ++i) {
      EXPECT_EQ(zeros[i], 0.0);
      EXPECT_EQ(ones[i], 1.0);
    }
  }
}

TEST(Propagate, HandMatvec) {
  PixelCorrespondence pc;
  pc.c = Matrix{{0.73106, 0.26894}, {0.26894, 0.73106}};
  const auto out = propagate(pc, TargetMap::from_values({1, 0}, true));
  EXPECT_NEAR(out[0], 0.73106, 1e-12);
  EXPECT_NEAR(out[1], 0.26894, 1e-12);
  EXPECT_FALSE(out.binary);
}

TEST(Propagate, RejectsSizeMismatch) {
  PixelCorrespondence pc;
  pc.c = Matrix{{1.0}};
  EXPECT_THROW(propagate(pc, TargetMap::from_values({1, 0}, true)), InvalidArgument);
}

TEST(PropagateProperty, LinearAndBounded) {
  Rng rng(10);
  for (int t = 0; t < 200; ++t) {
    const auto pc = pixel_correspondence(random_embedding(rng, 2, 3, 3), random_embedding(rng, 2, 3, 3));
    std::vector<double> a(6), b(6), mix(6);
    const double alpha = rng.uniform(0, 1), beta = rng.uniform(0, 1 - alpha);
    for (std::size_t i = 0; i < 6; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform();
      mix[i] = alpha * a[i] + beta * b[i];
    }
    const auto pa = propagate(pc, TargetMap::from_values(a, false));
    const auto pb = propagate(pc, TargetMap::from_values(b, false));
    const auto pm = propagate(pc, TargetMap::from_values(mix, false));
    const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_NEAR(pm[i], alpha * pa[i] + beta * pb[i], 1e-9);
      EXPECT_GE(pa[i], *lo);
      EXPECT_LE(pa[i], *hi);
    }
  }
}

TEST(TargetPrior, MotIsZero) {
  for (auto task : {TaskKind::mot, TaskKind::mots}) {
    const auto p = make_target_prior(std::nullopt, task, 3, 5);
    EXPECT_EQ(p.p.shape(), (std::vector<std::size_t>{3, 5, 1}));
    EXPECT_TRUE(p.is_zero());
    // a supplied map is ignored
    EXPECT_TRUE(make_target_prior(TargetMap::from_values({1, 1, 1, 1}, true), task, 2, 2).is_zero());
  }
}

TEST(TargetPrior, SotIsRowMajorReshape) {
  const auto p = make_target_prior(TargetMap::from_values({0.1, 0.2, 0.3, 0.4}, false), TaskKind::sot, 2, 2);
  EXPECT_EQ(p.p.at(0, 0, 0), 0.1);
  EXPECT_EQ(p.p.at(0, 1, 0), 0.2);
  EXPECT_EQ(p.p.at(1, 0, 0), 0.3);
  EXPECT_EQ(p.p.at(1, 1, 0), 0.4);
}

TEST(TargetPrior, PropagationTasksNeedAMap) {
  EXPECT_THROW(make_target_prior(std::nullopt, TaskKind::vos, 2, 2), InvalidArgument);
  EXPECT_THROW(make_target_prior(TargetMap::from_values({1, 0}, true), TaskKind::sot, 2, 2), InvalidArgument);
}

TEST(GroundTruthMatch, Examples) {
  EXPECT_EQ(ground_truth_match({5}, {5}).g, (Matrix{{1}}));
  EXPECT_EQ(ground_truth_match({5, 9}, {9, 5}).g, (Matrix{{0, 1}, {1, 0}}));
  EXPECT_EQ(ground_truth_match({7}, {5}).g, (Matrix{{0}}));
  EXPECT_THROW(ground_truth_match({1, 1}, {1}), InvalidArgument);
  EXPECT_THROW(ground_truth_match({1}, {2, 2}), InvalidArgument);
}

TEST(TargetMap, BoxCoverage) {
  // cells (1,1) and (1,2) on a 4 x 4 grid have centres (12,12) and (20,12)
  const auto t = target_map_from_box(Box::from_tlwh(9, 9, 14, 6), 4, 4);
  double on = 0;
  for (std::size_t i = 0; i < 16; ++i) on += t[i];
  EXPECT_EQ(on, 2.0);
  EXPECT_EQ(t[1 * 4 + 1], 1.0);
  EXPECT_EQ(t[1 * 4 + 2], 1.0);
  EXPECT_TRUE(t.binary);
}

TEST(TargetMap, FullFrameBoxIsAllOnes) {
  const auto t = target_map_from_box(Box::from_tlwh(0, 0, 32, 32), 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t[i], 1.0);
}

TEST(TargetMap, TinyBoxFallsBackToCentreCell) {
  const auto t = target_map_from_box(Box{17, 25, 1, 1}, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t[i], i == 3 * 4 + 2 ? 1.0 : 0.0);
}

TEST(TargetMap, RejectsOutsideBoxAndEmptyMask) {
  EXPECT_THROW(target_map_from_box(Box::from_tlwh(40, 0, 4, 4), 4, 4), InvalidArgument);
  EXPECT_THROW(target_map_from_mask(Mask(32, 32)), InvalidArgument);
}

TEST(TargetMap, MaskMajority) {
  Mask m(16, 16);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) m.at(y, x) = 1;
  for (std::size_t y = 8; y < 11; ++y)
    for (std::size_t x = 8; x < 16; ++x) m.at(y, x) = 1;  // 24 of 64 pixels
  const auto t = target_map_from_mask(m);
  EXPECT_EQ(t[0], 1.0);
  EXPECT_EQ(t[1], 0.0);
  EXPECT_EQ(t[2], 0.0);
  EXPECT_EQ(t[3], 0.0);
}

TEST(TargetMap, RejectsValuesOutsideUnitRange) {
  EXPECT_THROW(TargetMap::from_values({1.5}, false), InvalidArgument);
  EXPECT_THROW(TargetMap::from_values({0.5}, true), InvalidArgument);
}

}  // namespace
