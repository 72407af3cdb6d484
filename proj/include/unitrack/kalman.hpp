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

// Constant-velocity Kalman filter on (cx, cy, aspect, height) plus
// velocities, with noise scaled by box height.

#pragma once

#include <Eigen/Dense>

#include "unitrack/errors.hpp"
#include "unitrack/geometry.hpp"

namespace unitrack::track {

using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using Vec4 = Eigen::Matrix<double, 4, 1>;
using Mat4 = Eigen::Matrix<double, 4, 4>;
using Mat48 = Eigen::Matrix<double, 4, 8>;

struct KalmanConfig {
  double std_weight_position = 1.0 / 20;
  double std_weight_velocity = 1.0 / 160;
};

struct KalmanState {
  Vec8 mean = Vec8::Zero();
  Mat8 cov = Mat8::Identity();
};

inline Vec4 to_measurement(const Box& b) { return Vec4(b.cx, b.cy, b.w / b.h, b.h); }

inline Box box_of(const KalmanState& s) {
  const double h = s.mean(3);
  return Box{s.mean(0), s.mean(1), s.mean(2) * h, h};
}

inline void require_psd(const Mat8& cov) {
  const Mat8 sym = 0.5 * (cov + cov.transpose());
  require((cov - sym).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + cov.cwiseAbs().maxCoeff()),
          "kalman: covariance is not symmetric");
  Eigen::LLT<Mat8> llt(sym);
  require(llt.info() == Eigen::Success, "kalman: covariance is not positive definite");
}

inline KalmanState kalman_initiate(const Box& b, const KalmanConfig& cfg = {}) {
  require(b.w > 0 && b.h > 0, "kalman_initiate: box must have positive size");
  KalmanState s;
  s.mean.head<4>() = to_measurement(b);
  const double h = b.h, sp = cfg.std_weight_position, sv = cfg.std_weight_velocity;
  Vec8 std;
  std << 2 * sp * h, 2 * sp * h, 1e-2, 2 * sp * h, 10 * sv * h, 10 * sv * h, 1e-5, 10 * sv * h;
  s.cov = std.array().square().matrix().asDiagonal();
  return s;
}

/// Advances one frame and returns the predicted box.
inline Box kalman_predict(KalmanState& s, const KalmanConfig& cfg = {}) {
  require_psd(s.cov);
  const double h = s.mean(3), sp = cfg.std_weight_position, sv = cfg.std_weight_velocity;
  Mat8 F = Mat8::Identity();
  for (int i = 0; i < 4; ++i) F(i, i + 4) = 1.0;
  Vec8 std;
  std << sp * h, sp * h, 1e-2, sp * h, sv * h, sv * h, 1e-5, sv * h;
  const Mat8 Q = std.array().square().matrix().asDiagonal();
  s.mean = F * s.mean;
  s.cov = F * s.cov * F.transpose() + Q;
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return box_of(s);
}

inline void kalman_update(KalmanState& s, const Box& measured, const KalmanConfig& cfg = {}) {
  require_psd(s.cov);
  require(measured.w > 0 && measured.h > 0, "kalman_update: box must have positive size");
  const double h = s.mean(3), sp = cfg.std_weight_position;
  Mat48 H = Mat48::Zero();
  for (int i = 0; i < 4; ++i) H(i, i) = 1.0;
  Vec4 std(sp * h, sp * h, 1e-1, sp * h);
  const Mat4 R = std.array().square().matrix().asDiagonal();
  const Mat4 S = H * s.cov * H.transpose() + R;
  const Eigen::Matrix<double, 8, 4> K = s.cov * H.transpose() * S.inverse();
  s.mean += K * (to_measurement(measured) - H * s.mean);
  s.cov -= K * S * K.transpose();
  s.cov = 0.5 * (s.cov + s.cov.transpose());
}

}  // namespace unitrack::track
