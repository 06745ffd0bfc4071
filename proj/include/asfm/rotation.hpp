// Copyright 2026 The activesfm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "asfm/common.hpp"

namespace asfm {

template <typename S>
inline Mat3<S> skew(const Vec3<S>& v) {
  Mat3<S> m;
  m << S(0), -v.z(), v.y(), v.z(), S(0), -v.x(), -v.y(), v.x(), S(0);
  return m;
}

// Rodrigues formula. For |r| below the series threshold the sin/cos ratios
// are replaced by their 2nd-order Taylor expansions, which keeps the value
// and its derivatives finite at r = 0.
template <typename S>
inline Mat3<S> rotvec_to_matrix(const Vec3<S>& r) {
  const S th2 = r.squaredNorm();
  const Mat3<S> K = skew(r);
  S a, b;  // R = I + a*K + b*K^2
  if (th2 < S(1e-8)) {
    a = S(1) - th2 / S(6);
    b = S(0.5) - th2 / S(24);
  } else {
    const S th = std::sqrt(th2);
    a = std::sin(th) / th;
    b = (S(1) - std::cos(th)) / th2;
  }
  return Mat3<S>::Identity() + a * K + b * K * K;
}

// Log map, returns |r| <= pi.
template <typename S>
inline Vec3<S> matrix_to_rotvec(const Mat3<S>& R) {
  const S tr = clamp((R.trace() - S(1)) / S(2), S(-1), S(1));
  const S th = std::acos(tr);
  Vec3<S> axis_sin(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (th < S(1e-6)) {
    // r ~ axis_sin/2 with a th^2/12 correction
    return axis_sin * (S(0.5) + th * th / S(12));
  }
  if (th > S(M_PI) - S(1e-4)) {
    // Near pi the skew part vanishes; recover the axis from the symmetric
    // part, then the angle from atan2 which stays well conditioned there.
    Vec3<S> ax;
    const Mat3<S> A =
        (R + R.transpose() + S(2) * Mat3<S>::Identity()) / S(4);
    int k = 0;
    A.diagonal().maxCoeff(&k);
    ax[k] = std::sqrt(std::max(A(k, k), S(0)));
    const int i = (k + 1) % 3, j = (k + 2) % 3;
    ax[i] = A(k, i) / ax[k];
    ax[j] = A(k, j) / ax[k];
    ax.normalize();
    // sign flip so that sin-axis agrees when it is not exactly zero
    if (ax.dot(axis_sin) < S(0)) ax = -ax;
    const S sin_th = ax.dot(axis_sin) / S(2);
    const S th_acc = std::atan2(sin_th, tr);
    return ax * th_acc;
  }
  return axis_sin * (th / (S(2) * std::sin(th)));
}

// Jacobian of the rotated vector: J = d(R(r) v)/dr, 3x3, column i is the
// partial w.r.t. r_i. Uses the closed form away from the origin and the
// series expansion of R(r)v = v + r x v + 1/2 r x (r x v) near it.
template <typename S>
inline Mat3<S> rotate_point_jacobian(const Vec3<S>& r, const Vec3<S>& v,
                                     const Mat3<S>& R) {
  const S th2 = r.squaredNorm();
  Mat3<S> J;
  if (th2 < S(1e-8)) {
    const S rv = r.dot(v);
    J = -skew(v) + S(0.5) * (rv * Mat3<S>::Identity() + r * v.transpose() -
                             S(2) * v * r.transpose());
    return J;
  }
  const Vec3<S> Rv = R * v;
  const Mat3<S> ImR = Mat3<S>::Identity() - R;
  for (int i = 0; i < 3; ++i) {
    Vec3<S> w = r.cross(Vec3<S>(ImR.col(i))) / th2;
    J.col(i) = (r[i] / th2) * r.cross(Rv) + w.cross(Rv);
  }
  return J;
}

template <typename S>
inline Mat3<S> rotate_point_jacobian(const Vec3<S>& r, const Vec3<S>& v) {
  return rotate_point_jacobian(r, v, rotvec_to_matrix(r));
}

// Roll-pitch-yaw (x-y-z intrinsic, applied as Rz(yaw)*Ry(pitch)*Rx(roll)).
template <typename S>
inline Mat3<S> euler_zyx_to_matrix(S roll, S pitch, S yaw) {
  const S cr = std::cos(roll), sr = std::sin(roll);
  const S cp = std::cos(pitch), sp = std::sin(pitch);
  const S cy = std::cos(yaw), sy = std::sin(yaw);
  Mat3<S> R;
  R << cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
       sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
       -sp, cp * sr, cp * cr;
  return R;
}

template <typename S>
inline Vec3<S> matrix_to_euler_zyx(const Mat3<S>& R) {
  const S sp = clamp(-R(2, 0), S(-1), S(1));
  const S pitch = std::asin(sp);
  S roll, yaw;
  if (std::abs(sp) > S(1) - S(1e-9)) {
    roll = std::atan2(-R(1, 2), R(1, 1));
    yaw = S(0);
  } else {
    roll = std::atan2(R(2, 1), R(2, 2));
    yaw = std::atan2(R(1, 0), R(0, 0));
  }
  return Vec3<S>(roll, pitch, yaw);
}

// Geodesic angle between two rotations, in radians.
template <typename S>
inline S rotation_geodesic_angle(const Mat3<S>& Ra, const Mat3<S>& Rb) {
  const Mat3<S> D = Ra.transpose() * Rb;
  return std::acos(clamp((D.trace() - S(1)) / S(2), S(-1), S(1)));
}

}  // namespace asfm
