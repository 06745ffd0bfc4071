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

#include <vector>

#include "asfm/camera.hpp"
#include "asfm/rotation.hpp"

namespace asfm {

// Per-frame pose of the camera/projector rig, camera-to-world: `trans` is the
// camera position in world coordinates and rotation() maps camera-frame
// directions into the world frame.
struct SystemPose {
  Vec3d rot = Vec3d::Zero();    // axis-angle, radians
  Vec3d trans = Vec3d::Zero();  // world units

  Mat3d rotation() const { return rotvec_to_matrix<double>(rot); }

  // Keeps |rot| inside [0, pi] (equivalent rotation with minimal angle).
  void canonicalize() { rot = matrix_to_rotvec<double>(rotation()); }
};

struct Ray {
  Vec3d origin = Vec3d::Zero();
  Vec3d direction = Vec3d::UnitZ();  // unit norm
  Vec2d pixel = Vec2d::Zero();
};

struct SampleSet {
  VecXd distances;                    // ascending, in [near, far]
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;
};

// Backcast a pixel through the camera: direction = R * K^-1 * (px,py,1)^T,
// normalized; origin = s * t. `s` is the global scaling that fits the scene
// into the unit sphere.
inline Ray backcast_ray(const Vec2d& pixel, const CameraIntrinsics& K,
                        const SystemPose& pose, double s) {
  K.validate();
  Ray ray;
  ray.pixel = pixel;
  ray.direction = (pose.rotation() * K.unproject(pixel.x(), pixel.y())).normalized();
  ray.origin = s * pose.trans;
  return ray;
}

struct BackcastJacobians {
  Mat3d ddir_drot;      // d(direction)/d(rot)
  Mat3d dorigin_dtrans; // = s * I
};

inline Ray backcast_ray_with_jacobians(const Vec2d& pixel,
                                       const CameraIntrinsics& K,
                                       const SystemPose& pose, double s,
                                       BackcastJacobians* jac) {
  K.validate();
  Ray ray;
  ray.pixel = pixel;
  const Vec3d q = K.unproject(pixel.x(), pixel.y());
  const Mat3d R = pose.rotation();
  const Vec3d u = R * q;
  const double n = u.norm();
  ray.direction = u / n;
  ray.origin = s * pose.trans;
  if (jac) {
    const Mat3d Ju = rotate_point_jacobian<double>(pose.rot, q, R);
    // normalization: d(u/|u|)/du = (I - dd^T)/|u|
    const Mat3d P = (Mat3d::Identity() - ray.direction * ray.direction.transpose()) / n;
    jac->ddir_drot = P * Ju;
    jac->dorigin_dtrans = s * Mat3d::Identity();
  }
  return ray;
}

// n distances in [near, far]; regular intervals, or one jittered draw per
// stratum when `stratified` is set. Points satisfy P_u = o + d(u) * dir.
inline SampleSet sample_along_ray(const Ray& ray, double near, double far,
                                  int n, bool stratified, Rng& rng) {
  ASFM_CHECK(near < far, "sample_along_ray: near must be < far");
  ASFM_CHECK(n >= 2, "sample_along_ray: need at least 2 samples");
  SampleSet set;
  set.distances.resize(n);
  const double step = (far - near) / (stratified ? n : (n - 1));
  for (int i = 0; i < n; ++i) {
    if (stratified) {
      set.distances[i] = near + (i + rng.uniform()) * step;
    } else {
      set.distances[i] = near + i * step;
    }
  }
  set.points.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    set.points.row(i) = (ray.origin + set.distances[i] * ray.direction).transpose();
  }
  return set;
}

}  // namespace asfm
