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

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    ASFM_CHECK(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
    ASFM_CHECK(width > 0 && height > 0, "intrinsics: empty image size");
    ASFM_CHECK(cx >= 0 && cx < width && cy >= 0 && cy < height,
               "intrinsics: principal point outside image");
  }

  // K^-1 * (px, py, 1)^T
  Vec3d unproject(double px, double py) const {
    return Vec3d((px - cx) / fx, (py - cy) / fy, 1.0);
  }

  Vec2d project(const Vec3d& p_cam) const {
    return Vec2d(fx * p_cam.x() / p_cam.z() + cx,
                 fy * p_cam.y() / p_cam.z() + cy);
  }
};

// Pinhole with the principal point at the pixel-center of the image and the
// horizontal field of view mapped onto the full image width.
inline CameraIntrinsics make_pinhole(int width, int height, double fov_deg) {
  CameraIntrinsics K;
  K.width = width;
  K.height = height;
  K.cx = (width - 1) / 2.0;
  K.cy = (height - 1) / 2.0;
  K.fx = (width / 2.0) / std::tan(fov_deg * M_PI / 360.0);
  K.fy = K.fx;
  return K;
}

}  // namespace asfm
