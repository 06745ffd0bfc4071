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

#include <string>
#include <vector>

#include "asfm/camera.hpp"
#include "asfm/rotation.hpp"

namespace asfm {

// Row-major H x W x 3 intensity image in [0,1].
struct PatternImage {
  int width = 0, height = 0;
  std::vector<double> pixels;  // height*width*3

  bool empty() const { return width == 0 || height == 0; }

  double* at(int x, int y) { return &pixels[3 * (static_cast<size_t>(y) * width + x)]; }
  const double* at(int x, int y) const {
    return &pixels[3 * (static_cast<size_t>(y) * width + x)];
  }

  static PatternImage zeros(int width, int height) {
    PatternImage img;
    img.width = width;
    img.height = height;
    img.pixels.assign(static_cast<size_t>(width) * height * 3, 0.0);
    return img;
  }
};

// Bilinear lookup; coordinates outside [0,W-1]x[0,H-1] return zero (dark
// outside the pattern).
template <typename S>
inline Vec3<S> sample_pattern(const PatternImage& img, S u, S v) {
  if (!(u >= S(0) && u <= S(img.width - 1) && v >= S(0) && v <= S(img.height - 1)))
    return Vec3<S>::Zero();
  int x0 = static_cast<int>(std::floor(static_cast<double>(u)));
  int y0 = static_cast<int>(std::floor(static_cast<double>(v)));
  if (x0 >= img.width - 1) x0 = img.width - 2;
  if (y0 >= img.height - 1) y0 = img.height - 2;
  if (img.width == 1) x0 = 0;
  if (img.height == 1) y0 = 0;
  const S fx = u - S(x0), fy = v - S(y0);
  Vec3<S> out = Vec3<S>::Zero();
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double* p00 = img.at(x0, y0);
  const double* p10 = img.at(x1, y0);
  const double* p01 = img.at(x0, y1);
  const double* p11 = img.at(x1, y1);
  for (int c = 0; c < 3; ++c) {
    const S a = S(p00[c]) * (S(1) - fx) + S(p10[c]) * fx;
    const S b = S(p01[c]) * (S(1) - fx) + S(p11[c]) * fx;
    out[c] = a * (S(1) - fy) + b * fy;
  }
  return out;
}

// Bilinear lookup plus the derivative of each channel w.r.t. (u, v).
// d_duv is 3x2. Out-of-range coordinates return zero value and zero gradient.
template <typename S>
inline Vec3<S> sample_pattern_grad(const PatternImage& img, S u, S v,
                                   Eigen::Matrix<S, 3, 2>* d_duv) {
  d_duv->setZero();
  if (!(u >= S(0) && u <= S(img.width - 1) && v >= S(0) && v <= S(img.height - 1)))
    return Vec3<S>::Zero();
  int x0 = static_cast<int>(std::floor(static_cast<double>(u)));
  int y0 = static_cast<int>(std::floor(static_cast<double>(v)));
  if (x0 >= img.width - 1) x0 = img.width - 2;
  if (y0 >= img.height - 1) y0 = img.height - 2;
  if (img.width == 1) x0 = 0;
  if (img.height == 1) y0 = 0;
  const S fx = u - S(x0), fy = v - S(y0);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double* p00 = img.at(x0, y0);
  const double* p10 = img.at(x1, y0);
  const double* p01 = img.at(x0, y1);
  const double* p11 = img.at(x1, y1);
  Vec3<S> out;
  for (int c = 0; c < 3; ++c) {
    const S a = S(p00[c]) * (S(1) - fx) + S(p10[c]) * fx;
    const S b = S(p01[c]) * (S(1) - fx) + S(p11[c]) * fx;
    out[c] = a * (S(1) - fy) + b * fy;
    const S da_du = S(p10[c]) - S(p00[c]);
    const S db_du = S(p11[c]) - S(p01[c]);
    (*d_duv)(c, 0) = da_du * (S(1) - fy) + db_du * fy;
    (*d_duv)(c, 1) = b - a;
  }
  return out;
}

// A projector rigidly attached to the camera. (rel_rot, rel_trans) is the
// projector pose in the camera frame: X_cam = rel_rot * X_proj + rel_trans.
struct Projector {
  CameraIntrinsics intrinsics;
  Mat3d rel_rot = Mat3d::Identity();
  Vec3d rel_trans = Vec3d::Zero();
  PatternImage pattern;
  bool refine_pose = false;

  void validate() const {
    intrinsics.validate();
    ASFM_CHECK(!pattern.empty(), "projector: empty pattern");
    ASFM_CHECK((rel_rot * rel_rot.transpose() - Mat3d::Identity()).norm() < 1e-6,
               "projector: rel_rot not orthonormal");
  }
};

struct ProjectorRig {
  CameraIntrinsics camera;
  std::vector<Projector> projectors;

  void validate() const {
    camera.validate();
    ASFM_CHECK(!projectors.empty(), "rig: need at least one projector");
    for (const auto& p : projectors) p.validate();
  }
};

struct ProjectorScreenPoint {
  double u = 0, v = 0;
  double depth = 0;  // projector-frame z; <= 0 means behind the projector
};

// World point -> projector screen, for a projector whose frame coincides
// with the world frame of `proj` (callers compose rig/system poses first by
// passing the point already expressed in the projector's parent frame).
// Here P is in the projector's parent (camera) frame.
inline ProjectorScreenPoint project_to_projector(const Vec3d& P_cam,
                                                 const Projector& proj) {
  const Vec3d X = proj.rel_rot.transpose() * (P_cam - proj.rel_trans);
  ProjectorScreenPoint out;
  out.depth = X.z();
  if (X.z() > 0) {
    const Vec2d uv = proj.intrinsics.project(X);
    out.u = uv.x();
    out.v = uv.y();
  }
  return out;
}

// Pattern color seen at a camera-frame point; zero when behind the projector
// or outside the pattern.
inline Vec3d projected_color(const Vec3d& P_cam, const Projector& proj) {
  const ProjectorScreenPoint sp = project_to_projector(P_cam, proj);
  if (sp.depth <= 0) return Vec3d::Zero();
  return sample_pattern<double>(proj.pattern, sp.u, sp.v);
}

// One horizontal and one vertical line through the pattern center. Each line
// has a Gaussian profile whose intensity falls to 1/e^2 at half the given
// thickness; the two lines are summed and clamped to [0,1].
inline PatternImage make_cross_laser_pattern(int width, int height,
                                             double thickness_px,
                                             const Vec3d& color,
                                             double softness = 1.0) {
  ASFM_CHECK(thickness_px > 0, "cross pattern: thickness must be positive");
  PatternImage img = PatternImage::zeros(width, height);
  const double xc = (width - 1) / 2.0;
  const double yc = (height - 1) / 2.0;
  const double w = thickness_px * softness;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dh = y - yc;  // distance to the horizontal line
      const double dv = x - xc;  // distance to the vertical line
      const double ih = std::exp(-8.0 * dh * dh / (w * w));
      const double iv = std::exp(-8.0 * dv * dv / (w * w));
      const double intensity = std::min(1.0, ih + iv);
      double* px = img.at(x, y);
      for (int c = 0; c < 3; ++c) px[c] = clamp(intensity * color[c], 0.0, 1.0);
    }
  }
  return img;
}

// 4 projectors lined up left/right of the camera at the given lateral
// baselines (meters by default: +-0.2 and +-0.6), parallel optical axes,
// green cross-laser patterns.
inline ProjectorRig build_default_rig(int cam_width, int cam_height,
                                      double cam_fov_deg = 60.0,
                                      int pattern_res = 256,
                                      double pattern_fov_deg = 60.0,
                                      double thickness_px = 2.0,
                                      std::vector<double> baselines = {-0.6, -0.2, 0.2, 0.6}) {
  ProjectorRig rig;
  rig.camera = make_pinhole(cam_width, cam_height, cam_fov_deg);
  const PatternImage cross =
      make_cross_laser_pattern(pattern_res, pattern_res, thickness_px, Vec3d(0, 1, 0));
  for (double b : baselines) {
    Projector p;
    p.intrinsics = make_pinhole(pattern_res, pattern_res, pattern_fov_deg);
    p.rel_rot = Mat3d::Identity();
    p.rel_trans = Vec3d(b, 0, 0);
    p.pattern = cross;
    rig.projectors.push_back(std::move(p));
  }
  return rig;
}

}  // namespace asfm
