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

#include <doctest.h>

#include "asfm/pattern.hpp"

using namespace asfm;

namespace {

PatternImage random_pattern(int w, int h, uint64_t seed) {
  Rng rng(seed);
  PatternImage img = PatternImage::zeros(w, h);
  for (auto& v : img.pixels) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("sample_pattern pixel centers, midpoints, out of range") {
  PatternImage img = random_pattern(8, 6, 1);
  // exactly on a pixel center
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) {
      const Vec3d c = sample_pattern<double>(img, double(x), double(y));
      for (int k = 0; k < 3; ++k) CHECK(c[k] == doctest::Approx(img.at(x, y)[k]));
    }
  // midway between two horizontally adjacent pixels
  const Vec3d mid = sample_pattern<double>(img, 2.5, 3.0);
  for (int k = 0; k < 3; ++k)
    CHECK(mid[k] == doctest::Approx(0.5 * (img.at(2, 3)[k] + img.at(3, 3)[k])));
  // out-of-frustum convention
  CHECK(sample_pattern<double>(img, -5.0, -5.0).norm() == 0.0);
  CHECK(sample_pattern<double>(img, 7.5, 3.0).norm() == 0.0);
}

TEST_CASE("sample_pattern is Lipschitz-continuous on random patterns") {
  PatternImage img = random_pattern(16, 16, 2);
  double max_adjacent = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x + 1 < 16; ++x)
      for (int k = 0; k < 3; ++k) {
        max_adjacent = std::max(max_adjacent, std::abs(img.at(x, y)[k] - img.at(x + 1, y)[k]));
        if (y + 1 < 16)
          max_adjacent = std::max(max_adjacent, std::abs(img.at(x, y)[k] - img.at(x, y + 1)[k]));
      }
  Rng rng(3);
  const double eps = 1e-4;
  for (int i = 0; i < 2000; ++i) {
    const double u = rng.uniform(0.5, 14.5), v = rng.uniform(0.5, 14.5);
    const double du = rng.uniform(-eps, eps), dv = rng.uniform(-eps, eps);
    const Vec3d a = sample_pattern<double>(img, u, v);
    const Vec3d b = sample_pattern<double>(img, u + du, v + dv);
    const double lip = 2 * max_adjacent * (std::abs(du) + std::abs(dv));
    CHECK((a - b).cwiseAbs().maxCoeff() <= lip + 1e-12);
  }
}

TEST_CASE("sample_pattern_grad matches finite differences inside cells") {
  PatternImage img = random_pattern(12, 12, 4);
  Rng rng(5);
  const double h = 1e-6;
  for (int i = 0; i < 300; ++i) {
    // keep away from cell boundaries where the bilinear kernel has kinks
    const double u = rng.uniform_int(0, 10) + rng.uniform(0.1, 0.9);
    const double v = rng.uniform_int(0, 10) + rng.uniform(0.1, 0.9);
    Eigen::Matrix<double, 3, 2> J;
    sample_pattern_grad<double>(img, u, v, &J);
    const Vec3d du = (sample_pattern<double>(img, u + h, v) -
                      sample_pattern<double>(img, u - h, v)) / (2 * h);
    const Vec3d dv = (sample_pattern<double>(img, u, v + h) -
                      sample_pattern<double>(img, u, v - h)) / (2 * h);
    CHECK((J.col(0) - du).norm() < 1e-6);
    CHECK((J.col(1) - dv).norm() < 1e-6);
  }
}

TEST_CASE("project_to_projector principal axis, behind, roundtrip") {
  Projector proj;
  proj.intrinsics = make_pinhole(64, 64, 60.0);
  proj.pattern = random_pattern(64, 64, 6);
  // on the optical axis at depth 1
  const auto sp = project_to_projector(Vec3d(0, 0, 1), proj);
  CHECK(sp.u == doctest::Approx(proj.intrinsics.cx));
  CHECK(sp.v == doctest::Approx(proj.intrinsics.cy));
  CHECK(sp.depth == doctest::Approx(1.0));
  // behind
  CHECK(project_to_projector(Vec3d(0, 0, -0.5), proj).depth < 0);
  // pixel -> 3D at depth d -> pixel
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double px = rng.uniform(0, 63), py = rng.uniform(0, 63);
    const double d = rng.uniform(0.2, 5.0);
    const Vec3d P = proj.intrinsics.unproject(px, py) * d;
    const auto back = project_to_projector(P, proj);
    CHECK(back.u == doctest::Approx(px).epsilon(1e-8));
    CHECK(back.v == doctest::Approx(py).epsilon(1e-8));
    CHECK(back.depth == doctest::Approx(d).epsilon(1e-10));
  }
  // offset + rotated projector roundtrip through the camera frame
  Projector off = proj;
  off.rel_rot = rotvec_to_matrix<double>(Vec3d(0.05, -0.1, 0.02));
  off.rel_trans = Vec3d(0.2, 0.01, -0.03);
  for (int i = 0; i < 100; ++i) {
    const double px = rng.uniform(0, 63), py = rng.uniform(0, 63);
    const double d = rng.uniform(0.2, 5.0);
    const Vec3d P_cam = off.rel_rot * (off.intrinsics.unproject(px, py) * d) + off.rel_trans;
    const auto back = project_to_projector(P_cam, off);
    CHECK(back.u == doctest::Approx(px).epsilon(1e-8));
    CHECK(back.v == doctest::Approx(py).epsilon(1e-8));
  }
}

TEST_CASE("projected_color zero behind and outside the frustum") {
  Projector proj;
  proj.intrinsics = make_pinhole(32, 32, 45.0);
  proj.pattern = random_pattern(32, 32, 8);
  CHECK(projected_color(Vec3d(0, 0, -1), proj).norm() == 0.0);
  CHECK(projected_color(Vec3d(50, 0, 1), proj).norm() == 0.0);
  const Vec3d on_axis = projected_color(Vec3d(0, 0, 2), proj);
  CHECK(on_axis.norm() > 0.0);
}

TEST_CASE("cross laser pattern profile") {
  const double thickness = 3.0;
  PatternImage img = make_cross_laser_pattern(65, 65, thickness, Vec3d(0, 1, 0));
  // center pixel: both lines overlap, full intensity
  CHECK(img.at(32, 32)[1] == doctest::Approx(1.0));
  CHECK(img.at(32, 32)[0] == doctest::Approx(0.0));
  // far from both lines
  const int far_px = 32 + static_cast<int>(std::ceil(5 * thickness)) + 1;
  CHECK(img.at(far_px, far_px)[1] < 1e-4);
  // a point on a laser line of the cross projects to full line intensity
  Projector proj;
  proj.intrinsics = make_pinhole(65, 65, 60.0);
  proj.pattern = img;
  const Vec3d on_line = proj.intrinsics.unproject(48.0, 32.0) * 1.7;
  CHECK(projected_color(on_line, proj)[1] == doctest::Approx(1.0).epsilon(1e-6));

  // row-sum of the horizontal line vs the numerically integrated profile
  double row_sum = 0;
  const int x_probe = 10;  // away from the vertical line
  for (int y = 0; y < 65; ++y) row_sum += img.at(x_probe, y)[1];
  double integral = 0;  // e^(-8 d^2 / t^2) over the rows, step 1px
  for (int y = 0; y < 65; ++y) {
    const double d = y - 32.0;
    integral += std::exp(-8.0 * d * d / (thickness * thickness));
  }
  CHECK(row_sum == doctest::Approx(integral).epsilon(0.02));
}

TEST_CASE("cross laser pattern symmetric under 90 degree rotation") {
  PatternImage img = make_cross_laser_pattern(33, 33, 2.0, Vec3d(0.3, 0.8, 0.1));
  for (int y = 0; y < 33; ++y)
    for (int x = 0; x < 33; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(img.at(x, y)[c] == doctest::Approx(img.at(32 - y, x)[c]));
}

TEST_CASE("build_default_rig geometry") {
  const ProjectorRig rig = build_default_rig(128, 128, 60.0, 64, 60.0, 2.0);
  rig.validate();
  REQUIRE(rig.projectors.size() == 4);
  CHECK(rig.projectors[0].rel_trans.x() == doctest::Approx(-0.6));
  CHECK(rig.projectors[1].rel_trans.x() == doctest::Approx(-0.2));
  CHECK(rig.projectors[2].rel_trans.x() == doctest::Approx(0.2));
  CHECK(rig.projectors[3].rel_trans.x() == doctest::Approx(0.6));
  CHECK(rig.camera.fx == doctest::Approx(64.0 / std::tan(M_PI / 6)));
  for (const auto& p : rig.projectors)
    CHECK((p.rel_rot - Mat3d::Identity()).norm() == 0.0);
}
