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

#include <functional>
#include <optional>

#include "asfm/fields.hpp"
#include "asfm/geometry.hpp"
#include "asfm/pattern.hpp"

namespace asfm {

// Opacity of a sample from two consecutive SDF values:
//   alpha = max((phi(f_t) - phi(f_next)) / phi(f_t), 0)
// with phi the logistic sigmoid of the given sharpness. The denominator is
// guarded because deep-inside samples drive phi to zero.
template <typename S>
inline S alpha_from_sdf(S f_t, S f_next, S sharpness) {
  const S phi_t = act::sigmoid(sharpness * f_t);
  const S phi_n = act::sigmoid(sharpness * f_next);
  const S denom = std::max(phi_t, S(1e-6));
  return std::max((phi_t - phi_n) / denom, S(0));
}

// Front-to-back compositing: weights_t = alpha_t * prod_{j<t} (1 - alpha_j).
template <typename S>
void composite(const VecX<S>& alphas, const MatX<S>& colors, Vec3<S>* color,
               VecX<S>* weights, S* accumulated) {
  const Eigen::Index n = alphas.size();
  weights->resize(n);
  Vec3<S> C = Vec3<S>::Zero();
  S transmittance = S(1);
  S acc = S(0);
  for (Eigen::Index t = 0; t < n; ++t) {
    const S w = transmittance * alphas[t];
    (*weights)[t] = w;
    C += w * Vec3<S>(colors.row(t).transpose());
    acc += w;
    transmittance *= (S(1) - alphas[t]);
  }
  *color = C;
  *accumulated = acc;
}

// The Lambertian pattern blend: c = D + sum_k (i_r*D + i_b) * Q_k, taken
// elementwise over RGB with Qsum = sum_k Q_k, clamped to >= 0.
template <typename S>
inline Vec3<S> blend_pattern_color(const Vec3<S>& D, const Vec3<S>& Qsum,
                                   S i_r, S i_b) {
  Vec3<S> c;
  for (int i = 0; i < 3; ++i) {
    const S v = D[i] + (i_r * D[i] + i_b) * Qsum[i];
    c[i] = std::max(v, S(0));
  }
  return c;
}

// Sum of projector pattern colors at a camera-frame point. Projector k's
// extrinsics may carry a learnable (rot,trans) delta on top of the rig
// calibration; pass deltas as a Np x 6 matrix or nothing.
inline Vec3d projector_color_sum(const Vec3d& P_cam, const ProjectorRig& rig,
                                 const MatXd* deltas = nullptr) {
  Vec3d q = Vec3d::Zero();
  for (size_t k = 0; k < rig.projectors.size(); ++k) {
    const Projector& proj = rig.projectors[k];
    Mat3d R = proj.rel_rot;
    Vec3d t = proj.rel_trans;
    if (deltas && deltas->rows() > static_cast<Eigen::Index>(k)) {
      R = R * rotvec_to_matrix<double>(Vec3d(deltas->row(k).head<3>()));
      t += Vec3d(deltas->row(k).tail<3>());
    }
    const Vec3d X = R.transpose() * (P_cam - t);
    if (X.z() <= 0) continue;
    const Vec2d uv = proj.intrinsics.project(X);
    q += sample_pattern<double>(proj.pattern, uv.x(), uv.y());
  }
  return q;
}

// Color of a world point under the rig held at `pose`: evaluates the color
// network for the albedo and blends the projected patterns. `scene_scale`
// converts the rig's metric extrinsics into the scaled world.
template <typename S>
Vec3<S> shade_point(const Vec3d& P_world, const Vec3d& view_dir,
                    const ProjectorRig& rig, const FieldState<S>& state,
                    const SystemPose& pose, double scene_scale) {
  const Vec3<S> Ps = P_world.cast<S>();
  VecX<S> f;
  MatX<S> grad, feat;
  MatX<S> Pm(1, 3);
  Pm.row(0) = Ps.transpose();
  sdf_gradient_batch(state, Pm, &f, &grad, &feat);
  const Vec3<S> D = color_eval(state, Ps, view_dir.cast<S>().eval(),
                               Vec3<S>(grad.row(0).transpose()),
                               VecX<S>(feat.row(0).transpose()));
  // camera-frame point, metric rig extrinsics scaled into the unit-sphere world
  const Vec3d P_cam = pose.rotation().transpose() * (P_world - scene_scale * pose.trans);
  ProjectorRig scaled = rig;
  for (auto& p : scaled.projectors) p.rel_trans *= scene_scale;
  const Vec3d Qsum = projector_color_sum(P_cam, scaled);
  return blend_pattern_color(D, Vec3<S>(Qsum.cast<S>()), state.i_r, state.i_b);
}

// Inverse-CDF draw of `n_fine` extra distances from the coarse weight
// distribution over the coarse bins; merged and re-sorted with the coarse
// distances. Degenerate all-zero weights fall back to uniform resampling.
inline VecXd hierarchical_resample(const VecXd& coarse_dists,
                                   const VecXd& coarse_weights, int n_fine,
                                   Rng& rng) {
  const int n_bins = static_cast<int>(coarse_weights.size());
  ASFM_CHECK(coarse_dists.size() == n_bins + 1,
             "hierarchical_resample: need one more distance than weights");
  VecXd w = coarse_weights.cwiseMax(0.0);
  const double total = w.sum();
  if (!(total > 1e-12)) w.setConstant(1.0);
  VecXd cdf(n_bins + 1);
  cdf[0] = 0;
  for (int i = 0; i < n_bins; ++i) cdf[i + 1] = cdf[i] + w[i];
  cdf /= cdf[n_bins];

  VecXd merged(coarse_dists.size() + n_fine);
  merged.head(coarse_dists.size()) = coarse_dists;
  for (int i = 0; i < n_fine; ++i) {
    const double u = (i + rng.uniform()) / n_fine;  // stratified in [0,1)
    // binary search for the bin with cdf[j] <= u < cdf[j+1]
    int lo = 0, hi = n_bins - 1;
    while (lo < hi) {
      const int mid = (lo + hi + 1) / 2;
      if (cdf[mid] <= u) lo = mid;
      else hi = mid - 1;
    }
    const double span = cdf[lo + 1] - cdf[lo];
    const double frac = span > 1e-12 ? (u - cdf[lo]) / span : 0.5;
    merged[coarse_dists.size() + i] =
        coarse_dists[lo] + frac * (coarse_dists[lo + 1] - coarse_dists[lo]);
  }
  std::sort(merged.data(), merged.data() + merged.size());
  return merged;
}

struct RenderConfig {
  int n_coarse = 32;
  int n_fine = 32;
  double near = 0.05;
  double far = 2.0;
  bool clip_to_unit_sphere = true;
  double clip_radius = 1.05;   // scaled units
  bool stratified = true;
  bool no_sl = false;          // disable pattern projection entirely
  bool debug_checks = false;   // assert weight sub-probability per batch
};

// Restrict [near, far] to the segment of the ray inside the clip sphere.
// Returns false when the ray misses it entirely.
inline bool clip_ray_to_sphere(const Vec3d& origin, const Vec3d& dir,
                               double radius, double* near, double* far) {
  const double b = origin.dot(dir);
  const double c = origin.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0) return false;
  const double sq = std::sqrt(disc);
  const double t0 = -b - sq, t1 = -b + sq;
  if (t1 <= *near) return false;
  *near = std::max(*near, t0);
  *far = std::min(*far, t1);
  return *far > *near;
}

// A field that can stand in for the neural one inside the forward renderer
// (analytic oracles, converged ground truth, the trained net itself).
struct FieldFunctions {
  std::function<double(const Vec3d&)> sdf;
  std::function<Vec3d(const Vec3d&)> gradient;
  // albedo(P, view); return value in [0,1]^3
  std::function<Vec3d(const Vec3d&, const Vec3d&)> albedo;
  double sharpness = 64.0;
  double i_r = 0.0;
  double i_b = 1.0;
};

struct RayRenderOutput {
  Vec3d color = Vec3d::Zero();
  double accumulated = 0.0;
  double depth = 0.0;         // weight-normalized expected depth
  VecXd weights;
  VecXd distances;
  std::vector<double> gradient_norms;
  bool hit_clip = true;
};

// Forward-only volumetric rendering of one ray against a FieldFunctions
// bundle. This is the reference path used by oracle tests, debug renders and
// ground-truth consistency checks; the training path in pipeline.hpp shares
// the same primitives.
inline RayRenderOutput render_ray(const Ray& ray, const RenderConfig& cfg,
                                  const FieldFunctions& field,
                                  const ProjectorRig* rig,
                                  const SystemPose& pose, double scene_scale,
                                  Rng& rng) {
  RayRenderOutput out;
  double near = cfg.near, far = cfg.far;
  if (cfg.clip_to_unit_sphere &&
      !clip_ray_to_sphere(ray.origin, ray.direction, cfg.clip_radius, &near, &far)) {
    out.hit_clip = false;
    return out;
  }
  SampleSet coarse = sample_along_ray(ray, near, far, cfg.n_coarse, cfg.stratified, rng);
  VecXd dists = coarse.distances;
  if (cfg.n_fine > 0) {
    VecXd f(cfg.n_coarse);
    for (int i = 0; i < cfg.n_coarse; ++i)
      f[i] = field.sdf(Vec3d(coarse.points.row(i).transpose()));
    VecXd alphas(cfg.n_coarse - 1), weights;
    for (int i = 0; i + 1 < cfg.n_coarse; ++i)
      alphas[i] = alpha_from_sdf<double>(f[i], f[i + 1], field.sharpness);
    Vec3<double> ctmp;
    double acc;
    MatXd dummy = MatXd::Zero(alphas.size(), 3);
    composite<double>(alphas, dummy, &ctmp, &weights, &acc);
    dists = hierarchical_resample(coarse.distances, weights, cfg.n_fine, rng);
  }
  const int n = static_cast<int>(dists.size());
  VecXd f(n);
  std::vector<Vec3d> pts(n);
  for (int i = 0; i < n; ++i) {
    pts[i] = ray.origin + dists[i] * ray.direction;
    f[i] = field.sdf(pts[i]);
  }
  VecXd alphas(n - 1);
  MatXd colors(n - 1, 3);
  ProjectorRig scaled;
  if (rig) {
    scaled = *rig;
    for (auto& p : scaled.projectors) p.rel_trans *= scene_scale;
  }
  const Mat3d Rt = pose.rotation().transpose();
  for (int i = 0; i + 1 < n; ++i) {
    alphas[i] = alpha_from_sdf<double>(f[i], f[i + 1], field.sharpness);
    Vec3d D = field.albedo ? field.albedo(pts[i], ray.direction) : Vec3d::Zero();
    Vec3d Qsum = Vec3d::Zero();
    if (rig && !cfg.no_sl) {
      const Vec3d P_cam = Rt * (pts[i] - scene_scale * pose.trans);
      Qsum = projector_color_sum(P_cam, scaled);
    }
    colors.row(i) =
        blend_pattern_color<double>(D, Qsum, field.i_r, field.i_b).transpose();
    out.gradient_norms.push_back(field.gradient ? field.gradient(pts[i]).norm() : 1.0);
  }
  Vec3d C;
  double acc;
  VecXd weights;
  composite<double>(alphas, colors, &C, &weights, &acc);
  out.color = C;
  out.accumulated = acc;
  out.weights = weights;
  out.distances = dists;
  double dsum = 0;
  for (int i = 0; i + 1 < n; ++i) dsum += weights[i] * dists[i];
  out.depth = acc > 1e-8 ? dsum / acc : 0.0;
  return out;
}

// Wraps a neural FieldState (any scalar type) as FieldFunctions for the
// forward renderer.
template <typename S>
FieldFunctions field_functions(const FieldState<S>& state) {
  FieldFunctions fn;
  fn.sdf = [&state](const Vec3d& p) {
    return static_cast<double>(sdf_eval(state, Vec3<S>(p.cast<S>())).first);
  };
  fn.gradient = [&state](const Vec3d& p) {
    return sdf_gradient(state, Vec3<S>(p.cast<S>())).template cast<double>().eval();
  };
  fn.albedo = [&state](const Vec3d& p, const Vec3d& v) {
    MatX<S> Pm(1, 3);
    Pm.row(0) = p.cast<S>().transpose();
    VecX<S> f;
    MatX<S> grad, feat;
    sdf_gradient_batch(state, Pm, &f, &grad, &feat);
    Vec3<S> c = color_eval(state, Vec3<S>(p.cast<S>()), Vec3<S>(v.cast<S>()),
                           Vec3<S>(grad.row(0).transpose()),
                           VecX<S>(feat.row(0).transpose()));
    return c.template cast<double>().eval();
  };
  fn.sharpness = static_cast<double>(state.sharpness());
  fn.i_r = static_cast<double>(state.i_r);
  fn.i_b = static_cast<double>(state.i_b);
  return fn;
}

}  // namespace asfm
