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

#include <atomic>
#include <thread>

#include "asfm/renderer.hpp"

namespace asfm {

template <typename S>
struct PoseBlock {
  MatX<S> rot;    // n_frames x 3 (axis-angle)
  MatX<S> trans;  // n_frames x 3

  int frames() const { return static_cast<int>(rot.rows()); }
};

template <typename S>
struct ParamGrads {
  MlpGrads<S> sdf, color;
  std::vector<MatX<S>> hash_tables;
  S log_sharpness = S(0), i_r = S(0), i_b = S(0);
  MatX<S> pose_rot, pose_trans;
  MatX<S> proj_delta;  // n_projectors x 6 (rot, trans)

  void init_like(const FieldState<S>& field, int n_frames, int n_projectors) {
    sdf.init_like(field.sdf_mlp);
    color.init_like(field.color_mlp);
    hash_tables.clear();
    for (const auto& t : field.hash.tables)
      hash_tables.push_back(MatX<S>::Zero(t.rows(), t.cols()));
    log_sharpness = i_r = i_b = S(0);
    pose_rot.setZero(n_frames, 3);
    pose_trans.setZero(n_frames, 3);
    proj_delta.setZero(n_projectors, 6);
  }

  void set_zero() {
    for (auto& l : sdf.layers) { l.W.setZero(); l.b.setZero(); }
    for (auto& l : color.layers) { l.W.setZero(); l.b.setZero(); }
    for (auto& t : hash_tables) t.setZero();
    log_sharpness = i_r = i_b = S(0);
    pose_rot.setZero();
    pose_trans.setZero();
    proj_delta.setZero();
  }

  void add(const ParamGrads& o) {
    sdf.add(o.sdf);
    color.add(o.color);
    for (size_t i = 0; i < hash_tables.size(); ++i) hash_tables[i] += o.hash_tables[i];
    log_sharpness += o.log_sharpness;
    i_r += o.i_r;
    i_b += o.i_b;
    pose_rot += o.pose_rot;
    pose_trans += o.pose_trans;
    proj_delta += o.proj_delta;
  }
};

struct PixelRay {
  int frame = 0;
  double px = 0, py = 0;
};

// One training batch: rays plus every random draw they will consume, so the
// render workers are RNG-free and chunk order fixes the arithmetic exactly.
template <typename S>
struct RayBatch {
  std::vector<PixelRay> rays;
  MatX<S> gt_color;  // B x 3
  VecX<S> gt_mask;   // B, or empty when the dataset has no masks
  MatXd jitter;      // B x n_coarse stratified jitters in [0,1)
  MatXd fine_u;      // B x n_fine

  int size() const { return static_cast<int>(rays.size()); }
  bool has_mask() const { return gt_mask.size() > 0; }
};

template <typename S>
struct LossBreakdown {
  S total = S(0), color = S(0), eikonal = S(0), mask = S(0);
};

struct LossWeights {
  double lambda_eikonal = 0.1;
  double beta_mask = 0.1;
};

template <typename S>
struct RenderOutputs {
  MatX<S> color;  // B x 3
  VecX<S> acc;    // B
  VecX<S> depth;  // B
};

// Differentiable volumetric rendering with pattern projection, fused with
// the training objective. Sample distances (stratified jitter, importance
// resampling, sphere clipping) are treated as constants by the backward
// pass; every other path - SDF/color networks, hash tables, sigmoid
// sharpness, illumination coefficients, system poses and projector deltas -
// is differentiated exactly, including the flow through the SDF spatial
// gradient used by the Eikonal term and the shading normals.
template <typename S>
class RenderPipeline {
 public:
  RenderPipeline(const ProjectorRig& rig, const RenderConfig& cfg,
                 double scene_scale)
      : rig_(rig), cfg_(cfg), scene_scale_(scene_scale) {
    for (const auto& p : rig_.projectors) {
      rel_rot_.push_back(p.rel_rot);
      rel_trans_scaled_.push_back((scene_scale_ * p.rel_trans).eval());
    }
  }

  const RenderConfig& config() const { return cfg_; }
  double scene_scale() const { return scene_scale_; }

  // Renders, evaluates the objective and (when `grads` is non-null)
  // accumulates all parameter gradients. Deterministic for a fixed chunk
  // count regardless of the number of threads.
  LossBreakdown<S> render_losses(const FieldState<S>& field,
                                 const PoseBlock<S>& poses,
                                 const MatX<S>& proj_delta,
                                 const RayBatch<S>& batch,
                                 const LossWeights& lw, bool pose_grads,
                                 bool proj_grads, ParamGrads<S>* grads,
                                 RenderOutputs<S>* outputs, int n_chunks = 8,
                                 int n_threads = 0) const;

 private:
  struct RaySetup {
    bool valid = false;
    Vec3<S> q;        // K^-1 p (unnormalized)
    Vec3<S> origin, dir;
    S inv_qnorm = S(1);
    double near = 0, far = 0;
    int frame = 0;
  };

  struct ChunkResult {
    S color_abs_sum = S(0);
    S eikonal_sum = S(0);
    S mask_sum = S(0);
    ParamGrads<S> grads;
    bool grads_used = false;
  };

  void process_chunk(const FieldState<S>& field, const PoseBlock<S>& poses,
                     const MatX<S>& proj_delta, const RayBatch<S>& batch,
                     const std::vector<RaySetup>& setup, const LossWeights& lw,
                     bool pose_grads, bool proj_grads, int r0, int r1,
                     int total_rays, long total_samples, ChunkResult* res,
                     RenderOutputs<S>* outputs) const;

  ProjectorRig rig_;
  RenderConfig cfg_;
  double scene_scale_;
  std::vector<Mat3d> rel_rot_;
  std::vector<Vec3d> rel_trans_scaled_;
};

template <typename S>
LossBreakdown<S> RenderPipeline<S>::render_losses(
    const FieldState<S>& field, const PoseBlock<S>& poses,
    const MatX<S>& proj_delta, const RayBatch<S>& batch, const LossWeights& lw,
    bool pose_grads, bool proj_grads, ParamGrads<S>* grads,
    RenderOutputs<S>* outputs, int n_chunks, int n_threads) const {
  const int B = batch.size();
  ASFM_CHECK(B > 0, "render_losses: empty batch");
  ASFM_CHECK(cfg_.no_sl || rig_.projectors.empty() ||
                 proj_delta.rows() == static_cast<Eigen::Index>(rig_.projectors.size()),
             "render_losses: projector delta shape mismatch");
  const int n_total = cfg_.n_coarse + cfg_.n_fine;

  // Per-ray geometry on the calling thread; cheap and keeps the sample
  // layout identical for any thread count.
  std::vector<RaySetup> setup(B);
  long total_samples = 0;
  for (int r = 0; r < B; ++r) {
    RaySetup& s = setup[r];
    const PixelRay& pr = batch.rays[r];
    s.frame = pr.frame;
    const Vec3d qd = rig_.camera.unproject(pr.px, pr.py);
    s.q = qd.cast<S>();
    const Vec3<S> rot = poses.rot.row(pr.frame).transpose();
    const Vec3<S> trans = poses.trans.row(pr.frame).transpose();
    const Mat3<S> R = rotvec_to_matrix<S>(rot);
    const Vec3<S> u = R * s.q;
    const S un = u.norm();
    s.inv_qnorm = S(1) / un;
    s.dir = u * s.inv_qnorm;
    s.origin = S(scene_scale_) * trans;
    double near = cfg_.near, far = cfg_.far;
    if (cfg_.clip_to_unit_sphere) {
      const Vec3d o = s.origin.template cast<double>();
      const Vec3d d = s.dir.template cast<double>();
      s.valid = clip_ray_to_sphere(o, d, cfg_.clip_radius, &near, &far);
    } else {
      s.valid = far > near;
    }
    s.near = near;
    s.far = far;
    if (s.valid) total_samples += n_total;
  }
  ASFM_CHECK(total_samples > 0, "render_losses: no ray intersects the scene");

  if (outputs) {
    outputs->color.setZero(B, 3);
    outputs->acc.setZero(B);
    outputs->depth.setZero(B);
  }

  if (n_chunks < 1) n_chunks = 1;
  if (n_chunks > B) n_chunks = B;
  std::vector<ChunkResult> results(n_chunks);
  if (grads) {
    for (auto& res : results) {
      res.grads.init_like(field, poses.frames(),
                          static_cast<int>(rig_.projectors.size()));
      res.grads_used = true;
    }
  }

  const int per = (B + n_chunks - 1) / n_chunks;
  if (n_threads <= 0)
    n_threads = std::min<int>(n_chunks, std::max(1u, std::thread::hardware_concurrency()));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= n_chunks) break;
      const int r0 = c * per;
      const int r1 = std::min(B, r0 + per);
      if (r0 >= r1) continue;
      process_chunk(field, poses, proj_delta, batch, setup, lw, pose_grads,
                    proj_grads, r0, r1, B, total_samples, &results[c], outputs);
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  LossBreakdown<S> loss;
  for (auto& res : results) {
    loss.color += res.color_abs_sum;
    loss.eikonal += res.eikonal_sum;
    loss.mask += res.mask_sum;
    if (grads && res.grads_used) grads->add(res.grads);
  }
  loss.color /= S(3 * B);
  loss.eikonal /= S(total_samples);
  if (batch.has_mask()) loss.mask /= S(B);
  loss.total = loss.color + S(lw.lambda_eikonal) * loss.eikonal +
               (batch.has_mask() ? S(lw.beta_mask) * loss.mask : S(0));
  ASFM_CHECK(std::isfinite(static_cast<double>(loss.total)),
             "render_losses: non-finite objective");
  return loss;
}

template <typename S>
void RenderPipeline<S>::process_chunk(
    const FieldState<S>& field, const PoseBlock<S>& poses,
    const MatX<S>& proj_delta, const RayBatch<S>& batch,
    const std::vector<RaySetup>& setup, const LossWeights& lw, bool pose_grads,
    bool proj_grads, int r0, int r1, int total_rays, long total_samples,
    ChunkResult* res, RenderOutputs<S>* outputs) const {
  const int n_coarse = cfg_.n_coarse;
  const int n_fine = cfg_.n_fine;
  const int n_total = n_coarse + n_fine;
  const bool want_grads = res->grads_used;
  const S sharpness = field.sharpness();
  const int n_proj = static_cast<int>(rig_.projectors.size());
  const bool use_sl = !cfg_.no_sl && n_proj > 0;

  std::vector<int> rays;  // valid rays of this chunk
  for (int r = r0; r < r1; ++r) {
    if (setup[r].valid) {
      rays.push_back(r);
    } else {
      // empty ray: renders black with zero accumulation; constant loss
      for (int c = 0; c < 3; ++c)
        res->color_abs_sum += std::abs(batch.gt_color(r, c));
      if (batch.has_mask()) {
        const S a = S(1e-5);
        const S m = batch.gt_mask[r];
        res->mask_sum += -(m * std::log(a) + (S(1) - m) * std::log1p(-a));
      }
    }
  }
  if (rays.empty()) return;
  const int nr = static_cast<int>(rays.size());
  const Eigen::Index N = static_cast<Eigen::Index>(nr) * n_total;

  // ---- sample distances (all treated as constants by the backward pass)
  MatXd dists(nr, n_total);
  {
    // coarse stratified distances
    MatXd coarse(nr, n_coarse);
    for (int i = 0; i < nr; ++i) {
      const RaySetup& s = setup[rays[i]];
      const double step = (s.far - s.near) / n_coarse;
      for (int k = 0; k < n_coarse; ++k) {
        const double j = cfg_.stratified ? batch.jitter(rays[i], k) : 0.5;
        coarse(i, k) = s.near + (k + j) * step;
      }
    }
    if (n_fine > 0) {
      // detached coarse field evaluation for importance weights
      MatX<S> Pc(static_cast<Eigen::Index>(nr) * n_coarse, 3);
      for (int i = 0; i < nr; ++i) {
        const RaySetup& s = setup[rays[i]];
        for (int k = 0; k < n_coarse; ++k)
          Pc.row(static_cast<Eigen::Index>(i) * n_coarse + k) =
              (s.origin + S(coarse(i, k)) * s.dir).transpose();
      }
      VecX<S> fc;
      sdf_eval_batch(field, Pc, &fc, nullptr);
      for (int i = 0; i < nr; ++i) {
        VecXd alphas(n_coarse - 1);
        for (int k = 0; k + 1 < n_coarse; ++k)
          alphas[k] = static_cast<double>(
              alpha_from_sdf<S>(fc[i * n_coarse + k], fc[i * n_coarse + k + 1], sharpness));
        VecXd weights(n_coarse - 1);
        double T = 1;
        for (int k = 0; k + 1 < n_coarse; ++k) {
          weights[k] = T * alphas[k];
          T *= 1 - alphas[k];
        }
        // inverse-CDF draw using the pre-drawn uniforms
        VecXd w = weights.cwiseMax(0.0);
        if (!(w.sum() > 1e-12)) w.setConstant(1.0);
        VecXd cdf(n_coarse);
        cdf[0] = 0;
        for (int k = 0; k + 1 < n_coarse; ++k) cdf[k + 1] = cdf[k] + w[k];
        cdf /= cdf[n_coarse - 1];
        VecXd merged(n_total);
        merged.head(n_coarse) = coarse.row(i).transpose();
        for (int k = 0; k < n_fine; ++k) {
          const double u = (k + batch.fine_u(rays[i], k)) / n_fine;
          int lo = 0, hi = n_coarse - 2;
          while (lo < hi) {
            const int mid = (lo + hi + 1) / 2;
            if (cdf[mid] <= u) lo = mid;
            else hi = mid - 1;
          }
          const double span = cdf[lo + 1] - cdf[lo];
          const double frac = span > 1e-12 ? (u - cdf[lo]) / span : 0.5;
          merged[n_coarse + k] =
              coarse(i, lo) + frac * (coarse(i, lo + 1) - coarse(i, lo));
        }
        std::sort(merged.data(), merged.data() + n_total);
        dists.row(i) = merged.transpose();
      }
    } else {
      dists = coarse;
    }
  }

  // ---- differentiable forward
  MatX<S> P(N, 3);
  for (int i = 0; i < nr; ++i) {
    const RaySetup& s = setup[rays[i]];
    for (int k = 0; k < n_total; ++k)
      P.row(static_cast<Eigen::Index>(i) * n_total + k) =
          (s.origin + S(dists(i, k)) * s.dir).transpose();
  }

  PointEncodeCache<S> enc_cache;
  MatX<S> E;
  std::array<MatX<S>, 3> Ej;
  point_encode_forward<S>(field.cfg.encoding,
                          field.cfg.encoding.has_hash() ? &field.hash : nullptr,
                          P, &E, &Ej, want_grads ? &enc_cache : nullptr);

  MlpCache<S> sdf_cache;
  MatX<S> sdf_out;
  std::array<MatX<S>, 3> sdf_out_j;
  mlp_forward_jets(field.sdf_mlp, E, Ej, 1, want_grads ? &sdf_cache : nullptr,
                   &sdf_out, &sdf_out_j);
  const int Fdim = field.cfg.feature_dim;
  MatX<S> gradf(N, 3);
  for (int a = 0; a < 3; ++a) gradf.col(a) = sdf_out_j[a].col(0);

  // view directions per sample
  MatX<S> V(N, 3);
  for (int i = 0; i < nr; ++i)
    V.middleRows(static_cast<Eigen::Index>(i) * n_total, n_total).rowwise() =
        setup[rays[i]].dir.transpose();

  MatX<S> Xcolor;
  const MatX<S> feat = sdf_out.rightCols(Fdim);
  color_input_forward(field, P, V, gradf, feat, &Xcolor);
  MlpCache<S> color_cache;
  const MatX<S> D = mlp_forward(field.color_mlp, Xcolor,
                                want_grads ? &color_cache : nullptr);

  // projected pattern colors: along a ray's own samples the camera-frame
  // point d*q/|q| does not depend on the system pose, so Q only carries
  // gradients to the projector deltas (when refined)
  MatX<S> Qsum = MatX<S>::Zero(N, 3);
  if (use_sl) {
    for (int i = 0; i < nr; ++i) {
      const RaySetup& s = setup[rays[i]];
      const Vec3d qhat = (s.q * s.inv_qnorm).template cast<double>();
      for (int k = 0; k < n_total; ++k) {
        const Eigen::Index row = static_cast<Eigen::Index>(i) * n_total + k;
        const Vec3d Ycam = dists(i, k) * qhat;
        for (int p = 0; p < n_proj; ++p) {
          const Vec3<S> delta_r = proj_delta.row(p).template head<3>().transpose();
          const Vec3<S> delta_t = proj_delta.row(p).template tail<3>().transpose();
          const Vec3<S> m = Ycam.cast<S>() - rel_trans_scaled_[p].cast<S>() -
                            S(scene_scale_) * delta_t;
          const Vec3<S> h = rel_rot_[p].cast<S>().transpose() * m;
          const Vec3<S> Xp = rotvec_to_matrix<S>(delta_r).transpose() * h;
          if (Xp.z() <= S(1e-9)) continue;
          const auto& Kp = rig_.projectors[p].intrinsics;
          const S u = S(Kp.fx) * Xp.x() / Xp.z() + S(Kp.cx);
          const S v = S(Kp.fy) * Xp.y() / Xp.z() + S(Kp.cy);
          Qsum.row(row) +=
              sample_pattern<S>(rig_.projectors[p].pattern, u, v).transpose();
        }
      }
    }
  }

  // shading + compositing
  MatX<S> shade(N, 3);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vec3<S> c = blend_pattern_color<S>(
        Vec3<S>(D.row(i).transpose()), Vec3<S>(Qsum.row(i).transpose()),
        field.i_r, field.i_b);
    shade.row(i) = c.transpose();
  }

  MatX<S> alphas(nr, n_total - 1), weights(nr, n_total - 1);
  MatX<S> ray_color(nr, 3);
  VecX<S> ray_acc(nr);
  for (int i = 0; i < nr; ++i) {
    const Eigen::Index base = static_cast<Eigen::Index>(i) * n_total;
    S T = S(1), acc = S(0);
    Vec3<S> C = Vec3<S>::Zero();
    for (int k = 0; k + 1 < n_total; ++k) {
      const S a = alpha_from_sdf<S>(sdf_out(base + k, 0), sdf_out(base + k + 1, 0), sharpness);
      alphas(i, k) = a;
      const S w = T * a;
      weights(i, k) = w;
      C += w * Vec3<S>(shade.row(base + k).transpose());
      acc += w;
      T *= (S(1) - a);
    }
    ray_color.row(i) = C.transpose();
    ray_acc[i] = acc;
    for (int c = 0; c < 3; ++c)
      ASFM_CHECK(std::isfinite(static_cast<double>(C[c])),
                 "render: non-finite color at ray " + std::to_string(rays[i]));
    if (cfg_.debug_checks) {
      ASFM_CHECK(acc <= S(1) + S(1e-6) && weights.row(i).minCoeff() >= S(0),
                 "render: compositing weights not a sub-probability measure");
    }
    if (outputs) {
      outputs->color.row(rays[i]) = C.transpose();
      outputs->acc[rays[i]] = acc;
      S dsum = S(0);
      for (int k = 0; k + 1 < n_total; ++k) dsum += weights(i, k) * S(dists(i, k));
      outputs->depth[rays[i]] = acc > S(1e-8) ? dsum / acc : S(0);
    }
  }

  // ---- losses
  VecX<S> gnorm(N);
  for (Eigen::Index i = 0; i < N; ++i) gnorm[i] = gradf.row(i).norm();
  for (Eigen::Index i = 0; i < N; ++i) {
    const S d = gnorm[i] - S(1);
    res->eikonal_sum += d * d;
  }
  MatX<S> dC = MatX<S>::Zero(nr, 3);
  for (int i = 0; i < nr; ++i) {
    for (int c = 0; c < 3; ++c) {
      const S diff = ray_color(i, c) - batch.gt_color(rays[i], c);
      res->color_abs_sum += std::abs(diff);
      dC(i, c) = diff > S(0) ? S(1) : (diff < S(0) ? S(-1) : S(0));
    }
  }
  VecX<S> dacc = VecX<S>::Zero(nr);
  if (batch.has_mask()) {
    for (int i = 0; i < nr; ++i) {
      const S m = batch.gt_mask[rays[i]];
      const S a = clamp(ray_acc[i], S(1e-5), S(1) - S(1e-5));
      res->mask_sum += -(m * std::log(a) + (S(1) - m) * std::log1p(-a));
      if (ray_acc[i] > S(1e-5) && ray_acc[i] < S(1) - S(1e-5))
        dacc[i] = (-m / a + (S(1) - m) / (S(1) - a));
    }
  }

  if (!want_grads) return;
  ParamGrads<S>& G = res->grads;

  // global normalizations baked into the seed gradients
  const S color_scale = S(1) / S(3 * total_rays);
  const S eik_scale = S(lw.lambda_eikonal) / S(total_samples);
  const S mask_scale = batch.has_mask() ? S(lw.beta_mask) / S(total_rays) : S(0);
  dC *= color_scale;
  dacc *= mask_scale;

  // ---- backward
  MatX<S> d_shade = MatX<S>::Zero(N, 3);
  VecX<S> df = VecX<S>::Zero(N);
  MatX<S> d_gradf = MatX<S>::Zero(N, 3);
  S dlog_s = S(0);

  for (int i = 0; i < nr; ++i) {
    const Eigen::Index base = static_cast<Eigen::Index>(i) * n_total;
    const int m = n_total - 1;
    // d(loss)/d(weight_k) and the transmittance recurrence
    VecX<S> dw(m);
    for (int k = 0; k < m; ++k)
      dw[k] = dC.row(i).dot(shade.row(base + k)) + dacc[i];
    for (int k = 0; k < m; ++k)
      d_shade.row(base + k) += weights(i, k) * dC.row(i);
    // dalpha via suffix accumulation: dalpha_t = dw_t*T_t - A_t/(1-alpha_t)
    VecX<S> T(m);
    S t_run = S(1);
    for (int k = 0; k < m; ++k) {
      T[k] = t_run;
      t_run *= (S(1) - alphas(i, k));
    }
    S A = S(0);
    for (int k = m - 1; k >= 0; --k) {
      const S one_m = std::max(S(1) - alphas(i, k), S(1e-12));
      const S dalpha = dw[k] * T[k] - A / one_m;
      A += dw[k] * weights(i, k);
      // alpha backward -> f_k, f_{k+1}, log sharpness
      const S ft = sdf_out(base + k, 0), fn = sdf_out(base + k + 1, 0);
      const S pt = act::sigmoid(sharpness * ft);
      const S pn = act::sigmoid(sharpness * fn);
      const S denom = std::max(pt, S(1e-6));
      const S r = (pt - pn) / denom;
      if (r > S(0)) {
        const S dpt = dalpha * (S(1) / denom -
                                (pt > S(1e-6) ? (pt - pn) / (denom * denom) : S(0)));
        const S dpn = -dalpha / denom;
        const S pt1 = pt * (S(1) - pt), pn1 = pn * (S(1) - pn);
        df[base + k] += dpt * sharpness * pt1;
        df[base + k + 1] += dpn * sharpness * pn1;
        dlog_s += (dpt * ft * pt1 + dpn * fn * pn1) * sharpness;
      }
    }
  }

  // eikonal gradient
  for (Eigen::Index i = 0; i < N; ++i) {
    const S g = gnorm[i];
    if (g > S(1e-12))
      d_gradf.row(i) += (eik_scale * S(2) * (g - S(1)) / g) * gradf.row(i);
  }

  // shading backward
  MatX<S> dD = MatX<S>::Zero(N, 3);
  MatX<S> dQsum = MatX<S>::Zero(N, 3);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (int c = 0; c < 3; ++c) {
      const S pre = D(i, c) + (field.i_r * D(i, c) + field.i_b) * Qsum(i, c);
      if (pre <= S(0)) continue;  // clamped
      const S ds = d_shade(i, c);
      if (ds == S(0)) continue;
      dD(i, c) += ds * (S(1) + field.i_r * Qsum(i, c));
      dQsum(i, c) += ds * (field.i_r * D(i, c) + field.i_b);
      G.i_r += ds * D(i, c) * Qsum(i, c);
      G.i_b += ds * Qsum(i, c);
    }
  }
  G.log_sharpness += dlog_s;

  // projector-delta backward through the pattern lookup
  if (use_sl && proj_grads) {
    for (int i = 0; i < nr; ++i) {
      const RaySetup& s = setup[rays[i]];
      const Vec3d qhat = (s.q * s.inv_qnorm).template cast<double>();
      for (int k = 0; k < n_total; ++k) {
        const Eigen::Index row = static_cast<Eigen::Index>(i) * n_total + k;
        if (dQsum.row(row).isZero(S(0))) continue;
        const Vec3d Ycam = dists(i, k) * qhat;
        for (int p = 0; p < n_proj; ++p) {
          if (!rig_.projectors[p].refine_pose) continue;
          const Vec3<S> delta_r = proj_delta.row(p).template head<3>().transpose();
          const Vec3<S> delta_t = proj_delta.row(p).template tail<3>().transpose();
          const Vec3<S> m = Ycam.cast<S>() - rel_trans_scaled_[p].cast<S>() -
                            S(scene_scale_) * delta_t;
          const Vec3<S> h = rel_rot_[p].cast<S>().transpose() * m;
          const Mat3<S> Rd = rotvec_to_matrix<S>(delta_r);
          const Vec3<S> Xp = Rd.transpose() * h;
          if (Xp.z() <= S(1e-9)) continue;
          const auto& Kp = rig_.projectors[p].intrinsics;
          const S z = Xp.z();
          const S u = S(Kp.fx) * Xp.x() / z + S(Kp.cx);
          const S v = S(Kp.fy) * Xp.y() / z + S(Kp.cy);
          Eigen::Matrix<S, 3, 2> dq_duv;
          sample_pattern_grad<S>(rig_.projectors[p].pattern, u, v, &dq_duv);
          const Vec2<S> duv = dq_duv.transpose() * Vec3<S>(dQsum.row(row).transpose());
          // perspective jacobian
          Vec3<S> dXp(S(Kp.fx) / z * duv.x(), S(Kp.fy) / z * duv.y(),
                      (-S(Kp.fx) * Xp.x() / (z * z)) * duv.x() +
                          (-S(Kp.fy) * Xp.y() / (z * z)) * duv.y());
          // X_p = R(delta_r)^T h  with h independent of delta_r
          const Mat3<S> Jr = rotate_point_jacobian<S>(Vec3<S>(-delta_r), h);
          G.proj_delta.row(p).template head<3>() -= (Jr.transpose() * dXp).transpose();
          // X_p = R_eff^T (Y - s*(c + delta_t))
          const Mat3<S> Reff = rel_rot_[p].cast<S>() * Rd;
          G.proj_delta.row(p).template tail<3>() -=
              S(scene_scale_) * (Reff * dXp).transpose();
        }
      }
    }
  }

  // color net backward
  MatX<S> dXcolor;
  if (!dD.isZero(S(0))) {
    dXcolor = mlp_backward(field.color_mlp, color_cache, dD, &G.color);
  } else {
    dXcolor = MatX<S>::Zero(N, Xcolor.cols());
  }
  MatX<S> dP = MatX<S>::Zero(N, 3);
  MatX<S> dV = MatX<S>::Zero(N, 3);
  MatX<S> d_feat = MatX<S>::Zero(N, Fdim);
  {
    const auto& fc = field.cfg;
    int col = 0;
    fourier_encode_backward<S>(fc.color_pos_fourier, P, dXcolor, col, nullptr, &dP);
    col += fc.color_pos_fourier.output_dim(3);
    fourier_encode_backward<S>(fc.dir_fourier, V, dXcolor, col, nullptr, &dV);
    col += fc.dir_fourier.output_dim(3);
    if (fc.color_use_normal) {
      d_gradf += dXcolor.middleCols(col, 3);
      col += 3;
    }
    d_feat += dXcolor.middleCols(col, Fdim);
  }

  // SDF net backward (values, features and the jet path)
  MatX<S> dY = MatX<S>::Zero(N, 1 + Fdim);
  dY.col(0) = df;
  dY.rightCols(Fdim) = d_feat;
  std::array<MatX<S>, 3> dYj;
  for (int a = 0; a < 3; ++a) {
    dYj[a] = MatX<S>::Zero(N, 1);
    dYj[a].col(0) = d_gradf.col(a);
  }
  MatX<S> dE;
  std::array<MatX<S>, 3> dEj;
  mlp_backward_jets(field.sdf_mlp, sdf_cache, dY, dYj, 1, &G.sdf, &dE, &dEj);
  point_encode_backward<S>(field.cfg.encoding,
                           field.cfg.encoding.has_hash() ? &field.hash : nullptr,
                           enc_cache, dE, &dEj, &dP, &G.hash_tables);

  // points -> per-ray origin/direction -> pose parameters
  if (pose_grads) {
    for (int i = 0; i < nr; ++i) {
      const RaySetup& s = setup[rays[i]];
      Vec3<S> dorigin = Vec3<S>::Zero();
      Vec3<S> ddir = Vec3<S>::Zero();
      const Eigen::Index base = static_cast<Eigen::Index>(i) * n_total;
      for (int k = 0; k < n_total; ++k) {
        const Vec3<S> dp = dP.row(base + k).transpose();
        dorigin += dp;
        ddir += S(dists(i, k)) * dp;
        ddir += Vec3<S>(dV.row(base + k).transpose());
      }
      // dir = u/|u|, u = R q
      const Mat3<S> Pn =
          (Mat3<S>::Identity() - s.dir * s.dir.transpose()) * s.inv_qnorm;
      const Vec3<S> du = Pn * ddir;
      const Vec3<S> rot = poses.rot.row(s.frame).transpose();
      const Mat3<S> Jq = rotate_point_jacobian<S>(rot, s.q);
      G.pose_rot.row(s.frame) += (Jq.transpose() * du).transpose();
      G.pose_trans.row(s.frame) += S(scene_scale_) * dorigin.transpose();
    }
  }
}

}  // namespace asfm
