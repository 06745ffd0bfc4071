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

#include <filesystem>
#include <fstream>
#include <functional>

#include "asfm/checkpoint.hpp"
#include "asfm/pipeline.hpp"

namespace asfm {

struct TrainConfig {
  double lr = 5e-4;
  double lr_decay = 0.05;  // final lr = lr_decay * lr (cosine)
  int warmup_steps = 500;
  double pose_lr_scale = 0.1;  // pose/projector groups train slower
  int batch_size = 512;
  int64_t steps = 200000;
  double lambda_eikonal = 0.1;
  double beta_mask = 0.1;
  bool optimize_poses = true;
  bool optimize_projectors = false;
  bool use_mask_loss = true;
  uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int n_chunks = 8;
  int n_threads = 0;  // 0 -> hardware concurrency
  int log_every = 100;
  int checkpoint_every = 5000;
  FieldConfig field;
  RenderConfig render;

  void validate() const {
    ASFM_CHECK(lr > 0 && batch_size > 0 && steps > 0, "train config: positive lr/batch/steps required");
    ASFM_CHECK(lambda_eikonal >= 0 && beta_mask >= 0, "train config: loss coefficients must be >= 0");
  }
};

// Warmup then cosine decay to lr_decay * lr at the final step.
inline double learning_rate_at(const TrainConfig& cfg, int64_t step) {
  if (step < cfg.warmup_steps) return cfg.lr * double(step + 1) / cfg.warmup_steps;
  const double span = std::max<int64_t>(1, cfg.steps - cfg.warmup_steps);
  const double prog = std::min(1.0, double(step - cfg.warmup_steps) / span);
  return cfg.lr * (cfg.lr_decay + (1.0 - cfg.lr_decay) * 0.5 * (1.0 + std::cos(M_PI * prog)));
}

template <typename S>
struct TrainState {
  FieldState<S> fields;
  PoseBlock<S> poses;
  MatX<S> proj_delta;  // n_projectors x 6
  ParamGrads<S> adam_m, adam_v;
  int64_t step = 0;
};

template <typename S>
TrainState<S> init_train_state(const TrainConfig& cfg,
                               const std::vector<SystemPose>& init_poses,
                               int n_projectors) {
  TrainState<S> st;
  st.fields = init_fields<S>(cfg.field, cfg.seed);
  const int F = static_cast<int>(init_poses.size());
  st.poses.rot.resize(F, 3);
  st.poses.trans.resize(F, 3);
  for (int i = 0; i < F; ++i) {
    st.poses.rot.row(i) = init_poses[i].rot.cast<S>().transpose();
    st.poses.trans.row(i) = init_poses[i].trans.cast<S>().transpose();
  }
  st.proj_delta.setZero(n_projectors, 6);
  st.adam_m.init_like(st.fields, F, n_projectors);
  st.adam_v.init_like(st.fields, F, n_projectors);
  st.step = 0;
  return st;
}

template <typename S>
std::vector<SystemPose> poses_from_state(const TrainState<S>& st) {
  std::vector<SystemPose> out(st.poses.frames());
  for (int i = 0; i < st.poses.frames(); ++i) {
    out[i].rot = st.poses.rot.row(i).transpose().template cast<double>();
    out[i].trans = st.poses.trans.row(i).transpose().template cast<double>();
  }
  return out;
}

namespace detail {

template <typename S, typename M>
void adam_tensor(M& p, const M& g, M& m, M& v, S lr, S b1, S b2, S eps,
                 S bc1, S bc2) {
  m = b1 * m + (S(1) - b1) * g;
  v = (b2 * v.array() + (S(1) - b2) * g.array().square()).matrix();
  p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

template <typename S>
void adam_scalar(S& p, S g, S& m, S& v, S lr, S b1, S b2, S eps, S bc1, S bc2) {
  m = b1 * m + (S(1) - b1) * g;
  v = b2 * v + (S(1) - b2) * g * g;
  p -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
}

}  // namespace detail

// One Adam update over the enabled groups. `t` is the 1-based update count.
template <typename S>
void apply_adam(TrainState<S>* st, const ParamGrads<S>& g,
                const TrainConfig& cfg, int64_t t, double lr) {
  const S b1 = S(cfg.beta1), b2 = S(cfg.beta2), eps = S(cfg.adam_eps);
  const S bc1 = S(1) - S(std::pow(cfg.beta1, double(t)));
  const S bc2 = S(1) - S(std::pow(cfg.beta2, double(t)));
  const S lrf = S(lr);
  auto& m = st->adam_m;
  auto& v = st->adam_v;
  for (size_t l = 0; l < st->fields.sdf_mlp.layers.size(); ++l) {
    detail::adam_tensor<S>(st->fields.sdf_mlp.layers[l].W, g.sdf.layers[l].W,
                           m.sdf.layers[l].W, v.sdf.layers[l].W, lrf, b1, b2, eps, bc1, bc2);
    detail::adam_tensor<S>(st->fields.sdf_mlp.layers[l].b, g.sdf.layers[l].b,
                           m.sdf.layers[l].b, v.sdf.layers[l].b, lrf, b1, b2, eps, bc1, bc2);
  }
  for (size_t l = 0; l < st->fields.color_mlp.layers.size(); ++l) {
    detail::adam_tensor<S>(st->fields.color_mlp.layers[l].W, g.color.layers[l].W,
                           m.color.layers[l].W, v.color.layers[l].W, lrf, b1, b2, eps, bc1, bc2);
    detail::adam_tensor<S>(st->fields.color_mlp.layers[l].b, g.color.layers[l].b,
                           m.color.layers[l].b, v.color.layers[l].b, lrf, b1, b2, eps, bc1, bc2);
  }
  for (size_t l = 0; l < st->fields.hash.tables.size(); ++l) {
    detail::adam_tensor<S>(st->fields.hash.tables[l], g.hash_tables[l],
                           m.hash_tables[l], v.hash_tables[l], lrf, b1, b2, eps, bc1, bc2);
  }
  detail::adam_scalar<S>(st->fields.log_sharpness, g.log_sharpness,
                         m.log_sharpness, v.log_sharpness, lrf, b1, b2, eps, bc1, bc2);
  detail::adam_scalar<S>(st->fields.i_r, g.i_r, m.i_r, v.i_r, lrf, b1, b2, eps, bc1, bc2);
  detail::adam_scalar<S>(st->fields.i_b, g.i_b, m.i_b, v.i_b, lrf, b1, b2, eps, bc1, bc2);
  const S lrp = S(lr * cfg.pose_lr_scale);
  if (cfg.optimize_poses) {
    detail::adam_tensor<S>(st->poses.rot, g.pose_rot, m.pose_rot, v.pose_rot,
                           lrp, b1, b2, eps, bc1, bc2);
    detail::adam_tensor<S>(st->poses.trans, g.pose_trans, m.pose_trans,
                           v.pose_trans, lrp, b1, b2, eps, bc1, bc2);
  }
  if (cfg.optimize_projectors && st->proj_delta.size() > 0) {
    detail::adam_tensor<S>(st->proj_delta, g.proj_delta, m.proj_delta,
                           v.proj_delta, lrp, b1, b2, eps, bc1, bc2);
  }
}

// In-memory training views (loaded once from the dataset).
struct TrainViews {
  int width = 0, height = 0;
  std::vector<std::vector<float>> images;  // H*W*3, rgb in [0,1]
  std::vector<std::vector<float>> masks;   // H*W in [0,1]; empty -> no masks

  int frames() const { return static_cast<int>(images.size()); }
  bool has_masks() const { return !masks.empty(); }
};

// Uniform draw over all images and pixels, with every random number the
// renderer will need pre-drawn (stratification jitter, importance uniforms).
template <typename S>
RayBatch<S> draw_ray_batch(const TrainViews& views, const TrainConfig& cfg,
                           uint64_t step) {
  Rng rng(mix_seed(cfg.seed, 0x6261746368ULL + static_cast<uint64_t>(step)));
  const int B = cfg.batch_size;
  RayBatch<S> batch;
  batch.rays.resize(B);
  batch.gt_color.resize(B, 3);
  const bool masks = views.has_masks() && cfg.use_mask_loss;
  if (masks) batch.gt_mask.resize(B);
  batch.jitter.resize(B, cfg.render.n_coarse);
  batch.fine_u.resize(B, std::max(1, cfg.render.n_fine));
  for (int i = 0; i < B; ++i) {
    const int f = static_cast<int>(rng.uniform_int(0, views.frames() - 1));
    const int px = static_cast<int>(rng.uniform_int(0, views.width - 1));
    const int py = static_cast<int>(rng.uniform_int(0, views.height - 1));
    batch.rays[i] = {f, double(px), double(py)};
    const size_t off = 3 * (static_cast<size_t>(py) * views.width + px);
    for (int c = 0; c < 3; ++c) batch.gt_color(i, c) = S(views.images[f][off + c]);
    if (masks)
      batch.gt_mask[i] = S(views.masks[f][static_cast<size_t>(py) * views.width + px]);
    for (int k = 0; k < cfg.render.n_coarse; ++k) batch.jitter(i, k) = rng.uniform();
    for (int k = 0; k < cfg.render.n_fine; ++k) batch.fine_u(i, k) = rng.uniform();
  }
  return batch;
}

// One optimizer step: render + objective + gradients + Adam over all enabled
// groups. Throws (naming the term) on a non-finite loss.
template <typename S>
LossBreakdown<S> train_step(TrainState<S>* st, const RayBatch<S>& batch,
                            const TrainConfig& cfg,
                            const RenderPipeline<S>& pipeline,
                            ParamGrads<S>* grads_ws) {
  LossWeights lw{cfg.lambda_eikonal, cfg.use_mask_loss ? cfg.beta_mask : 0.0};
  grads_ws->set_zero();
  const LossBreakdown<S> loss = pipeline.render_losses(
      st->fields, st->poses, st->proj_delta, batch, lw, cfg.optimize_poses,
      cfg.optimize_projectors, grads_ws, nullptr, cfg.n_chunks, cfg.n_threads);
  for (auto [v, name] : {std::pair<S, const char*>{loss.color, "color"},
                         {loss.eikonal, "eikonal"},
                         {loss.mask, "mask"}}) {
    ASFM_CHECK(std::isfinite(static_cast<double>(v)),
               std::string("train_step: non-finite ") + name + " loss");
  }
  const double lr = learning_rate_at(cfg, st->step);
  apply_adam(st, *grads_ws, cfg, st->step + 1, lr);
  st->step += 1;
  return loss;
}

// ---- checkpoint (de)serialization --------------------------------------

template <typename S>
void grads_to_file(TensorFile* tf, const std::string& prefix,
                   const ParamGrads<S>& g) {
  for (size_t l = 0; l < g.sdf.layers.size(); ++l) {
    tf->put(prefix + "sdf.W" + std::to_string(l), g.sdf.layers[l].W);
    tf->put(prefix + "sdf.b" + std::to_string(l), g.sdf.layers[l].b);
  }
  for (size_t l = 0; l < g.color.layers.size(); ++l) {
    tf->put(prefix + "color.W" + std::to_string(l), g.color.layers[l].W);
    tf->put(prefix + "color.b" + std::to_string(l), g.color.layers[l].b);
  }
  for (size_t l = 0; l < g.hash_tables.size(); ++l)
    tf->put(prefix + "hash.T" + std::to_string(l), g.hash_tables[l]);
  tf->put_scalar(prefix + "log_sharpness", g.log_sharpness);
  tf->put_scalar(prefix + "i_r", g.i_r);
  tf->put_scalar(prefix + "i_b", g.i_b);
  tf->put(prefix + "pose.rot", g.pose_rot);
  tf->put(prefix + "pose.trans", g.pose_trans);
  tf->put(prefix + "proj_delta", g.proj_delta);
}

template <typename S>
void grads_from_file(const TensorFile& tf, const std::string& prefix,
                     ParamGrads<S>* g) {
  for (size_t l = 0; l < g->sdf.layers.size(); ++l) {
    g->sdf.layers[l].W = tf.get<S>(prefix + "sdf.W" + std::to_string(l));
    g->sdf.layers[l].b = tf.get<S>(prefix + "sdf.b" + std::to_string(l));
  }
  for (size_t l = 0; l < g->color.layers.size(); ++l) {
    g->color.layers[l].W = tf.get<S>(prefix + "color.W" + std::to_string(l));
    g->color.layers[l].b = tf.get<S>(prefix + "color.b" + std::to_string(l));
  }
  for (size_t l = 0; l < g->hash_tables.size(); ++l)
    g->hash_tables[l] = tf.get<S>(prefix + "hash.T" + std::to_string(l));
  g->log_sharpness = tf.get_scalar<S>(prefix + "log_sharpness");
  g->i_r = tf.get_scalar<S>(prefix + "i_r");
  g->i_b = tf.get_scalar<S>(prefix + "i_b");
  g->pose_rot = tf.get<S>(prefix + "pose.rot");
  g->pose_trans = tf.get<S>(prefix + "pose.trans");
  g->proj_delta = tf.get<S>(prefix + "proj_delta");
}

template <typename S>
void save_checkpoint(const std::string& path, const TrainState<S>& st) {
  TensorFile tf;
  for (size_t l = 0; l < st.fields.sdf_mlp.layers.size(); ++l) {
    tf.put("sdf.W" + std::to_string(l), st.fields.sdf_mlp.layers[l].W);
    tf.put("sdf.b" + std::to_string(l), st.fields.sdf_mlp.layers[l].b);
  }
  for (size_t l = 0; l < st.fields.color_mlp.layers.size(); ++l) {
    tf.put("color.W" + std::to_string(l), st.fields.color_mlp.layers[l].W);
    tf.put("color.b" + std::to_string(l), st.fields.color_mlp.layers[l].b);
  }
  for (size_t l = 0; l < st.fields.hash.tables.size(); ++l)
    tf.put("hash.T" + std::to_string(l), st.fields.hash.tables[l]);
  tf.put_scalar("log_sharpness", st.fields.log_sharpness);
  tf.put_scalar("i_r", st.fields.i_r);
  tf.put_scalar("i_b", st.fields.i_b);
  tf.put("pose.rot", st.poses.rot);
  tf.put("pose.trans", st.poses.trans);
  tf.put("proj_delta", st.proj_delta);
  grads_to_file(&tf, "adam.m.", st.adam_m);
  grads_to_file(&tf, "adam.v.", st.adam_v);
  tf.put_scalar<double>("step", static_cast<double>(st.step));
  tf.save(path, sizeof(S));
}

// Loads tensors into a state whose shapes were already built from the run
// configuration (init_train_state).
template <typename S>
void load_checkpoint(const std::string& path, TrainState<S>* st) {
  TensorFile tf;
  const uint8_t ssize = tf.load(path);
  ASFM_CHECK(ssize == sizeof(S), "checkpoint: precision mismatch");
  for (size_t l = 0; l < st->fields.sdf_mlp.layers.size(); ++l) {
    st->fields.sdf_mlp.layers[l].W = tf.get<S>("sdf.W" + std::to_string(l));
    st->fields.sdf_mlp.layers[l].b = tf.get<S>("sdf.b" + std::to_string(l));
  }
  for (size_t l = 0; l < st->fields.color_mlp.layers.size(); ++l) {
    st->fields.color_mlp.layers[l].W = tf.get<S>("color.W" + std::to_string(l));
    st->fields.color_mlp.layers[l].b = tf.get<S>("color.b" + std::to_string(l));
  }
  for (size_t l = 0; l < st->fields.hash.tables.size(); ++l)
    st->fields.hash.tables[l] = tf.get<S>("hash.T" + std::to_string(l));
  st->fields.log_sharpness = tf.get_scalar<S>("log_sharpness");
  st->fields.i_r = tf.get_scalar<S>("i_r");
  st->fields.i_b = tf.get_scalar<S>("i_b");
  st->poses.rot = tf.get<S>("pose.rot");
  st->poses.trans = tf.get<S>("pose.trans");
  st->proj_delta = tf.get<S>("proj_delta");
  grads_from_file(tf, "adam.m.", &st->adam_m);
  grads_from_file(tf, "adam.v.", &st->adam_v);
  st->step = static_cast<int64_t>(tf.get_scalar<double>("step"));
}

// Per-group gradient L2 norms, for the step-1 sanity assertion and tests.
template <typename S>
std::map<std::string, double> grad_group_norms(const ParamGrads<S>& g) {
  std::map<std::string, double> out;
  double sdf = 0, color = 0, hash = 0;
  for (const auto& l : g.sdf.layers) sdf += double(l.W.squaredNorm()) + double(l.b.squaredNorm());
  for (const auto& l : g.color.layers) color += double(l.W.squaredNorm()) + double(l.b.squaredNorm());
  for (const auto& t : g.hash_tables) hash += double(t.squaredNorm());
  out["sdf"] = std::sqrt(sdf);
  out["color"] = std::sqrt(color);
  out["hash"] = std::sqrt(hash);
  out["variance"] = std::abs(double(g.log_sharpness));
  out["i_r"] = std::abs(double(g.i_r));
  out["i_b"] = std::abs(double(g.i_b));
  out["pose_rot"] = std::sqrt(double(g.pose_rot.squaredNorm()));
  out["pose_trans"] = std::sqrt(double(g.pose_trans.squaredNorm()));
  out["proj_delta"] = std::sqrt(double(g.proj_delta.squaredNorm()));
  return out;
}

}  // namespace asfm
