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

#include "asfm/encoding.hpp"
#include "asfm/mlp.hpp"
#include "asfm/rotation.hpp"

namespace asfm {

struct FieldConfig {
  PointEncodingConfig encoding;          // SDF network input
  FourierConfig color_pos_fourier{6, true};
  FourierConfig dir_fourier{4, true};
  int sdf_hidden = 128;
  int sdf_layers = 4;   // number of linear layers in the SDF net
  int sdf_skip = 2;     // layer receiving the [hidden, encoding] concat
  int feature_dim = 64;
  int color_hidden = 128;
  int color_layers = 3;
  bool color_use_normal = true;
  double softplus_beta = 100.0;
  double variance_init_scale = 0.3;  // logistic transition width, scene units
  double r_init = 0.5;

  int color_input_dim() const {
    return color_pos_fourier.output_dim(3) + dir_fourier.output_dim(3) +
           (color_use_normal ? 3 : 0) + feature_dim;
  }
};

// All learnable field quantities: SDF net, color net, hash tables, the
// sharpness of the opacity sigmoid (stored as a log), and the illumination
// coefficients shared across projectors.
template <typename S>
struct FieldState {
  FieldConfig cfg;
  Mlp<S> sdf_mlp;    // encoding -> [sdf, feature]
  Mlp<S> color_mlp;  // [pos enc, dir enc, normal, feature] -> rgb (sigmoid)
  HashGridState<S> hash;
  S log_sharpness = S(0);
  S i_r = S(0);
  S i_b = S(1);

  S sharpness() const { return std::exp(log_sharpness); }
};

namespace detail {

template <typename S>
void init_linear(LinearLayer<S>* l, int out, int in, double std, Rng& rng) {
  l->W.resize(out, in);
  for (Eigen::Index i = 0; i < l->W.size(); ++i)
    l->W.data()[i] = static_cast<S>(rng.normal() * std);
  l->b.setZero(out);
}

}  // namespace detail

// Geometric initialization: the freshly initialized SDF approximates
// |P| - r_init (negative inside). Encoding channels other than the raw point
// are zeroed in the first and skip layers so the sphere shape holds exactly
// at the start; the near-zero hash tables leave it untouched.
template <typename S>
void init_sdf_mlp(const FieldConfig& cfg, Mlp<S>* mlp, Rng& rng) {
  const int in_dim = cfg.encoding.output_dim();
  const bool raw_first = cfg.encoding.has_fourier() && cfg.encoding.fourier.include_input;
  ASFM_CHECK(cfg.sdf_layers >= 2, "sdf net needs at least 2 layers");
  mlp->layers.clear();
  mlp->softplus_beta = S(cfg.softplus_beta);
  mlp->output_act = Activation::kNone;
  mlp->skip_layer = cfg.sdf_skip;
  const int H = cfg.sdf_hidden;
  const int out_dim = 1 + cfg.feature_dim;
  for (int l = 0; l < cfg.sdf_layers; ++l) {
    const bool last = (l == cfg.sdf_layers - 1);
    int in = (l == 0) ? in_dim : H;
    if (l == cfg.sdf_skip) in += in_dim;
    const int out = last ? out_dim : H;
    LinearLayer<S> layer;
    detail::init_linear(&layer, out, in, std::sqrt(2.0 / out), rng);
    if (l == 0 && raw_first) {
      // Keep only the raw-point columns active at init. Their rows are +-
      // pairs of Fibonacci-sphere directions under a random rotation: an
      // even direction cover keeps the initial cone |P| isotropic even at
      // small widths. The magnitude boost pushes pre-activations past the
      // softplus transition band so the sphere keeps a sharp tip; the head
      // calibration restores the overall scale.
      layer.W.rightCols(in_dim - 3).setZero();
      const Mat3<S> spread_rot = rotvec_to_matrix<S>(
          Vec3<S>(S(rng.normal()), S(rng.normal()), S(rng.normal())));
      const S gain = S(8) * S(std::sqrt(2.0 / out)) * S(std::sqrt(3.0));
      const int half = (out + 1) / 2;
      const double golden = M_PI * (3.0 - std::sqrt(5.0));
      for (int r = 0; r < out; ++r) {
        const int k = r % half;
        const double z = 1.0 - 2.0 * (k + 0.5) / half;
        const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * k;
        Vec3<S> u(S(rad * std::cos(phi)), S(rad * std::sin(phi)), S(z));
        u = spread_rot * u;
        if (r >= half) u = -u;
        layer.W.template leftCols<3>().row(r) = (gain * u).transpose();
      }
    }
    if (l == cfg.sdf_skip && raw_first) {
      layer.W.rightCols(in_dim - 3).setZero();
    }
    if (last) {
      const double mean = std::sqrt(M_PI / in);
      for (int j = 0; j < in; ++j)
        layer.W(0, j) = static_cast<S>(mean + rng.normal() * 1e-4);
      layer.b[0] = static_cast<S>(-cfg.r_init);
      // feature rows get a small generic init
      for (int r = 1; r < out; ++r)
        for (int j = 0; j < in; ++j)
          layer.W(r, j) = static_cast<S>(rng.normal() * std::sqrt(2.0 / in) * 0.1);
    }
    mlp->layers.push_back(std::move(layer));
  }
}

template <typename S>
void init_color_mlp(const FieldConfig& cfg, Mlp<S>* mlp, Rng& rng) {
  ASFM_CHECK(cfg.color_layers >= 2, "color net needs at least 2 layers");
  mlp->layers.clear();
  mlp->softplus_beta = S(cfg.softplus_beta);
  mlp->output_act = Activation::kSigmoid;
  mlp->skip_layer = -1;
  const int H = cfg.color_hidden;
  const int in_dim = cfg.color_input_dim();
  for (int l = 0; l < cfg.color_layers; ++l) {
    const bool last = (l == cfg.color_layers - 1);
    const int in = (l == 0) ? in_dim : H;
    const int out = last ? 3 : H;
    LinearLayer<S> layer;
    detail::init_linear(&layer, out, in, std::sqrt(2.0 / in), rng);
    mlp->layers.push_back(std::move(layer));
  }
}

template <typename S>
void sdf_eval_batch(const FieldState<S>& state, const MatX<S>& P, VecX<S>* f,
                    std::type_identity_t<MatX<S>>* feature);

// The analytic geometric init lands near the sphere but carries a
// finite-width bias; a least-squares rescale of the SDF head row against
// |P| - r_init over seeded probes removes it.
template <typename S>
void calibrate_sphere_head(FieldState<S>* state, Rng& rng) {
  const int n = 512;
  MatX<S> P(n, 3);
  for (int i = 0; i < n; ++i) {
    Vec3<S> p(S(rng.normal()), S(rng.normal()), S(rng.normal()));
    p = p.normalized() * S(rng.uniform(0, 1.1));
    P.row(i) = p.transpose();
  }
  VecX<S> f;
  sdf_eval_batch(*state, P, &f, nullptr);
  auto& head = state->sdf_mlp.layers.back();
  const S b0 = head.b[0];
  // f = g + b0; weighted fit of a*g + b to the sphere targets. The weights
  // emphasize the center, where the finite-width tip rounding concentrates.
  S sgg = S(0), sg = S(0), sgt = S(0), st = S(0), sw = S(0);
  for (int i = 0; i < n; ++i) {
    const S r = S(P.row(i).norm());
    const S w = S(1) / ((S(0.1) + r) * (S(0.1) + r));
    const S g = f[i] - b0;
    const S t = r - S(state->cfg.r_init);
    sgg += w * g * g;
    sg += w * g;
    sgt += w * g * t;
    st += w * t;
    sw += w;
  }
  const S det = sw * sgg - sg * sg;
  if (std::abs(static_cast<double>(det)) < 1e-12) return;
  const S a = (sw * sgt - sg * st) / det;
  const S b = (st - a * sg) / sw;
  head.W.row(0) *= a;
  head.b[0] = b;
}

template <typename S>
FieldState<S> init_fields(const FieldConfig& cfg, uint64_t seed) {
  ASFM_CHECK(cfg.r_init > 0 && cfg.r_init < 1, "r_init must be in (0,1)");
  Rng rng(mix_seed(seed, 0x666965ULL));
  FieldState<S> state;
  state.cfg = cfg;
  if (cfg.encoding.has_hash()) state.hash.init(cfg.encoding.hash, rng);
  init_sdf_mlp(cfg, &state.sdf_mlp, rng);
  init_color_mlp(cfg, &state.color_mlp, rng);
  ASFM_CHECK(state.sdf_mlp.input_dim() == cfg.encoding.output_dim(),
             "sdf net input width does not match encoder output");
  calibrate_sphere_head(&state, rng);
  state.log_sharpness = S(std::log(1.0 / cfg.variance_init_scale));
  state.i_r = S(0);
  state.i_b = S(1);
  return state;
}

// Single-point evaluation helpers (the batched pipeline is in pipeline.hpp).

template <typename S>
void sdf_eval_batch(const FieldState<S>& state, const MatX<S>& P, VecX<S>* f,
                    std::type_identity_t<MatX<S>>* feature) {
  MatX<S> E;
  point_encode_forward<S>(state.cfg.encoding,
                          state.cfg.encoding.has_hash() ? &state.hash : nullptr,
                          P, &E, nullptr, nullptr);
  const MatX<S> Y = mlp_forward(state.sdf_mlp, E, nullptr);
  *f = Y.col(0);
  if (feature) *feature = Y.rightCols(Y.cols() - 1);
}

template <typename S>
std::pair<S, VecX<S>> sdf_eval(const FieldState<S>& state, const Vec3<S>& P) {
  MatX<S> Pm(1, 3);
  Pm.row(0) = P.transpose();
  VecX<S> f;
  MatX<S> feat;
  sdf_eval_batch(state, Pm, &f, &feat);
  return {f[0], feat.row(0).transpose()};
}

template <typename S>
void sdf_gradient_batch(const FieldState<S>& state, const MatX<S>& P,
                        VecX<S>* f, MatX<S>* grad,
                        std::type_identity_t<MatX<S>>* feature) {
  MatX<S> E;
  std::array<MatX<S>, 3> J;
  point_encode_forward<S>(state.cfg.encoding,
                          state.cfg.encoding.has_hash() ? &state.hash : nullptr,
                          P, &E, &J, nullptr);
  MatX<S> Y;
  std::array<MatX<S>, 3> Yj;
  mlp_forward_jets(state.sdf_mlp, E, J, 1, nullptr, &Y, &Yj);
  *f = Y.col(0);
  grad->resize(P.rows(), 3);
  for (int a = 0; a < 3; ++a) grad->col(a) = Yj[a].col(0);
  if (feature) *feature = Y.rightCols(Y.cols() - 1);
}

template <typename S>
Vec3<S> sdf_gradient(const FieldState<S>& state, const Vec3<S>& P) {
  MatX<S> Pm(1, 3);
  Pm.row(0) = P.transpose();
  VecX<S> f;
  MatX<S> g;
  sdf_gradient_batch(state, Pm, &f, &g, nullptr);
  return g.row(0).transpose();
}

// Builds the color-network input row layout:
// [fourier(P), fourier(v), n (optional), feature].
template <typename S>
void color_input_forward(const FieldState<S>& state, const MatX<S>& P,
                         const MatX<S>& V, const MatX<S>& N,
                         const MatX<S>& feat, MatX<S>* X) {
  const auto& cfg = state.cfg;
  const Eigen::Index n = P.rows();
  X->setZero(n, cfg.color_input_dim());
  int col = 0;
  fourier_encode_forward<S>(cfg.color_pos_fourier, P, X, col);
  col += cfg.color_pos_fourier.output_dim(3);
  fourier_encode_forward<S>(cfg.dir_fourier, V, X, col);
  col += cfg.dir_fourier.output_dim(3);
  if (cfg.color_use_normal) {
    X->middleCols(col, 3) = N;
    col += 3;
  }
  X->middleCols(col, cfg.feature_dim) = feat;
}

template <typename S>
MatX<S> color_eval_batch(const FieldState<S>& state, const MatX<S>& P,
                         const MatX<S>& V, const MatX<S>& N,
                         const MatX<S>& feat) {
  MatX<S> X;
  color_input_forward(state, P, V, N, feat, &X);
  return mlp_forward(state.color_mlp, X, nullptr);
}

template <typename S>
Vec3<S> color_eval(const FieldState<S>& state, const Vec3<S>& P,
                   const Vec3<S>& v, const Vec3<S>& n, const VecX<S>& feat) {
  MatX<S> Pm(1, 3), Vm(1, 3), Nm(1, 3), Fm(1, feat.size());
  Pm.row(0) = P.transpose();
  Vm.row(0) = v.transpose();
  Nm.row(0) = n.transpose();
  Fm.row(0) = feat.transpose();
  return color_eval_batch(state, Pm, Vm, Nm, Fm).row(0).transpose();
}

}  // namespace asfm
