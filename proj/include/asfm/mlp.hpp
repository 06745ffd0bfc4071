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

#include <array>
#include <vector>

#include "asfm/common.hpp"

#include <type_traits>

namespace asfm {

enum class Activation { kNone, kSoftplus, kSigmoid };

namespace act {

template <typename S>
inline S softplus(S z, S beta) {
  const S bz = beta * z;
  if (bz > S(20)) return z;
  if (bz < S(-20)) return std::exp(bz) / beta;
  return std::log1p(std::exp(bz)) / beta;
}
template <typename S>
inline S sigmoid(S z) {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}
// softplus'(z) = sigmoid(beta z); softplus''(z) = beta s (1-s)
template <typename S>
inline S softplus_d1(S z, S beta) { return sigmoid(beta * z); }
template <typename S>
inline S softplus_d2(S z, S beta) {
  const S s = sigmoid(beta * z);
  return beta * s * (S(1) - s);
}

}  // namespace act

template <typename S>
struct LinearLayer {
  MatX<S> W;  // out x in
  VecX<S> b;  // out
};

// A plain fully connected net. `skip_layer` (if >= 0) is the index of the
// layer whose input is the concatenation [h_prev, input] / sqrt(2). Hidden
// activations are softplus(beta); the output layer activation is
// `output_act`.
template <typename S>
struct Mlp {
  std::vector<LinearLayer<S>> layers;
  S softplus_beta = S(100);
  Activation output_act = Activation::kNone;
  int skip_layer = -1;

  int input_dim() const { return static_cast<int>(layers.front().W.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().W.rows()); }

  int layer_input_dim(int l) const { return static_cast<int>(layers[l].W.cols()); }

  // Expected width of the hidden state entering layer l (before skip concat).
  int hidden_dim_before(int l) const {
    if (l == skip_layer) return layer_input_dim(l) - input_dim();
    return layer_input_dim(l);
  }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.W.size() + l.b.size();
    return n;
  }
};

template <typename S>
struct MlpGrads {
  std::vector<LinearLayer<S>> layers;

  void init_like(const Mlp<S>& mlp) {
    layers.resize(mlp.layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].W.setZero(mlp.layers[i].W.rows(), mlp.layers[i].W.cols());
      layers[i].b.setZero(mlp.layers[i].b.size());
    }
  }
  void add(const MlpGrads& o) {
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].W += o.layers[i].W;
      layers[i].b += o.layers[i].b;
    }
  }
};

template <typename S>
struct MlpCache {
  MatX<S> input;
  std::array<MatX<S>, 3> input_jets;
  bool with_jets = false;
  std::vector<MatX<S>> Z;                   // pre-activations
  std::vector<std::array<MatX<S>, 3>> Zj;   // pre-activation jets
};

namespace detail {

template <typename S>
inline void apply_activation(Activation a, S beta, const MatX<S>& Z, MatX<S>* H) {
  H->resize(Z.rows(), Z.cols());
  switch (a) {
    case Activation::kNone: *H = Z; break;
    case Activation::kSoftplus:
      for (Eigen::Index i = 0; i < Z.size(); ++i)
        H->data()[i] = act::softplus(Z.data()[i], beta);
      break;
    case Activation::kSigmoid:
      for (Eigen::Index i = 0; i < Z.size(); ++i)
        H->data()[i] = act::sigmoid(Z.data()[i]);
      break;
  }
}

}  // namespace detail

// Value-only forward. If `cache` is given, pre-activations are stored for
// the backward pass.
template <typename S>
MatX<S> mlp_forward(const Mlp<S>& mlp, const MatX<S>& X,
                    std::type_identity_t<MlpCache<S>>* cache) {
  const int L = static_cast<int>(mlp.layers.size());
  if (cache) {
    cache->input = X;
    cache->with_jets = false;
    cache->Z.resize(L);
  }
  MatX<S> H = X;
  for (int l = 0; l < L; ++l) {
    if (l == mlp.skip_layer) {
      MatX<S> cat(H.rows(), H.cols() + X.cols());
      cat << H, X;
      H = cat * S(M_SQRT1_2);
    }
    MatX<S> Z = (H * mlp.layers[l].W.transpose()).rowwise() +
                mlp.layers[l].b.transpose();
    if (cache) cache->Z[l] = Z;
    const Activation a = (l == L - 1) ? mlp.output_act : Activation::kSoftplus;
    detail::apply_activation(a, mlp.softplus_beta, Z, &H);
  }
  return H;
}

// Forward propagating the input's spatial derivative ("jets") alongside the
// values, so that the output's derivative w.r.t. the encoded point falls out
// of the same pass. Jets of the output are only produced for the first
// `jet_out_cols` outputs (the SDF head); the remaining columns never feed a
// derivative-dependent loss.
template <typename S>
void mlp_forward_jets(const Mlp<S>& mlp, const MatX<S>& X,
                      const std::array<MatX<S>, 3>& Xj, int jet_out_cols,
                      std::type_identity_t<MlpCache<S>>* cache, MatX<S>* Y,
                      std::array<MatX<S>, 3>* Yj) {
  const int L = static_cast<int>(mlp.layers.size());
  if (cache) {
    cache->input = X;
    cache->input_jets = Xj;
    cache->with_jets = true;
    cache->Z.resize(L);
    cache->Zj.resize(L);
  }
  MatX<S> H = X;
  std::array<MatX<S>, 3> Hj = Xj;
  for (int l = 0; l < L; ++l) {
    const bool last = (l == L - 1);
    if (l == mlp.skip_layer) {
      MatX<S> cat(H.rows(), H.cols() + X.cols());
      cat << H, X;
      H = cat * S(M_SQRT1_2);
      for (int a = 0; a < 3; ++a) {
        MatX<S> catj(Hj[a].rows(), Hj[a].cols() + X.cols());
        catj << Hj[a], Xj[a];
        Hj[a] = catj * S(M_SQRT1_2);
      }
    }
    const auto& W = mlp.layers[l].W;
    MatX<S> Z = (H * W.transpose()).rowwise() + mlp.layers[l].b.transpose();
    std::array<MatX<S>, 3> Zj;
    if (last) {
      // only the leading jet_out_cols outputs need derivatives
      const auto Wh = W.topRows(jet_out_cols);
      for (int a = 0; a < 3; ++a) Zj[a] = Hj[a] * Wh.transpose();
    } else {
      for (int a = 0; a < 3; ++a) Zj[a] = Hj[a] * W.transpose();
    }
    if (cache) {
      cache->Z[l] = Z;
      cache->Zj[l] = Zj;
    }
    const Activation a_fn = last ? mlp.output_act : Activation::kSoftplus;
    if (a_fn == Activation::kSoftplus) {
      MatX<S> d1(Z.rows(), Z.cols());
      for (Eigen::Index i = 0; i < Z.size(); ++i)
        d1.data()[i] = act::softplus_d1(Z.data()[i], mlp.softplus_beta);
      detail::apply_activation(a_fn, mlp.softplus_beta, Z, &H);
      for (int a = 0; a < 3; ++a) Hj[a] = (d1.array() * Zj[a].array()).matrix();
    } else {
      ASFM_CHECK(a_fn == Activation::kNone,
                 "mlp_forward_jets: jets only support linear output");
      H = Z;
      for (int a = 0; a < 3; ++a) Hj[a] = Zj[a];
    }
  }
  *Y = std::move(H);
  *Yj = std::move(Hj);
}

// Backward of mlp_forward. Accumulates parameter gradients into `grads` and
// returns the gradient w.r.t. the input.
template <typename S>
MatX<S> mlp_backward(const Mlp<S>& mlp, const MlpCache<S>& cache,
                     const MatX<S>& dY, MlpGrads<S>* grads) {
  const int L = static_cast<int>(mlp.layers.size());
  MatX<S> dH = dY;
  MatX<S> dX_extra = MatX<S>::Zero(cache.input.rows(), cache.input.cols());
  for (int l = L - 1; l >= 0; --l) {
    const Activation a_fn =
        (l == L - 1) ? mlp.output_act : Activation::kSoftplus;
    MatX<S> dZ;
    const MatX<S>& Z = cache.Z[l];
    switch (a_fn) {
      case Activation::kNone: dZ = dH; break;
      case Activation::kSoftplus: {
        dZ.resize(Z.rows(), Z.cols());
        for (Eigen::Index i = 0; i < Z.size(); ++i)
          dZ.data()[i] = act::softplus_d1(Z.data()[i], mlp.softplus_beta) * dH.data()[i];
        break;
      }
      case Activation::kSigmoid: {
        dZ.resize(Z.rows(), Z.cols());
        for (Eigen::Index i = 0; i < Z.size(); ++i) {
          const S y = act::sigmoid(Z.data()[i]);
          dZ.data()[i] = y * (S(1) - y) * dH.data()[i];
        }
        break;
      }
    }
    // reconstruct this layer's input
    MatX<S> Hin;
    if (l == 0) {
      Hin = cache.input;
    } else {
      detail::apply_activation(Activation::kSoftplus, mlp.softplus_beta,
                               cache.Z[l - 1], &Hin);
    }
    if (l == mlp.skip_layer) {
      MatX<S> cat(Hin.rows(), Hin.cols() + cache.input.cols());
      cat << Hin, cache.input;
      Hin = cat * S(M_SQRT1_2);
    }
    grads->layers[l].W.noalias() += dZ.transpose() * Hin;
    grads->layers[l].b += dZ.colwise().sum().transpose();
    MatX<S> dHin = dZ * mlp.layers[l].W;
    if (l == mlp.skip_layer) {
      dHin *= S(M_SQRT1_2);
      dX_extra += dHin.rightCols(cache.input.cols());
      dH = dHin.leftCols(dHin.cols() - cache.input.cols());
    } else {
      dH = std::move(dHin);
    }
  }
  return dH + dX_extra;
}

// Backward of mlp_forward_jets. dY is the gradient on output values, dYj the
// gradient on output jets (first jet_out_cols columns). Produces gradients
// w.r.t. the input values and input jets; the softplus second derivative
// couples the jet path back into the value path.
template <typename S>
void mlp_backward_jets(const Mlp<S>& mlp, const MlpCache<S>& cache,
                       const MatX<S>& dY, const std::array<MatX<S>, 3>& dYj,
                       int jet_out_cols, MlpGrads<S>* grads, MatX<S>* dX,
                       std::array<MatX<S>, 3>* dXj) {
  const int L = static_cast<int>(mlp.layers.size());
  const Eigen::Index N = cache.input.rows();
  MatX<S> dH = dY;
  std::array<MatX<S>, 3> dHj = dYj;
  MatX<S> dX_extra = MatX<S>::Zero(N, cache.input.cols());
  std::array<MatX<S>, 3> dXj_extra;
  for (auto& m : dXj_extra) m.setZero(N, cache.input.cols());

  for (int l = L - 1; l >= 0; --l) {
    const bool last = (l == L - 1);
    const Activation a_fn = last ? mlp.output_act : Activation::kSoftplus;
    const MatX<S>& Z = cache.Z[l];
    const auto& Zj = cache.Zj[l];
    MatX<S> dZ;
    std::array<MatX<S>, 3> dZj;
    if (a_fn == Activation::kNone) {
      dZ = dH;
      for (int a = 0; a < 3; ++a) dZj[a] = dHj[a];
    } else {
      // H = sp(Z), Hj = sp'(Z) .* Zj
      MatX<S> d1(Z.rows(), Z.cols()), d2(Z.rows(), Z.cols());
      for (Eigen::Index i = 0; i < Z.size(); ++i) {
        d1.data()[i] = act::softplus_d1(Z.data()[i], mlp.softplus_beta);
        d2.data()[i] = act::softplus_d2(Z.data()[i], mlp.softplus_beta);
      }
      dZ = (d1.array() * dH.array()).matrix();
      for (int a = 0; a < 3; ++a) {
        dZ.array() += d2.array() * Zj[a].array() * dHj[a].array();
        dZj[a] = (d1.array() * dHj[a].array()).matrix();
      }
    }
    // layer input (values and jets)
    MatX<S> Hin;
    std::array<MatX<S>, 3> Hinj;
    if (l == 0) {
      Hin = cache.input;
      Hinj = cache.input_jets;
    } else {
      MatX<S> d1(cache.Z[l - 1].rows(), cache.Z[l - 1].cols());
      for (Eigen::Index i = 0; i < cache.Z[l - 1].size(); ++i)
        d1.data()[i] = act::softplus_d1(cache.Z[l - 1].data()[i], mlp.softplus_beta);
      detail::apply_activation(Activation::kSoftplus, mlp.softplus_beta,
                               cache.Z[l - 1], &Hin);
      for (int a = 0; a < 3; ++a)
        Hinj[a] = (d1.array() * cache.Zj[l - 1][a].array()).matrix();
    }
    if (l == mlp.skip_layer) {
      MatX<S> cat(Hin.rows(), Hin.cols() + cache.input.cols());
      cat << Hin, cache.input;
      Hin = cat * S(M_SQRT1_2);
      for (int a = 0; a < 3; ++a) {
        MatX<S> catj(Hinj[a].rows(), Hinj[a].cols() + cache.input.cols());
        catj << Hinj[a], cache.input_jets[a];
        Hinj[a] = catj * S(M_SQRT1_2);
      }
    }

    const auto& W = mlp.layers[l].W;
    grads->layers[l].W.noalias() += dZ.transpose() * Hin;
    grads->layers[l].b += dZ.colwise().sum().transpose();
    MatX<S> dHin = dZ * W;
    std::array<MatX<S>, 3> dHinj;
    if (last) {
      const auto Wh = W.topRows(jet_out_cols);
      for (int a = 0; a < 3; ++a) {
        grads->layers[l].W.topRows(jet_out_cols).noalias() +=
            dZj[a].transpose() * Hinj[a];
        dHinj[a] = dZj[a] * Wh;
      }
    } else {
      for (int a = 0; a < 3; ++a) {
        grads->layers[l].W.noalias() += dZj[a].transpose() * Hinj[a];
        dHinj[a] = dZj[a] * W;
      }
    }

    if (l == mlp.skip_layer) {
      dHin *= S(M_SQRT1_2);
      dX_extra += dHin.rightCols(cache.input.cols());
      dH = dHin.leftCols(dHin.cols() - cache.input.cols());
      for (int a = 0; a < 3; ++a) {
        dHinj[a] *= S(M_SQRT1_2);
        dXj_extra[a] += dHinj[a].rightCols(cache.input.cols());
        dHj[a] = dHinj[a].leftCols(dHinj[a].cols() - cache.input.cols());
      }
    } else {
      dH = std::move(dHin);
      for (int a = 0; a < 3; ++a) dHj[a] = std::move(dHinj[a]);
    }
  }
  *dX = dH + dX_extra;
  for (int a = 0; a < 3; ++a) (*dXj)[a] = dHj[a] + dXj_extra[a];
}

}  // namespace asfm
