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

enum class EncodingMode { kFourier, kHashGrid, kHybrid };

inline const char* encoding_mode_name(EncodingMode m) {
  switch (m) {
    case EncodingMode::kFourier: return "fourier";
    case EncodingMode::kHashGrid: return "hashgrid";
    case EncodingMode::kHybrid: return "hybrid";
  }
  return "?";
}

struct FourierConfig {
  int num_freqs = 6;
  bool include_input = true;

  int output_dim(int d) const {
    return (include_input ? d : 0) + 2 * num_freqs * d;
  }
};

struct HashGridConfig {
  int num_levels = 14;
  int features_per_level = 2;
  int table_size_log2 = 19;
  int base_resolution = 16;
  double per_level_scale = 1.38;

  int output_dim() const { return num_levels * features_per_level; }
  uint32_t table_size() const { return 1u << table_size_log2; }
  int resolution(int level) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(per_level_scale, level)));
  }
  void validate() const {
    ASFM_CHECK(num_levels >= 1 && features_per_level >= 1, "hash grid: bad shape");
    for (int l = 1; l < num_levels; ++l)
      ASFM_CHECK(resolution(l) > resolution(l - 1),
                 "hash grid: resolutions must be strictly increasing");
  }
};

// Spatial hash of integer grid coordinates; levels whose dense grid fits the
// table are indexed densely (collision-free), matching the usual
// multi-resolution hash table construction.
inline uint32_t hash_grid_index(uint32_t ix, uint32_t iy, uint32_t iz,
                                uint32_t res, uint32_t table_size) {
  if (static_cast<uint64_t>(res) * res * res <= table_size)
    return ix + res * (iy + res * iz);
  const uint32_t h = ix * 1u ^ iy * 2654435761u ^ iz * 805459861u;
  return h & (table_size - 1);
}

template <typename S>
struct HashGridState {
  HashGridConfig cfg;
  std::vector<MatX<S>> tables;  // per level: table_size x F, uniform(-1e-4,1e-4)

  void init(const HashGridConfig& c, Rng& rng) {
    c.validate();
    cfg = c;
    tables.assign(cfg.num_levels, MatX<S>());
    for (auto& t : tables) {
      t.resize(cfg.table_size(), cfg.features_per_level);
      for (Eigen::Index i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<S>(rng.uniform(-1e-4, 1e-4));
    }
  }
};

// Cached per-point cell data so the backward pass does not redo the hashing.
template <typename S>
struct HashEncodeCache {
  std::vector<Eigen::Matrix<uint32_t, Eigen::Dynamic, 8>> corners;  // per level
  std::vector<Eigen::Matrix<S, Eigen::Dynamic, 3>> frac;            // per level
  std::vector<Eigen::Matrix<uint8_t, Eigen::Dynamic, 3>> inside;    // clamp mask
};

namespace detail {
template <typename S>
inline void corner_weights(const S t[3], int c, S* w, S dwdt[3]) {
  S lin[3], sign[3];
  for (int d = 0; d < 3; ++d) {
    const bool hi = (c >> d) & 1;
    lin[d] = hi ? t[d] : S(1) - t[d];
    sign[d] = hi ? S(1) : S(-1);
  }
  *w = lin[0] * lin[1] * lin[2];
  dwdt[0] = sign[0] * lin[1] * lin[2];
  dwdt[1] = sign[1] * lin[0] * lin[2];
  dwdt[2] = sign[2] * lin[0] * lin[1];
}
}  // namespace detail

// Multi-resolution hash encoding of points in [-1,1]^3 (clamped). Writes
// L*F columns of `out` starting at `col0`; when `jets` is non-null also the
// spatial derivative of every output w.r.t. the input point.
template <typename S>
void hash_encode_forward(const HashGridState<S>& state,
                         const MatX<S>& P,  // N x 3
                         MatX<S>* out, int col0,
                         std::array<MatX<S>, 3>* jets,
                         std::type_identity_t<HashEncodeCache<S>>* cache) {
  const auto& cfg = state.cfg;
  const Eigen::Index N = P.rows();
  const int F = cfg.features_per_level;
  if (cache) {
    cache->corners.resize(cfg.num_levels);
    cache->frac.resize(cfg.num_levels);
    cache->inside.resize(cfg.num_levels);
  }
  for (int l = 0; l < cfg.num_levels; ++l) {
    const int res = cfg.resolution(l);
    const S scale = S(res - 1) / S(2);  // d(grid coord)/d(world coord)
    const auto& table = state.tables[l];
    const uint32_t tsize = cfg.table_size();
    if (cache) {
      cache->corners[l].resize(N, 8);
      cache->frac[l].resize(N, 3);
      cache->inside[l].resize(N, 3);
    }
    const int col = col0 + l * F;
    for (Eigen::Index i = 0; i < N; ++i) {
      S t[3];
      uint32_t base[3];
      uint8_t inside[3];
      for (int d = 0; d < 3; ++d) {
        const S x = P(i, d);
        S u = (x + S(1)) * S(0.5);
        inside[d] = (u > S(0) && u < S(1)) ? 1 : 0;
        u = clamp(u, S(0), S(1));
        S g = u * S(res - 1);
        int cell = static_cast<int>(std::floor(static_cast<double>(g)));
        if (cell > res - 2) cell = res - 2;
        if (cell < 0) cell = 0;
        base[d] = static_cast<uint32_t>(cell);
        t[d] = g - S(cell);
      }
      for (int c = 0; c < 8; ++c) {
        const uint32_t idx =
            hash_grid_index(base[0] + (c & 1), base[1] + ((c >> 1) & 1),
                            base[2] + ((c >> 2) & 1), res, tsize);
        if (cache) cache->corners[l](i, c) = idx;
        S w, dwdt[3];
        detail::corner_weights(t, c, &w, dwdt);
        for (int f = 0; f < F; ++f) {
          const S entry = table(idx, f);
          (*out)(i, col + f) += w * entry;
          if (jets) {
            for (int a = 0; a < 3; ++a) {
              if (!inside[a]) continue;
              (*jets)[a](i, col + f) += dwdt[a] * scale * entry;
            }
          }
        }
      }
      if (cache) {
        for (int d = 0; d < 3; ++d) {
          cache->frac[l](i, d) = t[d];
          cache->inside[l](i, d) = inside[d];
        }
      }
    }
  }
}

// Backward of hash_encode_forward. `d_out`/`d_jets` are gradients on the
// encoding block (columns [col0, col0+L*F)); accumulates into dP and the
// per-level table gradients. The d_jets path carries the second-order terms
// (mixed partials of the trilinear weights).
template <typename S>
void hash_encode_backward(const HashGridState<S>& state,
                          const HashEncodeCache<S>& cache,
                          const MatX<S>& d_out, int col0,
                          const std::array<MatX<S>, 3>* d_jets,
                          MatX<S>* dP, std::vector<MatX<S>>* d_tables) {
  const auto& cfg = state.cfg;
  const Eigen::Index N = d_out.rows();
  const int F = cfg.features_per_level;
  for (int l = 0; l < cfg.num_levels; ++l) {
    const int res = cfg.resolution(l);
    const S scale = S(res - 1) / S(2);
    const auto& table = state.tables[l];
    auto& dtab = (*d_tables)[l];
    const int col = col0 + l * F;
    for (Eigen::Index i = 0; i < N; ++i) {
      S t[3];
      uint8_t inside[3];
      for (int d = 0; d < 3; ++d) {
        t[d] = cache.frac[l](i, d);
        inside[d] = cache.inside[l](i, d);
      }
      for (int c = 0; c < 8; ++c) {
        const uint32_t idx = cache.corners[l](i, c);
        S w, dwdt[3], sign[3], lin[3];
        for (int d = 0; d < 3; ++d) {
          const bool hi = (c >> d) & 1;
          lin[d] = hi ? t[d] : S(1) - t[d];
          sign[d] = hi ? S(1) : S(-1);
        }
        w = lin[0] * lin[1] * lin[2];
        dwdt[0] = sign[0] * lin[1] * lin[2];
        dwdt[1] = sign[1] * lin[0] * lin[2];
        dwdt[2] = sign[2] * lin[0] * lin[1];
        for (int f = 0; f < F; ++f) {
          const S entry = table(idx, f);
          const S go = d_out(i, col + f);
          S dT = go * w;
          // value path into the point
          for (int a = 0; a < 3; ++a) {
            if (!inside[a]) continue;
            (*dP)(i, a) += go * dwdt[a] * scale * entry;
          }
          if (d_jets) {
            for (int a = 0; a < 3; ++a) {
              if (!inside[a]) continue;
              const S gj = (*d_jets)[a](i, col + f);
              if (gj == S(0)) continue;
              dT += gj * dwdt[a] * scale;
              // d(jet_a)/dP_b, b != a: mixed partial of the trilinear weight
              for (int b = 0; b < 3; ++b) {
                if (b == a || !inside[b]) continue;
                const int other = 3 - a - b;
                const S d2w = sign[a] * sign[b] * lin[other];
                (*dP)(i, b) += gj * entry * d2w * scale * scale;
              }
            }
          }
          dtab(idx, f) += dT;
        }
      }
    }
  }
}

// Fourier (frequency-doubled sin/cos) encoding of a d-dimensional input.
// Layout: [input (optional), sin(2^0 x), ..., sin(2^{L-1} x),
//          cos(2^0 x), ..., cos(2^{L-1} x)], each band over all input dims.
template <typename S>
void fourier_encode_forward(const FourierConfig& cfg,
                            const MatX<S>& X,  // N x d
                            MatX<S>* out, int col0,
                            std::array<MatX<S>, 3>* jets = nullptr) {
  const Eigen::Index N = X.rows();
  const int d = static_cast<int>(X.cols());
  int col = col0;
  if (cfg.include_input) {
    for (int j = 0; j < d; ++j) {
      out->col(col + j) = X.col(j);
      if (jets && j < 3) (*jets)[j].col(col + j).array() += S(1);
    }
    col += d;
  }
  for (int k = 0; k < cfg.num_freqs; ++k) {
    const S freq = S(std::pow(2.0, k));
    for (int j = 0; j < d; ++j) {
      out->col(col + k * d + j) = (freq * X.col(j).array()).sin().matrix();
      out->col(col + (cfg.num_freqs + k) * d + j) = (freq * X.col(j).array()).cos().matrix();
      if (jets) {
        (*jets)[j].col(col + k * d + j) =
            (freq * (freq * X.col(j).array()).cos()).matrix();
        (*jets)[j].col(col + (cfg.num_freqs + k) * d + j) =
            (-freq * (freq * X.col(j).array()).sin()).matrix();
      }
    }
  }
}

// Backward of the Fourier encoding; needs the original input. d_jets covers
// the second-order (derivative-of-derivative) path.
template <typename S>
void fourier_encode_backward(const FourierConfig& cfg, const MatX<S>& X,
                             const MatX<S>& d_out, int col0,
                             const std::array<MatX<S>, 3>* d_jets,
                             MatX<S>* dX) {
  const int d = static_cast<int>(X.cols());
  int col = col0;
  if (cfg.include_input) {
    for (int j = 0; j < d; ++j) dX->col(j) += d_out.col(col + j);
    col += d;
  }
  for (int k = 0; k < cfg.num_freqs; ++k) {
    const S freq = S(std::pow(2.0, k));
    for (int j = 0; j < d; ++j) {
      const auto s = (freq * X.col(j).array()).sin();
      const auto c = (freq * X.col(j).array()).cos();
      dX->col(j).array() += d_out.col(col + k * d + j).array() * freq * c;
      dX->col(j).array() -= d_out.col(col + (cfg.num_freqs + k) * d + j).array() * freq * s;
      if (d_jets && j < 3) {
        dX->col(j).array() -=
            (*d_jets)[j].col(col + k * d + j).array() * freq * freq * s;
        dX->col(j).array() -=
            (*d_jets)[j].col(col + (cfg.num_freqs + k) * d + j).array() * freq * freq * c;
      }
    }
  }
}

// The point encoding used by the SDF network: Fourier block first, hash
// block second for the hybrid mode.
struct PointEncodingConfig {
  EncodingMode mode = EncodingMode::kHybrid;
  FourierConfig fourier;
  HashGridConfig hash;

  bool has_fourier() const { return mode != EncodingMode::kHashGrid; }
  bool has_hash() const { return mode != EncodingMode::kFourier; }
  int output_dim() const {
    int n = 0;
    if (has_fourier()) n += fourier.output_dim(3);
    if (has_hash()) n += hash.output_dim();
    return n;
  }
};

template <typename S>
struct PointEncodeCache {
  MatX<S> P;
  HashEncodeCache<S> hash;
};

template <typename S>
void point_encode_forward(const PointEncodingConfig& cfg,
                          std::type_identity_t<const HashGridState<S>>* hash_state,
                          const MatX<S>& P, MatX<S>* out,
                          std::array<MatX<S>, 3>* jets,
                          std::type_identity_t<PointEncodeCache<S>>* cache) {
  const Eigen::Index N = P.rows();
  const int dim = cfg.output_dim();
  out->setZero(N, dim);
  if (jets)
    for (auto& j : *jets) j.setZero(N, dim);
  int col = 0;
  if (cfg.has_fourier()) {
    fourier_encode_forward(cfg.fourier, P, out, col, jets);
    col += cfg.fourier.output_dim(3);
  }
  if (cfg.has_hash()) {
    ASFM_CHECK(hash_state != nullptr, "encoding: missing hash state");
    hash_encode_forward(*hash_state, P, out, col, jets,
                        cache ? &cache->hash : nullptr);
  }
  if (cache) cache->P = P;
}

template <typename S>
void point_encode_backward(const PointEncodingConfig& cfg,
                           const HashGridState<S>* hash_state,
                           const PointEncodeCache<S>& cache,
                           const MatX<S>& d_out,
                           const std::array<MatX<S>, 3>* d_jets, MatX<S>* dP,
                           std::vector<MatX<S>>* d_tables) {
  int col = 0;
  if (cfg.has_fourier()) {
    fourier_encode_backward(cfg.fourier, cache.P, d_out, col, d_jets, dP);
    col += cfg.fourier.output_dim(3);
  }
  if (cfg.has_hash()) {
    hash_encode_backward(*hash_state, cache.hash, d_out, col, d_jets, dP,
                         d_tables);
  }
}

}  // namespace asfm
