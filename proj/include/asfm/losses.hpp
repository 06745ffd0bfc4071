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

// Mean absolute error over rays and channels (L1 photometric loss).
template <typename S>
S photometric_loss(const MatX<S>& pred, const MatX<S>& gt) {
  ASFM_CHECK(pred.rows() == gt.rows() && pred.cols() == gt.cols(),
             "photometric_loss: shape mismatch");
  return (pred - gt).cwiseAbs().sum() / S(pred.size());
}

// Mean of (|grad f| - 1)^2.
template <typename S>
S eikonal_loss(const VecX<S>& gradient_norms) {
  S sum = S(0);
  for (Eigen::Index i = 0; i < gradient_norms.size(); ++i) {
    const S d = gradient_norms[i] - S(1);
    sum += d * d;
  }
  return gradient_norms.size() ? sum / S(gradient_norms.size()) : S(0);
}

// Binary cross-entropy between accumulated ray weight and mask value.
// Weights are clamped to [1e-5, 1-1e-5] before the logs.
template <typename S>
S mask_loss(const VecX<S>& accumulated, const VecX<S>& gt_mask) {
  ASFM_CHECK(accumulated.size() == gt_mask.size(), "mask_loss: shape mismatch");
  S sum = S(0);
  for (Eigen::Index i = 0; i < accumulated.size(); ++i) {
    const S a = clamp(accumulated[i], S(1e-5), S(1) - S(1e-5));
    const S m = gt_mask[i];
    sum += -(m * std::log(a) + (S(1) - m) * std::log1p(-a));
  }
  return accumulated.size() ? sum / S(accumulated.size()) : S(0);
}

}  // namespace asfm
