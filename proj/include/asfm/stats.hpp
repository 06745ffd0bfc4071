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

#include <algorithm>
#include <vector>

#include "asfm/common.hpp"

namespace asfm {

// One-sample Kolmogorov-Smirnov statistic against U(lo, hi).
inline double ks_statistic_uniform(std::vector<double> samples, double lo,
                                   double hi) {
  ASFM_CHECK(!samples.empty() && hi > lo, "ks: bad inputs");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    const double cdf = clamp((samples[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max(d, std::abs(cdf - (i + 1) / n));
    d = std::max(d, std::abs(cdf - i / n));
  }
  return d;
}

// Asymptotic Kolmogorov distribution tail: p = Q(sqrt(n) * D).
inline double ks_pvalue(double d, size_t n) {
  const double lambda = (std::sqrt(double(n)) + 0.12 + 0.11 / std::sqrt(double(n))) * d;
  double sum = 0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return clamp(sum, 0.0, 1.0);
}

inline double ks_uniform_pvalue(const std::vector<double>& samples, double lo,
                                double hi) {
  return ks_pvalue(ks_statistic_uniform(samples, lo, hi), samples.size());
}

}  // namespace asfm
