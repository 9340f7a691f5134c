// Copyright 2026 The flsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLSIM_TESTS_TEST_SUPPORT_HPP_
#define FLSIM_TESTS_TEST_SUPPORT_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

#include "flsim/fedavg.hpp"
#include "flsim/rng.hpp"

namespace flsim::testing {

inline Example MakeExample(std::vector<double> x, double y,
                           SimTime t = 0, std::string tag = "") {
  Example e;
  e.features = std::move(x);
  e.label = y;
  e.timestamp = t;
  e.tag = std::move(tag);
  return e;
}

// Consistent linear data: y = truth . x (+ optional noise).
inline Dataset LinearDataset(const std::vector<double>& truth,
                             std::size_t count, std::uint64_t seed,
                             double noise_sigma = 0.0) {
  Rng rng(seed);
  Dataset data;
  data.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Example e;
    e.features.resize(truth.size());
    double z = 0.0;
    for (std::size_t d = 0; d < truth.size(); ++d) {
      e.features[d] = rng.Normal(0.0, 1.0);
      z += truth[d] * e.features[d];
    }
    e.label = z + (noise_sigma > 0.0 ? rng.Normal(0.0, noise_sigma) : 0.0);
    data.push_back(std::move(e));
  }
  return data;
}

// Independent summation oracle: long-double accumulation in a single pass.
inline std::vector<double> SumOracle(
    const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) return {};
  std::vector<long double> acc(vectors[0].size(), 0.0L);
  for (const auto& v : vectors) {
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  std::vector<double> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out[i] = static_cast<double>(acc[i]);
  }
  return out;
}

// Central finite differences of the batch loss.
inline std::vector<double> FiniteDifferenceGradient(
    LossKind kind, const ModelParams& w, const Dataset& batch, double h) {
  std::vector<double> grad(w.dim());
  for (std::size_t i = 0; i < w.dim(); ++i) {
    ModelParams plus = w;
    ModelParams minus = w;
    plus.weights[i] += h;
    minus.weights[i] -= h;
    grad[i] = (BatchLoss(kind, plus, batch) - BatchLoss(kind, minus, batch)) /
              (2.0 * h);
  }
  return grad;
}

inline double RelErr(double got, double want) {
  double denom = std::max(std::fabs(want), 1e-12);
  return std::fabs(got - want) / denom;
}

}  // namespace flsim::testing

#endif  // FLSIM_TESTS_TEST_SUPPORT_HPP_
