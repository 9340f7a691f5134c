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

#include "flsim/fedavg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flsim/errors.hpp"
#include "flsim/rng.hpp"

namespace flsim {
namespace {

double Dot(const std::vector<double>& w, const std::vector<double>& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
  return acc;
}

double Sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow for large |z|.
double Softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

void CheckExampleDim(const ModelParams& w, const Example& e) {
  if (e.features.size() != w.dim()) {
    throw DimensionMismatchError("example feature dim " +
                                 std::to_string(e.features.size()) +
                                 " != model dim " + std::to_string(w.dim()));
  }
}

}  // namespace

bool ModelParams::AllFinite() const {
  return std::all_of(weights.begin(), weights.end(),
                     [](double v) { return std::isfinite(v); });
}

double BatchLoss(LossKind kind, const ModelParams& w,
                 std::span<const Example> batch) {
  if (batch.empty()) throw EmptyDatasetError("BatchLoss: empty batch");
  double acc = 0.0;
  for (const Example& e : batch) {
    CheckExampleDim(w, e);
    double z = Dot(w.weights, e.features);
    switch (kind) {
      case LossKind::kLinearRegressionL2: {
        double r = z - e.label;
        acc += 0.5 * r * r;
        break;
      }
      case LossKind::kLogisticRegression:
        // y in {0,1}: softplus(z) - y*z is the negative log-likelihood.
        acc += Softplus(z) - e.label * z;
        break;
    }
  }
  return acc / static_cast<double>(batch.size());
}

std::vector<double> BatchGradient(LossKind kind, const ModelParams& w,
                                  std::span<const Example> batch) {
  if (batch.empty()) throw EmptyDatasetError("BatchGradient: empty batch");
  std::vector<double> grad(w.dim(), 0.0);
  for (const Example& e : batch) {
    CheckExampleDim(w, e);
    double z = Dot(w.weights, e.features);
    double coeff = 0.0;
    switch (kind) {
      case LossKind::kLinearRegressionL2:
        coeff = z - e.label;
        break;
      case LossKind::kLogisticRegression:
        coeff = Sigmoid(z) - e.label;
        break;
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad[i] += coeff * e.features[i];
    }
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv;
  return grad;
}

ModelUpdate ClientUpdate(LossKind kind, const ModelParams& w,
                         const Dataset& data, const Hyperparameters& hyper,
                         std::uint64_t shuffle_seed) {
  if (data.empty()) throw EmptyDatasetError("ClientUpdate: no local examples");
  if (hyper.batch_size < 1) {
    throw InvalidConfigError("ClientUpdate: batch_size must be >= 1");
  }
  if (hyper.epochs < 1) {
    throw InvalidConfigError("ClientUpdate: epochs must be >= 1");
  }
  if (hyper.eta < 0.0) {
    throw InvalidConfigError("ClientUpdate: eta must be >= 0");
  }

  std::vector<double> current = w.weights;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::uint64_t batches = 0;
  std::vector<Example> batch;
  batch.reserve(static_cast<std::size_t>(hyper.batch_size));

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    // Fisher-Yates under a per-(task, epoch) seed; deterministic replay.
    Rng rng(DeriveSeed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.NextBelow(i)]);
    }
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hyper.batch_size)) {
      std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);

      ModelParams view{current};
      std::vector<double> grad = BatchGradient(kind, view, batch);
      for (std::size_t i = 0; i < current.size(); ++i) {
        current[i] -= hyper.eta * grad[i];
      }
      ++batches;
    }
  }

  ModelUpdate update;
  update.weight = batches;
  update.delta.resize(w.dim());
  double n = static_cast<double>(batches);
  for (std::size_t i = 0; i < current.size(); ++i) {
    update.delta[i] = n * (current[i] - w.weights[i]);
  }
  return update;
}

void AbsorbUpdate(AggregateState& state, const ModelUpdate& u) {
  if (state.weighted_sum.empty() && state.weight_sum == 0) {
    state.weighted_sum.assign(u.delta.size(), 0.0);
  }
  if (u.delta.size() != state.weighted_sum.size()) {
    throw DimensionMismatchError("AbsorbUpdate: update dim " +
                                 std::to_string(u.delta.size()) +
                                 " != aggregate dim " +
                                 std::to_string(state.weighted_sum.size()));
  }
  for (std::size_t i = 0; i < u.delta.size(); ++i) {
    state.weighted_sum[i] += u.delta[i];
  }
  state.weight_sum += u.weight;
  state.contributions += 1;
}

void MergeAggregates(AggregateState& state, const AggregateState& partial) {
  // Metric-only partials (evaluation rounds) have no weighted sum but still
  // carry contribution counts.
  if (!partial.weighted_sum.empty()) {
    if (state.weighted_sum.empty()) {
      state.weighted_sum.assign(partial.weighted_sum.size(), 0.0);
    }
    if (partial.weighted_sum.size() != state.weighted_sum.size()) {
      throw DimensionMismatchError("MergeAggregates: dimension mismatch");
    }
    for (std::size_t i = 0; i < partial.weighted_sum.size(); ++i) {
      state.weighted_sum[i] += partial.weighted_sum[i];
    }
  }
  state.weight_sum += partial.weight_sum;
  state.contributions += partial.contributions;
}

ModelParams FinalizeRound(const AggregateState& state,
                          const ModelParams& w_t) {
  if (state.weight_sum == 0) {
    throw ZeroWeightError("FinalizeRound: aggregate has zero weight");
  }
  if (state.weighted_sum.size() != w_t.dim()) {
    throw DimensionMismatchError("FinalizeRound: dimension mismatch");
  }
  ModelParams next = w_t;
  double inv = 1.0 / static_cast<double>(state.weight_sum);
  for (std::size_t i = 0; i < next.weights.size(); ++i) {
    next.weights[i] += state.weighted_sum[i] * inv;
  }
  return next;
}

EvalResult Evaluate(LossKind kind, const ModelParams& w, const Dataset& data) {
  if (data.empty()) throw EmptyDatasetError("Evaluate: no examples");
  // One example at a time so the result is the exact per-example mean.
  double acc = 0.0;
  for (const Example& e : data) {
    acc += BatchLoss(kind, w, std::span<const Example>(&e, 1));
  }
  return EvalResult{acc / static_cast<double>(data.size()), data.size()};
}

}  // namespace flsim
