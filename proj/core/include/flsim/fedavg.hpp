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

#ifndef FLSIM_FEDAVG_HPP_
#define FLSIM_FEDAVG_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flsim/common.hpp"

namespace flsim {

// One training/evaluation example. `tag` is the metadata plans select on
// (e.g. "train" vs "holdout" shards).
struct Example {
  std::vector<double> features;
  double label = 0.0;
  SimTime timestamp = 0;
  std::string tag;
};

using Dataset = std::vector<Example>;

// Dense global model parameter vector. The dimension is fixed for an FL
// population; all entries must stay finite.
struct ModelParams {
  std::vector<double> weights;

  std::size_t dim() const { return weights.size(); }
  bool AllFinite() const;
};

// Weighted update (delta, n) produced on a device: delta = n * (w_final -
// w_init), n = number of minibatches processed across all epochs.
struct ModelUpdate {
  std::vector<double> delta;
  std::uint64_t weight = 0;
};

enum class LossKind {
  kLinearRegressionL2,
  kLogisticRegression,
};

// Mean loss over a batch. Both kinds are non-negative.
double BatchLoss(LossKind kind, const ModelParams& w,
                 std::span<const Example> batch);

// Mean gradient over a batch; same dimension as the model.
std::vector<double> BatchGradient(LossKind kind, const ModelParams& w,
                                  std::span<const Example> batch);

struct Hyperparameters {
  int epochs = 1;
  int batch_size = 1;
  double eta = 0.0;
};

// Local SGD pass: data is shuffled once per epoch under `shuffle_seed`,
// partitioned in order into batches of `batch_size` (last short batch kept),
// and one gradient step is taken per batch. Throws EmptyDatasetError when
// data is empty.
ModelUpdate ClientUpdate(LossKind kind, const ModelParams& w,
                         const Dataset& data, const Hyperparameters& hyper,
                         std::uint64_t shuffle_seed);

// Running weighted sum of updates; updates can be absorbed online as they
// are received, in any order.
struct AggregateState {
  std::vector<double> weighted_sum;
  std::uint64_t weight_sum = 0;
  std::uint64_t contributions = 0;

  AggregateState() = default;
  explicit AggregateState(std::size_t dim) : weighted_sum(dim, 0.0) {}
};

// Absorbs one update into the state. Throws DimensionMismatchError.
void AbsorbUpdate(AggregateState& state, const ModelUpdate& u);

// Merges a partial aggregate (e.g. from a subordinate aggregator) into state.
void MergeAggregates(AggregateState& state, const AggregateState& partial);

// w_{t+1} = w_t + weighted_sum / weight_sum. Throws ZeroWeightError when no
// weight was absorbed; such rounds must be abandoned upstream.
ModelParams FinalizeRound(const AggregateState& state, const ModelParams& w_t);

struct EvalResult {
  double loss = 0.0;
  std::uint64_t count = 0;
};

// Mean per-example loss over the whole dataset. Throws EmptyDatasetError.
EvalResult Evaluate(LossKind kind, const ModelParams& w, const Dataset& data);

}  // namespace flsim

#endif  // FLSIM_FEDAVG_HPP_
