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

#include <benchmark/benchmark.h>

#include "flsim/engine.hpp"
#include "flsim/fedavg.hpp"
#include "flsim/protocol.hpp"
#include "flsim/rng.hpp"
#include "flsim/secure_agg.hpp"

namespace {

using namespace flsim;

Dataset MakeData(std::size_t count, std::size_t dim) {
  Rng rng(7);
  Dataset data;
  for (std::size_t i = 0; i < count; ++i) {
    Example e;
    e.features.resize(dim);
    double z = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      e.features[d] = rng.Normal(0, 1);
      z += e.features[d];
    }
    e.label = z;
    data.push_back(std::move(e));
  }
  return data;
}

void BM_ClientUpdate(benchmark::State& state) {
  std::size_t dim = static_cast<std::size_t>(state.range(0));
  Dataset data = MakeData(50, dim);
  ModelParams w{std::vector<double>(dim, 0.0)};
  Hyperparameters hyper{1, 10, 0.05};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ClientUpdate(LossKind::kLinearRegressionL2, w, data, hyper, 3));
  }
}
BENCHMARK(BM_ClientUpdate)->Arg(10)->Arg(100)->Arg(1000);

void BM_AbsorbUpdate(benchmark::State& state) {
  std::size_t dim = static_cast<std::size_t>(state.range(0));
  ModelUpdate u;
  u.delta.assign(dim, 0.5);
  u.weight = 4;
  AggregateState agg(dim);
  for (auto _ : state) {
    AbsorbUpdate(agg, u);
    benchmark::DoNotOptimize(agg.weight_sum);
  }
}
BENCHMARK(BM_AbsorbUpdate)->Arg(10)->Arg(1000)->Arg(100000);

void BM_SecAggCommit(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  SecAggGroup group;
  for (std::size_t m = 0; m < n; ++m) group.members.push_back(m + 1);
  group.threshold = DefaultThreshold(n);
  group.session_nonce = 42;
  PrepareResult prep = Prepare(group);
  ModelUpdate u;
  u.delta.assign(64, 1.25);
  u.weight = 8;
  FixedVector fixed = EncodeFixed(u, kDefaultFixedScale, n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(MaskCommit(fixed, prep.bundles[0], n));
  }
}
BENCHMARK(BM_SecAggCommit)->Arg(8)->Arg(32)->Arg(128);

void BM_SecAggPrepare(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  SecAggGroup group;
  for (std::size_t m = 0; m < n; ++m) group.members.push_back(m + 1);
  group.threshold = DefaultThreshold(n);
  group.session_nonce = 42;
  for (auto _ : state) {
    benchmark::DoNotOptimize(Prepare(group));
  }
}
BENCHMARK(BM_SecAggPrepare)->Arg(8)->Arg(32)->Arg(128);

void BM_FrameRoundTrip(benchmark::State& state) {
  std::size_t dim = static_cast<std::size_t>(state.range(0));
  ReportMsg report;
  report.round_id = 17;
  report.update.delta.assign(dim, 0.25);
  report.update.weight = 9;
  report.metrics = {{"examples", 30.0}, {"loss_before", 1.5}};
  Message m = report;
  for (auto _ : state) {
    std::vector<std::uint8_t> frame = EncodeFrame(m);
    benchmark::DoNotOptimize(DecodeFrame(frame));
  }
}
BENCHMARK(BM_FrameRoundTrip)->Arg(10)->Arg(1000);

void BM_EventQueue(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  for (auto _ : state) {
    EventQueue q;
    long long acc = 0;
    for (int i = 0; i < batch; ++i) {
      q.ScheduleAt(i % 97, [&acc, i] { acc += i; });
    }
    q.RunUntilIdle();
    benchmark::DoNotOptimize(acc);
  }
}
BENCHMARK(BM_EventQueue)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
