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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "flsim/device.hpp"
#include "flsim/errors.hpp"
#include "flsim/plan.hpp"
#include "flsim/protocol.hpp"
#include "test_support.hpp"

using namespace flsim;
using namespace flsim::testing;

namespace {

Plan TrainingPlan(std::size_t dim, int epochs = 1, int batch = 4,
                  double eta = 0.1) {
  TaskConfig cfg;
  cfg.population_name = "dev/pop";
  cfg.task_name = "t";
  cfg.kind = TaskKind::kTraining;
  cfg.hyper = {epochs, batch, eta};
  cfg.round_params.goal_count = 5;
  cfg.required_runtime_versions = {kCurrentRuntimeVersion};
  cfg.model = {"linear_regression_l2", dim};
  cfg.code_review_ok = true;
  return GeneratePlan(cfg);
}

ExampleStore StoreWith(std::size_t n, std::size_t dim, std::string tag = "",
                       std::size_t capacity = 0, SimTime expiration = 0) {
  ExampleStore store(capacity, expiration);
  Dataset data = LinearDataset(std::vector<double>(dim, 1.0), n, 3);
  SimTime t = 0;
  for (Example& e : data) {
    e.tag = tag;
    e.timestamp = t++;
    store.Append(e);
  }
  return store;
}

}  // namespace

TEST_CASE("store maintenance: expiration first, then oldest-first to capacity") {
  ExampleStore fresh = StoreWith(10, 2, "", 20, 0);
  fresh.Maintain(1000);
  CHECK(fresh.size() == 10);  // under capacity, nothing expired

  ExampleStore expiring(0, 100);
  expiring.Append(MakeExample({1.0}, 0.0, 0));
  expiring.Append(MakeExample({1.0}, 0.0, 950));
  expiring.Maintain(1000);
  CHECK(expiring.size() == 1);
  CHECK(expiring.examples()[0].timestamp == 950);

  ExampleStore over(100, 0);
  for (SimTime t = 0; t < 150; ++t) over.Append(MakeExample({1.0}, 0.0, t));
  over.Maintain(1000);
  CHECK(over.size() == 100);
  CHECK(over.examples().front().timestamp == 50);  // oldest 50 removed
}

TEST_CASE("store queries filter by tag and age") {
  ExampleStore store;
  store.Append(MakeExample({1.0}, 0.0, 100, "train"));
  store.Append(MakeExample({1.0}, 0.0, 200, "holdout"));
  store.Append(MakeExample({1.0}, 0.0, 900, "train"));

  CHECK(store.Query(DataSelector{"train", 0}, 1000).size() == 2);
  CHECK(store.Query(DataSelector{"holdout", 0}, 1000).size() == 1);
  CHECK(store.Query(DataSelector{"", 0}, 1000).size() == 3);
  CHECK(store.Query(DataSelector{"train", 500}, 1000).size() == 1);
}

TEST_CASE("eligibility follows the availability schedule") {
  DeviceProfile p;
  p.availability.hour_mask = (1u << 2) | (1u << 3);  // 02:00-04:00
  CHECK(CheckEligibility(p, 2 * kMillisPerHour + 5));
  CHECK_FALSE(CheckEligibility(p, 14 * kMillisPerHour));
  CHECK(*p.availability.NextEligible(0) == 2 * kMillisPerHour);
  CHECK(*p.availability.NextEligible(2 * kMillisPerHour + 7) ==
        2 * kMillisPerHour + 7);
  CHECK(*p.availability.EligibilityEnd(2 * kMillisPerHour) ==
        4 * kMillisPerHour);
  // Wraps to the next day.
  CHECK(*p.availability.NextEligible(5 * kMillisPerHour) ==
        kMillisPerDay + 2 * kMillisPerHour);

  DeviceProfile never;
  never.availability.hour_mask = 0;
  CHECK_FALSE(never.availability.NextEligible(0).has_value());
  DeviceProfile always;
  CHECK_FALSE(always.availability.EligibilityEnd(0).has_value());
}

TEST_CASE("attestation mirrors the genuine bit") {
  DeviceProfile p;
  p.genuine = true;
  CHECK(Attest(p));
  p.genuine = false;
  CHECK_FALSE(Attest(p));
}

TEST_CASE("task execution: success, duration model, update payload") {
  DeviceProfile p;
  p.device_id = 9;
  p.speed_factor = 2.0;
  Plan plan = TrainingPlan(3, 2);
  ExampleStore store = StoreWith(20, 3);
  ModelParams w{{0.0, 0.0, 0.0}};

  TaskExecution exec = ExecuteTask(p, plan, w, store, 0, 0.0, 7);
  CHECK(exec.outcome == ExecutionOutcome::kSuccess);
  // 2 ms * 20 examples * 2 epochs / speed 2.
  CHECK(exec.duration_ms == 40);
  CHECK(exec.examples_used == 20);
  CHECK(exec.update.weight > 0);
  CHECK(exec.update.delta.size() == 3);
  CHECK(exec.metrics.count("loss_before") == 1);
}

TEST_CASE("task execution failure paths") {
  DeviceProfile p;
  p.device_id = 4;
  Plan plan = TrainingPlan(3);
  ExampleStore store = StoreWith(20, 3);
  ModelParams w{{0.0, 0.0, 0.0}};

  TaskExecution err = ExecuteTask(p, plan, w, store, 0, 1.0, 7);
  CHECK(err.outcome == ExecutionOutcome::kComputeError);

  DeviceProfile doomed = p;
  doomed.dropout_hazard_per_min = 1.0;
  TaskExecution inter = ExecuteTask(doomed, plan, w, store, 0, 0.0, 7);
  CHECK(inter.outcome == ExecutionOutcome::kInterrupted);
  CHECK(inter.duration_ms < ExecuteTask(p, plan, w, store, 0, 0.0, 7).duration_ms);

  // Eligibility window closing mid-task interrupts too.
  DeviceProfile windowed = p;
  windowed.availability.hour_mask = 1u << 0;  // only 00:00-01:00
  windowed.speed_factor = 1e-4;               // training would take hours
  TaskExecution clipped = ExecuteTask(windowed, plan, w, store,
                                      kMillisPerHour - 1000, 0.0, 7);
  CHECK(clipped.outcome == ExecutionOutcome::kInterrupted);
  CHECK(clipped.duration_ms == 1000);

  ExampleStore empty;
  TaskExecution nodata = ExecuteTask(p, plan, w, empty, 0, 0.0, 7);
  CHECK(nodata.outcome == ExecutionOutcome::kNoMatchingExamples);
}

TEST_CASE("evaluation plans report metrics without touching weights") {
  TaskConfig cfg;
  cfg.population_name = "dev/pop";
  cfg.task_name = "eval";
  cfg.kind = TaskKind::kEvaluation;
  cfg.hyper = {1, 4, 0.1};
  cfg.round_params.goal_count = 5;
  cfg.required_runtime_versions = {kCurrentRuntimeVersion};
  cfg.model = {"linear_regression_l2", 3};
  cfg.code_review_ok = true;
  Plan plan = GeneratePlan(cfg);

  DeviceProfile p;
  p.device_id = 2;
  ExampleStore store = StoreWith(15, 3);
  TaskExecution exec =
      ExecuteTask(p, plan, ModelParams{{1.0, 1.0, 1.0}}, store, 0, 0.0, 7);
  CHECK(exec.outcome == ExecutionOutcome::kSuccess);
  CHECK(exec.update.weight == 0);
  CHECK(exec.update.delta.empty());
  CHECK(exec.metrics.count("loss") == 1);
}

TEST_CASE("tenant queue runs one session at a time, FIFO") {
  TenantQueue q;
  q.Enqueue(FlJob{"pop/a", 0});
  q.Enqueue(FlJob{"pop/b", 1});
  q.Enqueue(FlJob{"pop/c", 2});

  auto first = q.StartNext(10);
  REQUIRE(first.has_value());
  CHECK(first->population == "pop/a");
  CHECK_FALSE(q.StartNext(11).has_value());  // one at a time
  CHECK(q.HasRunning());

  q.FinishRunning();
  auto second = q.StartNext(20);
  REQUIRE(second.has_value());
  CHECK(second->population == "pop/b");
  q.FinishRunning();
  CHECK(q.StartNext(30)->population == "pop/c");
  q.FinishRunning();
  CHECK_FALSE(q.StartNext(40).has_value());
}

TEST_CASE("no raw example bytes appear in wire frames") {
  DeviceProfile p;
  p.device_id = 5;
  Plan plan = TrainingPlan(4);
  ExampleStore store = StoreWith(12, 4);
  ModelParams w{std::vector<double>(4, 0.25)};
  TaskExecution exec = ExecuteTask(p, plan, w, store, 0, 0.0, 99);
  REQUIRE(exec.outcome == ExecutionOutcome::kSuccess);

  ReportMsg report{1, exec.update, exec.metrics};
  std::vector<std::uint8_t> frame = EncodeFrame(report);

  auto contains_bytes = [&frame](double value) {
    std::uint8_t needle[8];
    std::memcpy(needle, &value, 8);
    if (frame.size() < 8) return false;
    for (std::size_t i = 0; i + 8 <= frame.size(); ++i) {
      if (std::memcmp(frame.data() + i, needle, 8) == 0) return true;
    }
    return false;
  };
  for (const Example& e : store.examples()) {
    for (double f : e.features) CHECK_FALSE(contains_bytes(f));
    CHECK_FALSE(contains_bytes(e.label));
  }
}
