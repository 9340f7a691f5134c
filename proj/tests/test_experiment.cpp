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

#include <filesystem>
#include <fstream>
#include <sstream>

#include <regex>

#include "flsim/errors.hpp"
#include "flsim/experiment.hpp"

using namespace flsim;

namespace {

TaskConfig TrainTask(const char* name = "train_a", std::uint32_t goal = 15) {
  TaskConfig cfg;
  cfg.population_name = "exp/pop";
  cfg.task_name = name;
  cfg.kind = TaskKind::kTraining;
  cfg.hyper = {1, 5, 0.1};
  cfg.round_params.goal_count = goal;
  cfg.round_params.overselect_factor = 1.3;
  cfg.round_params.min_fraction = 0.5;
  cfg.round_params.selection_timeout_ms = 15000;
  cfg.round_params.report_window_ms = 30000;
  cfg.round_params.dropout_tolerance = 0.3;
  cfg.data_selector.tag = "train";
  cfg.required_runtime_versions = {2, 3};
  cfg.model = {"linear_regression_l2", 4};
  cfg.code_review_ok = true;
  return cfg;
}

ExperimentConfig SmallExperiment() {
  ExperimentConfig cfg;
  cfg.seed = 11;
  cfg.duration_ms = 240000;
  cfg.fleet.device_count = 200;
  cfg.fleet.schedule = "always_on";
  cfg.fleet.checkin_jitter_ms = 10000;
  cfg.fleet.version_mix = {{2, 0.3}, {3, 0.7}};
  cfg.data.dim = 4;
  cfg.data.min_examples = 8;
  cfg.data.max_examples = 20;
  cfg.tasks = {TrainTask()};
  cfg.required_checkin_rate = 4.0;
  cfg.selector_count = 2;
  cfg.pipelining = true;
  return cfg;
}

}  // namespace

TEST_CASE("fleet generation is byte-deterministic under the seed") {
  FleetSpec fleet;
  fleet.device_count = 128;
  fleet.schedule = "diurnal";
  SyntheticDataSpec data;
  data.dim = 3;
  std::vector<FleetDevice> a = GenerateFleet(fleet, data, 99);
  std::vector<FleetDevice> b = GenerateFleet(fleet, data, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].profile.device_id == b[i].profile.device_id);
    CHECK(a[i].profile.speed_factor == b[i].profile.speed_factor);
    CHECK(a[i].profile.availability.hour_mask ==
          b[i].profile.availability.hour_mask);
    REQUIRE(a[i].store.size() == b[i].store.size());
    for (std::size_t e = 0; e < a[i].store.size(); ++e) {
      CHECK(a[i].store.examples()[e].features ==
            b[i].store.examples()[e].features);
      CHECK(a[i].store.examples()[e].label == b[i].store.examples()[e].label);
    }
  }
  std::vector<FleetDevice> c = GenerateFleet(fleet, data, 100);
  CHECK(c[0].profile.speed_factor != a[0].profile.speed_factor);
}

TEST_CASE("fleet honors the genuine fraction") {
  FleetSpec fleet;
  fleet.device_count = 5000;
  fleet.genuine_fraction = 0.99;
  SyntheticDataSpec data;
  data.dim = 2;
  std::vector<FleetDevice> devices = GenerateFleet(fleet, data, 12);
  std::size_t non_genuine = 0;
  for (const FleetDevice& d : devices) {
    if (!d.profile.genuine) ++non_genuine;
  }
  double fraction = static_cast<double>(non_genuine) / 5000.0;
  CHECK(fraction > 0.005);
  CHECK(fraction < 0.02);
}

TEST_CASE("diurnal fleets realize the configured availability ratio") {
  FleetSpec fleet;
  fleet.device_count = 10000;
  fleet.schedule = "diurnal";
  SyntheticDataSpec data;
  data.dim = 2;
  std::vector<FleetDevice> devices = GenerateFleet(fleet, data, 4);
  std::vector<std::uint64_t> by_hour = EligibleCountByHour(devices);
  std::uint64_t peak = *std::max_element(by_hour.begin(), by_hour.end());
  std::uint64_t trough = *std::min_element(by_hour.begin(), by_hour.end());
  REQUIRE(trough > 0);
  double ratio = static_cast<double>(peak) / static_cast<double>(trough);
  CHECK(ratio > 3.2);   // 4x +- 20%
  CHECK(ratio < 4.8);
}

TEST_CASE("experiment config parse/serialize round-trips") {
  ExperimentConfig cfg = SmallExperiment();
  std::string text = SerializeExperimentConfig(cfg);
  ExperimentConfig back = ParseExperimentConfig(text);
  CHECK(back.seed == cfg.seed);
  CHECK(back.fleet.device_count == cfg.fleet.device_count);
  CHECK(back.tasks.size() == 1);
  CHECK(back.tasks[0].task_name == "train_a");
  CHECK(back.required_checkin_rate == 4.0);
  CHECK(SerializeExperimentConfig(back) == text);

  CHECK_THROWS_AS(ParseExperimentConfig("{nope"), InvalidConfigError);
  ExperimentConfig bad = cfg;
  bad.duration_ms = 0;
  CHECK_THROWS_AS(ValidateExperimentConfig(bad), InvalidConfigError);
  bad = cfg;
  bad.failure_injections.push_back({1000, "mainframe", 0});
  CHECK_THROWS_AS(ValidateExperimentConfig(bad), UnknownActorError);
}

TEST_CASE("gate-rejected tasks never run") {
  ExperimentConfig cfg = SmallExperiment();
  cfg.tasks[0].code_review_ok = false;
  CHECK_THROWS_AS(RunExperiment(cfg, ""), GateRejectedError);
}

TEST_CASE("a small run trains, steers, accounts, and stays deterministic") {
  ExperimentConfig cfg = SmallExperiment();
  RunResult a = RunExperiment(cfg, "");
  RunResult b = RunExperiment(cfg, "");

  // Determinism: identical event logs and ledgers, bit for bit.
  std::ostringstream log_a;
  std::ostringstream log_b;
  a.events.WriteTo(log_a);
  b.events.WriteTo(log_b);
  CHECK(log_a.str() == log_b.str());
  REQUIRE(a.ledger.size() == b.ledger.size());
  for (std::size_t i = 0; i < a.ledger.size(); ++i) {
    CHECK(RoundLedger::ToJsonLine(a.ledger[i]) ==
          RoundLedger::ToJsonLine(b.ledger[i]));
  }

  REQUIRE(a.ledger.size() >= 3);
  // Loss improves over training.
  CHECK(a.ledger.back().metrics.at("mean_loss") <
        a.ledger.front().metrics.at("mean_loss"));
  // Over-selection arithmetic holds every round.
  for (const RoundMetricsRecord& r : a.rounds) {
    if (r.outcome == "completed") {
      CHECK(r.accepted == 20);  // ceil(1.3 * 15)
    }
  }
  // Download dominates upload with default plan and model sizes.
  CHECK(a.bytes_down > a.bytes_up);
  CHECK(a.coordinators_alive_max == 1);

  // Mixed-version fleet: both runtime versions produced working sessions.
  ShapeDistribution shapes = a.shapes;
  CHECK(shapes.total_sessions > 0);
  CHECK(shapes.shapes.count("-v[]+^") == 1);
}

TEST_CASE("artifacts land on disk and the profile report reads them back") {
  std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "flsim_test_run";
  std::filesystem::remove_all(dir);
  ExperimentConfig cfg = SmallExperiment();
  cfg.duration_ms = 120000;
  RunResult result = RunExperiment(cfg, dir.string());

  for (const char* name :
       {"manifest.json", "ledger.jsonl", "events.log", "rounds.csv",
        "shapes.csv", "traffic.csv", "alerts.csv", "arrivals_per_bucket.csv",
        "availability.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / name), name);
  }
  // Ledger on disk matches the in-memory ledger.
  std::ifstream is(dir / "ledger.jsonl");
  std::vector<LedgerRecord> from_disk = RoundLedger::ReadJsonl(is);
  REQUIRE(from_disk.size() == result.ledger.size());
  CHECK(from_disk.back().weights == result.ledger.back().weights);

  CHECK(result.manifest_json.find("config_hash") != std::string::npos);

  ProfileReport report = ReportProfile(dir.string());
  CHECK(report.bytes_down > report.bytes_up);
  CHECK(report.completed_mean > 0.0);
  CHECK(!report.ToText().empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("kill-nothing schedules match the no-injection trace") {
  ExperimentConfig base = SmallExperiment();
  base.duration_ms = 90000;
  ExperimentConfig with_noop = base;
  // An injection against a kind with an index beyond any live actor kills
  // index % alive; instead schedule it after the horizon so nothing fires.
  with_noop.failure_injections.push_back(
      {base.duration_ms + kMillisPerHour, "aggregator", 0});

  RunResult a = RunExperiment(base, "");
  RunResult b = RunExperiment(with_noop, "");
  std::ostringstream log_a;
  std::ostringstream log_b;
  a.events.WriteTo(log_a);
  b.events.WriteTo(log_b);
  CHECK(log_a.str() == log_b.str());
  CHECK(a.ledger.size() == b.ledger.size());
}

TEST_CASE("killing a master mid-round leaves no partial record and restarts") {
  ExperimentConfig cfg = SmallExperiment();
  cfg.duration_ms = 240000;
  // Aim the kill mid-run; whichever round is in flight dies with its master.
  cfg.failure_injections.push_back({100000, "master_aggregator", 0});
  RunResult r = RunExperiment(cfg, "");

  // Ledger integrity: unique ids, fully-formed records.
  std::set<RoundId> seen;
  for (const LedgerRecord& rec : r.ledger) {
    CHECK(seen.insert(rec.round_id).second);
    CHECK(rec.weights.size() == 4);
    CHECK(rec.metrics.count("contributions") == 1);
  }
  // Progress resumed after the kill.
  CHECK(r.ledger.back().committed_at > 100000);
}

TEST_CASE("killing the coordinator respawns it exactly once and resumes") {
  ExperimentConfig cfg = SmallExperiment();
  cfg.duration_ms = 240000;
  cfg.lease_ms = 5000;
  cfg.failure_injections.push_back({90000, "coordinator", 0});
  RunResult r = RunExperiment(cfg, "");
  CHECK(r.coordinator_kills == 1);
  CHECK(r.respawn_count == 1);
  CHECK(r.coordinators_alive_max == 1);
  CHECK(r.ledger.back().committed_at > 90000 + cfg.lease_ms);
}

TEST_CASE("killing a selector only drops its connected devices") {
  ExperimentConfig cfg = SmallExperiment();
  cfg.duration_ms = 240000;
  cfg.selector_count = 3;
  cfg.failure_injections.push_back({80000, "selector", 1});
  RunResult r = RunExperiment(cfg, "");
  // The system keeps completing rounds afterwards.
  CHECK(r.ledger.back().committed_at > 80000);
  std::uint64_t completed_after = 0;
  for (const RoundMetricsRecord& round : r.rounds) {
    if (round.outcome == "completed" && round.finished_ms > 80000) {
      ++completed_after;
    }
  }
  CHECK(completed_after >= 2);
}

TEST_CASE("secure aggregation rounds complete and train end to end") {
  ExperimentConfig cfg = SmallExperiment();
  cfg.duration_ms = 240000;
  cfg.tasks[0].secagg_group_min_k = 5;
  cfg.aggregator_target = 10;
  RunResult r = RunExperiment(cfg, "");
  REQUIRE(r.ledger.size() >= 2);
  CHECK(r.ledger.back().metrics.at("mean_loss") <
        r.ledger.front().metrics.at("mean_loss"));
  for (const LedgerRecord& rec : r.ledger) {
    for (double w : rec.weights) CHECK(std::isfinite(w));
  }
}

TEST_CASE("training and evaluation tasks alternate round-robin") {
  ExperimentConfig cfg = SmallExperiment();
  cfg.duration_ms = 240000;
  TaskConfig eval = TrainTask("eval_a");
  eval.kind = TaskKind::kEvaluation;
  eval.data_selector.tag = "holdout";
  cfg.tasks.push_back(eval);
  RunResult r = RunExperiment(cfg, "");

  bool saw_eval = false;
  bool saw_train = false;
  for (std::size_t i = 0; i < r.ledger.size(); ++i) {
    if (r.ledger[i].task_name == "eval_a") saw_eval = true;
    if (r.ledger[i].task_name == "train_a") saw_train = true;
    if (i > 0) CHECK(r.ledger[i].task_name != r.ledger[i - 1].task_name);
  }
  CHECK(saw_eval);
  CHECK(saw_train);
  // Evaluation rounds leave the model untouched.
  for (std::size_t i = 1; i < r.ledger.size(); ++i) {
    if (r.ledger[i].task_name == "eval_a") {
      CHECK(r.ledger[i].weights == r.ledger[i - 1].weights);
    }
  }
}

TEST_CASE("every simulated session matches the legend grammar") {
  ExperimentConfig cfg = SmallExperiment();
  cfg.duration_ms = 120000;
  cfg.fleet.error_probability = 0.02;
  cfg.fleet.dropout_hazard_per_min = 0.5;
  RunResult r = RunExperiment(cfg, "");

  const std::regex grammar(R"(^-(v(\[(\]\+?)?)?)?[\^#!*]?$)");
  ShapeDistribution all = ComputeShapeDistribution(r.events, false);
  REQUIRE(all.total_sessions > 100);
  for (const auto& [shape, entry] : all.shapes) {
    CHECK_MESSAGE(std::regex_match(shape, grammar), "shape ", shape);
    for (char c : shape) CHECK(IsSessionSymbol(c));
    int terminals = 0;
    for (char c : shape) {
      if (c == '^' || c == '#' || c == '!' || c == '*') ++terminals;
    }
    CHECK(terminals <= 1);
  }
}

TEST_CASE("non-genuine devices never participate") {
  ExperimentConfig cfg = SmallExperiment();
  cfg.duration_ms = 120000;
  cfg.fleet.genuine_fraction = 0.9;
  RunResult r = RunExperiment(cfg, "");

  std::vector<FleetDevice> fleet = GenerateFleet(cfg.fleet, cfg.data, cfg.seed);
  std::set<DeviceId> fakes;
  for (const FleetDevice& d : fleet) {
    if (!d.profile.genuine) fakes.insert(d.profile.device_id);
  }
  REQUIRE(!fakes.empty());
  for (const SessionEvent& e : r.events.events()) {
    if (e.symbol != '-') {
      CHECK(fakes.count(e.device_id) == 0);
    }
  }
}
