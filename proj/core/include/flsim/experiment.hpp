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

#ifndef FLSIM_EXPERIMENT_HPP_
#define FLSIM_EXPERIMENT_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flsim/actors.hpp"
#include "flsim/analytics.hpp"
#include "flsim/common.hpp"
#include "flsim/device.hpp"
#include "flsim/pace_steering.hpp"
#include "flsim/plan.hpp"

namespace flsim {

struct FleetSpec {
  std::size_t device_count = 1000;
  std::map<int, double> version_mix = {{kCurrentRuntimeVersion, 1.0}};
  double genuine_fraction = 1.0;
  double dropout_hazard_per_min = 0.0;
  double speed_lognormal_sigma = 0.5;
  std::string schedule = "always_on";  // or "diurnal"
  double base_eligibility = 0.35;      // per-hour probability scale (diurnal)
  double diurnal_amplitude = 0.6;      // (1+a)/(1-a) = 4x by default
  int diurnal_peak_hour = 2;
  std::size_t store_capacity = 0;
  SimTime store_expiration_ms = 0;
  SimTime checkin_jitter_ms = 60 * kMillisPerSecond;
  double error_probability = 0.0;
  SimTime checkin_timeout_ms = 180 * kMillisPerSecond;
  SimTime upload_timeout_ms = 30 * kMillisPerSecond;
  SimTime retry_backoff_ms = 60 * kMillisPerSecond;
};

struct SyntheticDataSpec {
  std::size_t dim = 10;
  std::size_t min_examples = 10;
  std::size_t max_examples = 50;
  double heterogeneity_sigma = 0.0;  // per-device shift of the true params
  double label_noise_sigma = 0.05;
  double holdout_fraction = 0.2;
  bool timezone_shift = false;   // bias probe: schedule-correlated data shift
  double timezone_shift_scale = 0.0;
  std::string label_kind = "linear";  // or "logistic"
};

struct FailureInjection {
  SimTime at_ms = 0;
  std::string kind;  // coordinator | selector | master_aggregator | aggregator
  std::size_t index = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  SimTime duration_ms = kMillisPerHour;
  FleetSpec fleet;
  SyntheticDataSpec data;
  std::vector<TaskConfig> tasks;

  bool pace_enabled = true;
  bool pace_diurnal_adjustment = true;
  PaceSteeringPolicy pace_policy;
  double required_checkin_rate = 0.0;  // devices/s; 0 derives from rounds

  std::size_t selector_count = 4;
  std::size_t aggregator_target = 100;
  bool pipelining = true;
  SimTime lease_ms = 10 * kMillisPerSecond;
  double secagg_threshold_fraction = 2.0 / 3.0;

  MonitorConfig monitors;
  std::vector<FailureInjection> failure_injections;

  // Original config text when parsed from a file; hashed into the manifest.
  std::string raw_json;
};

ExperimentConfig ParseExperimentConfig(const std::string& json_text);
std::string SerializeExperimentConfig(const ExperimentConfig& cfg);
void ValidateExperimentConfig(const ExperimentConfig& cfg);

struct FleetDevice {
  DeviceProfile profile;
  ExampleStore store;
};

// Deterministic under seed: byte-identical fleets on re-run. Availability
// schedules realize the diurnal curve; data is linear (or logistic) in a
// ground-truth parameter vector sampled once per experiment.
std::vector<FleetDevice> GenerateFleet(const FleetSpec& fleet,
                                       const SyntheticDataSpec& data,
                                       std::uint64_t seed);

// Ground-truth parameters the synthetic labels were generated from.
std::vector<double> GroundTruthParams(const SyntheticDataSpec& data,
                                      std::uint64_t seed);

// Per-hour eligible-device counts implied by the fleet's schedules.
std::vector<std::uint64_t> EligibleCountByHour(
    const std::vector<FleetDevice>& fleet);

struct RunResult {
  std::vector<LedgerRecord> ledger;
  EventLog events;
  std::vector<RoundMetricsRecord> rounds;
  ShapeDistribution shapes;               // participating sessions only
  std::vector<TrafficBucket> traffic;
  std::vector<Alert> alerts;
  std::map<SimTime, std::uint64_t> arrivals_per_bucket;  // 10 s buckets
  std::map<SimTime, std::uint64_t> participating_per_hour;
  std::vector<SimTime> participation_times;  // plan download -> terminal
  std::vector<std::uint64_t> eligible_by_hour;
  std::uint64_t checkins = 0;
  std::uint64_t checkins_rejected = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  std::uint32_t coordinators_alive_max = 0;
  std::uint64_t respawn_count = 0;
  std::uint64_t coordinator_kills = 0;
  std::string manifest_json;
};

// Runs the full stack on the logical event queue. Every task must pass the
// deployment gate (GateRejectedError otherwise). When out_dir is non-empty
// the artifacts are written there: manifest.json, ledger.jsonl, events.log,
// rounds.csv, shapes.csv, traffic.csv, alerts.csv, arrivals_per_bucket.csv,
// availability.csv.
RunResult RunExperiment(const ExperimentConfig& cfg,
                        const std::string& out_dir);

// Post-run profile summary over a run directory's artifacts.
struct ProfileReport {
  struct HourRow {
    SimTime hour_start = 0;
    std::uint64_t rounds_completed = 0;
    std::uint64_t sessions_started = 0;
    std::uint64_t eligible_devices = 0;
  };
  std::vector<HourRow> by_hour;
  int best_correlation_lag_hours = 0;  // completion rate vs availability
  double completed_mean = 0.0;
  double aborted_mean = 0.0;
  double dropped_mean = 0.0;
  SimTime round_duration_p50 = 0;
  SimTime round_duration_max = 0;
  SimTime participation_p50 = 0;
  SimTime participation_max = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;

  std::string ToText() const;
};

ProfileReport ReportProfile(const std::string& run_dir);

// 64-bit FNV-1a, hex-encoded; used for config hashes in run manifests.
std::string HashHex(const std::string& text);

}  // namespace flsim

#endif  // FLSIM_EXPERIMENT_HPP_
