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

#ifndef FLSIM_ANALYTICS_HPP_
#define FLSIM_ANALYTICS_HPP_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flsim/common.hpp"

namespace flsim {

// Session symbol legend:
//   '-' checkin   'v' plan downloaded   '[' training started
//   ']' training completed   '+' upload started   '^' upload completed
//   '#' upload rejected   '!' interrupted   '*' error
// '*' marks the error paths; the other eight cover the healthy lifecycle.
inline constexpr char kSessionAlphabet[] = "-v[]+^#!*";
bool IsSessionSymbol(char c);

struct SessionEvent {
  char symbol = '-';
  SimTime sim_time = 0;
  DeviceId device_id = 0;
  RoundId round_id = kNoRound;
};

// Log line format: `<sim_time_ms> <device_id> <round_id> <symbol>`.
std::string FormatEventLine(const SessionEvent& e);
SessionEvent ParseEventLine(const std::string& line);

// Append-only sink. Sessions are flushed contiguously once terminal, each
// line keeping its original sim_time.
class EventLog {
 public:
  void Record(const SessionEvent& e) { events_.push_back(e); }
  void RecordSession(std::span<const SessionEvent> events);

  const std::vector<SessionEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  void WriteTo(std::ostream& os) const;
  static EventLog ReadFrom(std::istream& is);

 private:
  std::vector<SessionEvent> events_;
};

// Concatenates one session's symbols in time order. Throws
// IllegalTransitionError on out-of-order or mixed-session input.
std::string EncodeSession(std::span<const SessionEvent> events);

struct ShapeEntry {
  std::uint64_t count = 0;
  int percent = 0;  // rounded to integer for dashboard display
};

struct ShapeDistribution {
  std::map<std::string, ShapeEntry> shapes;
  std::uint64_t total_sessions = 0;
};

// Splits the log into sessions (a '-' opens a new session for its device)
// and counts shape strings. `participating_only` drops bare "-" sessions
// that never downloaded a plan.
ShapeDistribution ComputeShapeDistribution(const EventLog& log,
                                           bool participating_only = false);

void WriteShapesCsv(std::ostream& os, const ShapeDistribution& dist);

// Per-round server metrics record.
struct RoundMetricsRecord {
  RoundId round_id = 0;
  std::string task_name;
  std::string outcome;  // "completed" or "abandoned"
  std::uint32_t accepted = 0;   // devices configured into the round
  std::uint32_t rejected = 0;   // check-ins turned away during selection
  std::uint32_t completed = 0;  // reports counted toward the goal
  std::uint32_t aborted = 0;    // configured, not counted, not dropped
  std::uint32_t dropped = 0;    // interrupted / errored / lost
  SimTime selection_ms = 0;
  SimTime configuration_ms = 0;
  SimTime reporting_ms = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  double mean_loss = 0.0;
  SimTime started_ms = 0;
  SimTime finished_ms = 0;
};

void WriteRoundsCsv(std::ostream& os,
                    std::span<const RoundMetricsRecord> rounds);
std::vector<RoundMetricsRecord> ReadRoundsCsv(std::istream& is);

// Traffic accounting per time bucket (down/up asymmetry view).
struct TrafficBucket {
  SimTime bucket_start = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
};

void WriteTrafficCsv(std::ostream& os, std::span<const TrafficBucket> buckets);

// Time-series monitors.
struct MonitorConfig {
  double completion_rate_floor = 0.5;
  double dropout_ceiling = 0.15;
  SimTime window_ms = kMillisPerHour;
};

struct Alert {
  SimTime window_start = 0;
  std::string metric;
  double value = 0.0;
  double threshold = 0.0;
};

std::vector<Alert> AlertCheck(std::span<const RoundMetricsRecord> rounds,
                              const MonitorConfig& config);

void WriteAlertsCsv(std::ostream& os, std::span<const Alert> alerts);

// Device health telemetry: enumerated scalar fields only, no payload data
// and nothing personally identifying.
struct HealthRecord {
  std::string activation_state;  // device state when training was activated
  SimTime run_duration_ms = 0;
  std::uint64_t memory_proxy_bytes = 0;
  int error_code = 0;
  std::string phone_model;
  std::string os_version;
  int runtime_version = 0;
};

std::string SerializeHealthRecord(const HealthRecord& r);
// The closed field-name whitelist the serialization must stay within.
std::span<const std::string_view> HealthRecordFieldNames();

}  // namespace flsim

#endif  // FLSIM_ANALYTICS_HPP_
