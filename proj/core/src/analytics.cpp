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

#include "flsim/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "flsim/errors.hpp"

namespace flsim {

bool IsSessionSymbol(char c) {
  for (const char* p = kSessionAlphabet; *p != '\0'; ++p) {
    if (*p == c) return true;
  }
  return false;
}

std::string FormatEventLine(const SessionEvent& e) {
  std::ostringstream os;
  os << e.sim_time << ' ' << e.device_id << ' ' << e.round_id << ' '
     << e.symbol;
  return os.str();
}

SessionEvent ParseEventLine(const std::string& line) {
  std::istringstream is(line);
  SessionEvent e;
  char symbol = '\0';
  if (!(is >> e.sim_time >> e.device_id >> e.round_id >> symbol) ||
      !IsSessionSymbol(symbol)) {
    throw DecodeError("bad event line: '" + line + "'");
  }
  e.symbol = symbol;
  return e;
}

void EventLog::RecordSession(std::span<const SessionEvent> events) {
  events_.insert(events_.end(), events.begin(), events.end());
}

void EventLog::WriteTo(std::ostream& os) const {
  for (const SessionEvent& e : events_) {
    os << FormatEventLine(e) << '\n';
  }
}

EventLog EventLog::ReadFrom(std::istream& is) {
  EventLog log;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    log.Record(ParseEventLine(line));
  }
  return log;
}

std::string EncodeSession(std::span<const SessionEvent> events) {
  std::string shape;
  SimTime last = std::numeric_limits<SimTime>::min();
  for (std::size_t i = 0; i < events.size(); ++i) {
    const SessionEvent& e = events[i];
    if (e.sim_time < last) {
      throw IllegalTransitionError("EncodeSession: events out of order");
    }
    if (i > 0 && (e.device_id != events[0].device_id ||
                  e.round_id != events[0].round_id)) {
      throw IllegalTransitionError("EncodeSession: mixed sessions");
    }
    last = e.sim_time;
    shape.push_back(e.symbol);
  }
  return shape;
}

ShapeDistribution ComputeShapeDistribution(const EventLog& log,
                                           bool participating_only) {
  ShapeDistribution dist;
  // Sessions are contiguous in the log; a '-' starts a new one.
  std::string current;
  DeviceId current_device = 0;
  bool open = false;
  auto close = [&]() {
    if (!open) return;
    if (!participating_only || current.size() > 1) {
      dist.shapes[current].count += 1;
      dist.total_sessions += 1;
    }
    current.clear();
    open = false;
  };
  for (const SessionEvent& e : log.events()) {
    if (e.symbol == '-' || (open && e.device_id != current_device)) close();
    if (!open) {
      open = true;
      current_device = e.device_id;
    }
    current.push_back(e.symbol);
  }
  close();

  for (auto& [shape, entry] : dist.shapes) {
    entry.percent = static_cast<int>(
        std::llround(100.0 * static_cast<double>(entry.count) /
                     static_cast<double>(dist.total_sessions)));
  }
  return dist;
}

void WriteShapesCsv(std::ostream& os, const ShapeDistribution& dist) {
  os << "shape,count,percent\n";
  // Largest count first, the way dashboards list them.
  std::vector<std::pair<std::string, ShapeEntry>> rows(dist.shapes.begin(),
                                                       dist.shapes.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.first < b.first;
  });
  for (const auto& [shape, entry] : rows) {
    os << '"' << shape << "\"," << entry.count << ',' << entry.percent << '\n';
  }
}

void WriteRoundsCsv(std::ostream& os,
                    std::span<const RoundMetricsRecord> rounds) {
  os << "round_id,task_name,outcome,accepted,rejected,completed,aborted,"
        "dropped,selection_ms,configuration_ms,reporting_ms,bytes_down,"
        "bytes_up,mean_loss,started_ms,finished_ms\n";
  for (const RoundMetricsRecord& r : rounds) {
    char loss[32];
    std::snprintf(loss, sizeof loss, "%.9g", r.mean_loss);
    os << r.round_id << ',' << r.task_name << ',' << r.outcome << ','
       << r.accepted << ',' << r.rejected << ',' << r.completed << ','
       << r.aborted << ',' << r.dropped << ',' << r.selection_ms << ','
       << r.configuration_ms << ',' << r.reporting_ms << ',' << r.bytes_down
       << ',' << r.bytes_up << ',' << loss << ',' << r.started_ms << ','
       << r.finished_ms << '\n';
  }
}

std::vector<RoundMetricsRecord> ReadRoundsCsv(std::istream& is) {
  std::vector<RoundMetricsRecord> rounds;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ls(line);
    RoundMetricsRecord r;
    std::string field;
    auto next = [&]() -> std::string {
      if (!std::getline(ls, field, ',')) {
        throw DecodeError("rounds.csv: short row '" + line + "'");
      }
      return field;
    };
    r.round_id = std::stoull(next());
    r.task_name = next();
    r.outcome = next();
    r.accepted = static_cast<std::uint32_t>(std::stoul(next()));
    r.rejected = static_cast<std::uint32_t>(std::stoul(next()));
    r.completed = static_cast<std::uint32_t>(std::stoul(next()));
    r.aborted = static_cast<std::uint32_t>(std::stoul(next()));
    r.dropped = static_cast<std::uint32_t>(std::stoul(next()));
    r.selection_ms = std::stoll(next());
    r.configuration_ms = std::stoll(next());
    r.reporting_ms = std::stoll(next());
    r.bytes_down = std::stoull(next());
    r.bytes_up = std::stoull(next());
    r.mean_loss = std::stod(next());
    r.started_ms = std::stoll(next());
    r.finished_ms = std::stoll(next());
    rounds.push_back(std::move(r));
  }
  return rounds;
}

void WriteTrafficCsv(std::ostream& os,
                     std::span<const TrafficBucket> buckets) {
  os << "bucket_start_ms,bytes_down,bytes_up\n";
  for (const TrafficBucket& b : buckets) {
    os << b.bucket_start << ',' << b.bytes_down << ',' << b.bytes_up << '\n';
  }
}

std::vector<Alert> AlertCheck(std::span<const RoundMetricsRecord> rounds,
                              const MonitorConfig& config) {
  std::vector<Alert> alerts;
  if (rounds.empty() || config.window_ms <= 0) return alerts;

  SimTime end = 0;
  for (const RoundMetricsRecord& r : rounds) end = std::max(end, r.finished_ms);

  for (SimTime w = 0; w <= end; w += config.window_ms) {
    std::uint64_t total = 0;
    std::uint64_t completed_rounds = 0;
    std::uint64_t accepted = 0;
    std::uint64_t dropped = 0;
    for (const RoundMetricsRecord& r : rounds) {
      if (r.finished_ms < w || r.finished_ms >= w + config.window_ms) continue;
      ++total;
      if (r.outcome == "completed") ++completed_rounds;
      accepted += r.accepted;
      dropped += r.dropped;
    }
    if (total == 0) continue;
    double completion_rate =
        static_cast<double>(completed_rounds) / static_cast<double>(total);
    if (completion_rate < config.completion_rate_floor) {
      alerts.push_back(
          Alert{w, "completion_rate", completion_rate,
                config.completion_rate_floor});
    }
    if (accepted > 0) {
      double dropout =
          static_cast<double>(dropped) / static_cast<double>(accepted);
      if (dropout > config.dropout_ceiling) {
        alerts.push_back(Alert{w, "dropout_rate", dropout,
                               config.dropout_ceiling});
      }
    }
  }
  return alerts;
}

void WriteAlertsCsv(std::ostream& os, std::span<const Alert> alerts) {
  os << "window_start_ms,metric,value,threshold\n";
  for (const Alert& a : alerts) {
    char value[32];
    char threshold[32];
    std::snprintf(value, sizeof value, "%.6g", a.value);
    std::snprintf(threshold, sizeof threshold, "%.6g", a.threshold);
    os << a.window_start << ',' << a.metric << ',' << value << ','
       << threshold << '\n';
  }
}

namespace {
constexpr std::string_view kHealthFields[] = {
    "activation_state", "run_duration_ms", "memory_proxy_bytes",
    "error_code",       "phone_model",     "os_version",
    "runtime_version"};
}  // namespace

std::string SerializeHealthRecord(const HealthRecord& r) {
  nlohmann::json j{{"activation_state", r.activation_state},
                   {"run_duration_ms", r.run_duration_ms},
                   {"memory_proxy_bytes", r.memory_proxy_bytes},
                   {"error_code", r.error_code},
                   {"phone_model", r.phone_model},
                   {"os_version", r.os_version},
                   {"runtime_version", r.runtime_version}};
  return j.dump();
}

std::span<const std::string_view> HealthRecordFieldNames() {
  return kHealthFields;
}

}  // namespace flsim
