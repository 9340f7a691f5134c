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

#ifndef FLSIM_DEVICE_HPP_
#define FLSIM_DEVICE_HPP_

#include <cstdint>
#include <deque>
#include <optional>
#include <string>

#include "flsim/common.hpp"
#include "flsim/fedavg.hpp"
#include "flsim/plan.hpp"
#include "flsim/protocol.hpp"

namespace flsim {

// Simulated device compute cost at unit speed.
inline constexpr double kBaseCostMsPerExampleEpoch = 2.0;

// Repository of locally collected data. Appends keep arrival order; a
// maintenance pass drops expired examples and then the oldest until the
// store fits its capacity.
class ExampleStore {
 public:
  ExampleStore() = default;
  ExampleStore(std::size_t capacity, SimTime expiration_ms)
      : capacity_(capacity), expiration_ms_(expiration_ms) {}

  void Append(Example e) { examples_.push_back(std::move(e)); }
  void Maintain(SimTime now);

  // Examples matching a plan's selection criteria, newest-first order kept
  // as stored. max_age_ms of 0 means no age limit.
  Dataset Query(const DataSelector& selector, SimTime now) const;

  std::size_t size() const { return examples_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Dataset& examples() const { return examples_; }

 private:
  Dataset examples_;
  std::size_t capacity_ = 0;  // 0 = unbounded
  SimTime expiration_ms_ = 0;  // 0 = never expires
};

// Daily availability pattern: bit h set means the device is idle, charging
// and on an unmetered network during hour h (repeats every day).
struct AvailabilitySchedule {
  std::uint32_t hour_mask = 0xffffff;  // default: always available

  bool EligibleAt(SimTime t) const {
    return (hour_mask >> HourOfDay(t)) & 1u;
  }
  // Earliest eligible instant >= now, or nullopt if the mask is empty.
  std::optional<SimTime> NextEligible(SimTime now) const;
  // First instant >= now at which eligibility lapses (hour granularity);
  // nullopt when the device is always available.
  std::optional<SimTime> EligibilityEnd(SimTime now) const;
};

struct DeviceProfile {
  DeviceId device_id = 0;
  int runtime_version = kCurrentRuntimeVersion;
  bool genuine = true;
  double speed_factor = 1.0;  // > 0; larger is faster
  AvailabilitySchedule availability;
  double dropout_hazard_per_min = 0.0;  // P(losing eligibility per minute)
};

// Idle + charging + unmetered, collapsed into the availability schedule.
bool CheckEligibility(const DeviceProfile& profile, SimTime now);

// Stand-in for hardware-backed remote attestation.
bool Attest(const DeviceProfile& profile);

// -----------------------------------------------------------------------
// Task execution. The pure computation: what happens, how long it takes on
// the simulated clock, and what gets reported. The event-loop driver turns
// this into timed session events.
// -----------------------------------------------------------------------

enum class ExecutionOutcome {
  kSuccess,
  kInterrupted,         // eligibility lost mid-task ('!')
  kComputeError,        // model/computation failure ('*')
  kNoMatchingExamples,  // store has no data for the plan; counts as dropout
};

struct TaskExecution {
  ExecutionOutcome outcome = ExecutionOutcome::kSuccess;
  SimTime duration_ms = 0;  // until completion or the failure instant
  ModelUpdate update;       // populated on success for training plans
  MetricMap metrics;
  std::uint64_t examples_used = 0;
};

// Runs the plan against the device's store. duration = base cost * examples
// * epochs / speed_factor; the hazard is sampled as an exponential
// time-to-interrupt calibrated so P(interrupt within a minute) matches the
// profile. error_probability injects a computation failure at task start.
TaskExecution ExecuteTask(const DeviceProfile& profile, const Plan& plan,
                          const ModelParams& checkpoint,
                          const ExampleStore& store, SimTime now,
                          double error_probability, std::uint64_t seed);

// -----------------------------------------------------------------------
// Multi-tenancy: one FL job queue per device, FIFO across populations; at
// most one training session executes at a time.
// -----------------------------------------------------------------------

struct FlJob {
  std::string population;
  SimTime enqueued_at = 0;
};

class TenantQueue {
 public:
  void Enqueue(FlJob job) { pending_.push_back(std::move(job)); }

  // FIFO: returns the next job if none is running, marking it running.
  std::optional<FlJob> StartNext(SimTime now);
  void FinishRunning();

  bool HasRunning() const { return running_.has_value(); }
  std::size_t PendingCount() const { return pending_.size(); }

 private:
  std::deque<FlJob> pending_;
  std::optional<FlJob> running_;
};

}  // namespace flsim

#endif  // FLSIM_DEVICE_HPP_
