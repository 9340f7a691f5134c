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

#include "flsim/device.hpp"

#include <algorithm>
#include <cmath>

#include "flsim/errors.hpp"
#include "flsim/rng.hpp"

namespace flsim {

void ExampleStore::Maintain(SimTime now) {
  if (expiration_ms_ > 0) {
    std::erase_if(examples_, [&](const Example& e) {
      return now - e.timestamp > expiration_ms_;
    });
  }
  if (capacity_ > 0 && examples_.size() > capacity_) {
    // Appends are in arrival order, so trimming the front drops oldest-first.
    examples_.erase(examples_.begin(),
                    examples_.begin() +
                        static_cast<std::ptrdiff_t>(examples_.size() - capacity_));
  }
}

Dataset ExampleStore::Query(const DataSelector& selector, SimTime now) const {
  Dataset out;
  for (const Example& e : examples_) {
    if (!selector.tag.empty() && e.tag != selector.tag) continue;
    if (selector.max_age_ms > 0 && now - e.timestamp > selector.max_age_ms) {
      continue;
    }
    out.push_back(e);
  }
  return out;
}

std::optional<SimTime> AvailabilitySchedule::NextEligible(SimTime now) const {
  if ((hour_mask & 0xffffffu) == 0) return std::nullopt;
  if (EligibleAt(now)) return now;
  SimTime t = (now / kMillisPerHour + 1) * kMillisPerHour;
  for (int i = 0; i < 24; ++i) {
    if (EligibleAt(t)) return t;
    t += kMillisPerHour;
  }
  return std::nullopt;
}

std::optional<SimTime> AvailabilitySchedule::EligibilityEnd(SimTime now) const {
  if ((hour_mask & 0xffffffu) == 0xffffffu) return std::nullopt;
  if (!EligibleAt(now)) return now;
  SimTime t = (now / kMillisPerHour + 1) * kMillisPerHour;
  for (int i = 0; i < 24; ++i) {
    if (!EligibleAt(t)) return t;
    t += kMillisPerHour;
  }
  return std::nullopt;
}

bool CheckEligibility(const DeviceProfile& profile, SimTime now) {
  return profile.availability.EligibleAt(now);
}

bool Attest(const DeviceProfile& profile) { return profile.genuine; }

TaskExecution ExecuteTask(const DeviceProfile& profile, const Plan& plan,
                          const ModelParams& checkpoint,
                          const ExampleStore& store, SimTime now,
                          double error_probability, std::uint64_t seed) {
  TaskExecution result;
  Rng rng(DeriveSeed(seed, profile.device_id, 0x65786563ULL));

  Dataset data = store.Query(plan.device_part.selector, now);
  if (data.empty()) {
    result.outcome = ExecutionOutcome::kNoMatchingExamples;
    result.duration_ms = 1;
    return result;
  }
  result.examples_used = data.size();

  if (rng.Bernoulli(error_probability)) {
    // Computation fails right after the model is loaded.
    result.outcome = ExecutionOutcome::kComputeError;
    result.duration_ms = 10;
    return result;
  }

  const double epochs = plan.device_part.mutate_weights
                            ? static_cast<double>(plan.device_part.epochs)
                            : 1.0;
  double duration = kBaseCostMsPerExampleEpoch *
                    static_cast<double>(data.size()) * epochs /
                    profile.speed_factor;
  SimTime duration_ms = std::max<SimTime>(1, std::llround(duration));

  // Two ways to lose eligibility mid-task: the availability window closes,
  // or the hazard fires (user picks the phone up, network changes, ...).
  std::optional<SimTime> window_end = profile.availability.EligibilityEnd(now);
  SimTime interrupt_at = window_end.has_value()
                             ? *window_end - now
                             : std::numeric_limits<SimTime>::max();
  if (profile.dropout_hazard_per_min > 0.0 &&
      profile.dropout_hazard_per_min < 1.0) {
    double rate_per_ms = -std::log1p(-profile.dropout_hazard_per_min) /
                         static_cast<double>(kMillisPerMinute);
    SimTime hazard_at = static_cast<SimTime>(rng.ExponentialWait(rate_per_ms));
    interrupt_at = std::min(interrupt_at, std::max<SimTime>(1, hazard_at));
  } else if (profile.dropout_hazard_per_min >= 1.0) {
    interrupt_at = 1;
  }

  if (interrupt_at < duration_ms) {
    result.outcome = ExecutionOutcome::kInterrupted;
    result.duration_ms = interrupt_at;
    return result;
  }

  result.outcome = ExecutionOutcome::kSuccess;
  result.duration_ms = duration_ms;

  LossKind loss = ComputationLoss(plan.device_part.computation_id);
  if (plan.device_part.mutate_weights) {
    Hyperparameters hyper{plan.device_part.epochs, plan.device_part.batch_size,
                          plan.device_part.eta};
    double loss_before = Evaluate(loss, checkpoint, data).loss;
    result.update = ClientUpdate(loss, checkpoint, data, hyper,
                                 DeriveSeed(seed, profile.device_id));
    result.metrics["examples"] = static_cast<double>(data.size());
    result.metrics["loss_before"] = loss_before;
  } else {
    EvalResult eval = Evaluate(loss, checkpoint, data);
    result.metrics["examples"] = static_cast<double>(eval.count);
    result.metrics["loss"] = eval.loss;
    // Evaluation plans leave the weights untouched; an empty update carries
    // zero weight so it can never shift the aggregate.
    result.update.delta.clear();
    result.update.weight = 0;
  }
  return result;
}

std::optional<FlJob> TenantQueue::StartNext(SimTime) {
  if (running_.has_value() || pending_.empty()) return std::nullopt;
  running_ = pending_.front();
  pending_.pop_front();
  return running_;
}

void TenantQueue::FinishRunning() { running_.reset(); }

}  // namespace flsim
