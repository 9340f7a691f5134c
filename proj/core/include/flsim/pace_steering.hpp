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

#ifndef FLSIM_PACE_STEERING_HPP_
#define FLSIM_PACE_STEERING_HPP_

#include <array>
#include <cstdint>

#include "flsim/common.hpp"

namespace flsim {

// Hour-of-day availability multipliers. The default curve is a sinusoid with
// its peak at 02:00 local and a 4x peak/trough ratio (devices are more likely
// idle and charging at night).
struct DiurnalCurve {
  std::array<double, 24> multipliers;
};

DiurnalCurve FlatCurve();
// 1 + amplitude * cos(2*pi*(h - peak_hour)/24); ratio = (1+a)/(1-a).
DiurnalCurve SinusoidCurve(double amplitude, int peak_hour);
DiurnalCurve DefaultDiurnalCurve();  // amplitude 0.6, peak 02:00 -> ratio 4

double DiurnalMultiplier(const DiurnalCurve& curve, SimTime t);
double PeakTroughRatio(const DiurnalCurve& curve);

struct PaceSteeringPolicy {
  // Populations below this size get concentrated windows around the next
  // round's target time so check-ins arrive contemporaneously.
  std::uint64_t concentration_threshold = 1000;
  // Large-population spreading period bounds.
  SimTime min_spread_period_ms = 5 * kMillisPerMinute;
  SimTime max_spread_period_ms = kMillisPerDay;
  // Width of a suggested window.
  SimTime window_width_ms = 30 * kMillisPerSecond;
  // Minimum lead before a window may open.
  SimTime min_lead_ms = kMillisPerSecond;
};

struct PopulationStats {
  std::uint64_t estimated_active_devices = 0;
  double required_checkin_rate = 0.0;  // devices per second across tasks
  SimTime next_round_target_time = 0;
  DiurnalCurve diurnal_curve = DefaultDiurnalCurve();
};

struct ReconnectWindow {
  SimTime start = 0;
  SimTime end = 0;

  bool Contains(SimTime t) const { return t >= start && t < end; }
};

// Stateless window suggestion: a pure function of (stats, now, seed), so no
// per-device server state is needed. Small populations cluster around the
// next round target; large populations spread start offsets uniformly over a
// period sized so the expected arrival rate matches required_checkin_rate,
// with the per-device delay stretched by the diurnal multiplier at the
// window's hour (i.e. the per-hour arrival rate is scaled by its inverse).
ReconnectWindow SuggestWindow(const PopulationStats& stats,
                              const PaceSteeringPolicy& policy, SimTime now,
                              std::uint64_t device_seed);

// Spreading period for the large-population regime (exposed for tests).
SimTime SpreadPeriod(const PopulationStats& stats,
                     const PaceSteeringPolicy& policy);

}  // namespace flsim

#endif  // FLSIM_PACE_STEERING_HPP_
