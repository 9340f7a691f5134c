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

#include "flsim/pace_steering.hpp"

#include <algorithm>
#include <cmath>

#include "flsim/rng.hpp"

namespace flsim {

DiurnalCurve FlatCurve() {
  DiurnalCurve c;
  c.multipliers.fill(1.0);
  return c;
}

DiurnalCurve SinusoidCurve(double amplitude, int peak_hour) {
  DiurnalCurve c;
  for (int h = 0; h < 24; ++h) {
    c.multipliers[h] =
        1.0 + amplitude * std::cos(2.0 * 3.14159265358979323846 *
                                   static_cast<double>(h - peak_hour) / 24.0);
  }
  return c;
}

DiurnalCurve DefaultDiurnalCurve() { return SinusoidCurve(0.6, 2); }

double DiurnalMultiplier(const DiurnalCurve& curve, SimTime t) {
  return curve.multipliers[static_cast<std::size_t>(HourOfDay(t))];
}

double PeakTroughRatio(const DiurnalCurve& curve) {
  auto [lo, hi] =
      std::minmax_element(curve.multipliers.begin(), curve.multipliers.end());
  return *hi / *lo;
}

SimTime SpreadPeriod(const PopulationStats& stats,
                     const PaceSteeringPolicy& policy) {
  if (stats.required_checkin_rate <= 0.0) return policy.max_spread_period_ms;
  double period_ms = static_cast<double>(stats.estimated_active_devices) /
                     stats.required_checkin_rate * 1000.0;
  period_ms = std::clamp(period_ms,
                         static_cast<double>(policy.min_spread_period_ms),
                         static_cast<double>(policy.max_spread_period_ms));
  return static_cast<SimTime>(period_ms);
}

ReconnectWindow SuggestWindow(const PopulationStats& stats,
                              const PaceSteeringPolicy& policy, SimTime now,
                              std::uint64_t device_seed) {
  Rng rng(DeriveSeed(device_seed, static_cast<std::uint64_t>(now)));
  ReconnectWindow w;

  if (stats.estimated_active_devices < policy.concentration_threshold) {
    // Small population: every window brackets the next round target so the
    // rejected devices come back together.
    SimTime target = stats.next_round_target_time;
    SimTime half = policy.window_width_ms / 2;
    if (target < now + policy.min_lead_ms + half) {
      // Stale target (estimates may lag); fall back to "soon".
      target = now + policy.min_lead_ms + half;
    }
    w.start = target - half;
    w.end = target + half;
    return w;
  }

  // Large population: offsets spread over [period/2, 3*period/2) so the
  // mean reconnect delay is one full period and the sustained per-device
  // rate matches required_checkin_rate, with per-hour density proportional
  // to the inverse diurnal multiplier (suggestions thinned at peak hours).
  // Sampled by inverse CDF over hour-aligned slices.
  SimTime period = SpreadPeriod(stats, policy);
  SimTime begin = now + policy.min_lead_ms + period / 2;
  SimTime end = begin + period;

  double total_weight = 0.0;
  for (SimTime s = begin; s < end;) {
    SimTime slice_end =
        std::min(end, (s / kMillisPerHour + 1) * kMillisPerHour);
    total_weight += static_cast<double>(slice_end - s) /
                    DiurnalMultiplier(stats.diurnal_curve, s);
    s = slice_end;
  }
  double target = rng.NextDouble() * total_weight;
  SimTime start = begin;
  for (SimTime s = begin; s < end;) {
    SimTime slice_end =
        std::min(end, (s / kMillisPerHour + 1) * kMillisPerHour);
    double mult = DiurnalMultiplier(stats.diurnal_curve, s);
    double weight = static_cast<double>(slice_end - s) / mult;
    if (target <= weight || slice_end >= end) {
      start = s + static_cast<SimTime>(target * mult);
      break;
    }
    target -= weight;
    s = slice_end;
  }
  w.start = std::min(start, end - 1);
  w.end = w.start + policy.window_width_ms;
  return w;
}

}  // namespace flsim
