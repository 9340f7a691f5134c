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

#include <map>

#include "flsim/pace_steering.hpp"
#include "flsim/rng.hpp"

using namespace flsim;

TEST_CASE("diurnal multiplier ratios") {
  CHECK(PeakTroughRatio(DefaultDiurnalCurve()) == doctest::Approx(4.0));
  CHECK(PeakTroughRatio(FlatCurve()) == 1.0);
  for (int h = 0; h < 24; ++h) {
    CHECK(DiurnalMultiplier(FlatCurve(), h * kMillisPerHour) == 1.0);
  }
  // Closed form at the extremes: (1 + 0.6) / (1 - 0.6) = 4.
  DiurnalCurve c = SinusoidCurve(0.6, 2);
  CHECK(DiurnalMultiplier(c, 2 * kMillisPerHour) == doctest::Approx(1.6));
  CHECK(DiurnalMultiplier(c, 14 * kMillisPerHour) == doctest::Approx(0.4));
  CHECK(DiurnalMultiplier(c, 2 * kMillisPerHour) /
            DiurnalMultiplier(c, 14 * kMillisPerHour) ==
        doctest::Approx(4.0));
  // 24 h periodicity.
  CHECK(DiurnalMultiplier(c, 2 * kMillisPerHour) ==
        DiurnalMultiplier(c, 2 * kMillisPerHour + 3 * kMillisPerDay));
}

TEST_CASE("small populations concentrate around the round target") {
  PaceSteeringPolicy policy;
  PopulationStats stats;
  stats.estimated_active_devices = 50;
  stats.required_checkin_rate = 1.0;
  stats.next_round_target_time = 500000;
  SimTime now = 100000;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    ReconnectWindow w = SuggestWindow(stats, policy, now, seed);
    CHECK(w.start < w.end);
    CHECK(w.start >= now);
    CHECK(w.Contains(stats.next_round_target_time));
  }
  // A stale target falls back to "soon" but stays a valid window.
  stats.next_round_target_time = now - 1000;
  ReconnectWindow w = SuggestWindow(stats, policy, now, 9);
  CHECK(w.start >= now);
  CHECK(w.start < w.end);
}

TEST_CASE("suggestions are stateless and deterministic") {
  PaceSteeringPolicy policy;
  PopulationStats stats;
  stats.estimated_active_devices = 100000;
  stats.required_checkin_rate = 40.0;
  stats.next_round_target_time = 90000;
  ReconnectWindow a = SuggestWindow(stats, policy, 1234, 42);
  ReconnectWindow b = SuggestWindow(stats, policy, 1234, 42);
  CHECK(a.start == b.start);
  CHECK(a.end == b.end);
  ReconnectWindow c = SuggestWindow(stats, policy, 1234, 43);
  CHECK((c.start != a.start || c.end != a.end));
}

TEST_CASE("spread period follows active/rate inside its clamp") {
  PaceSteeringPolicy policy;
  PopulationStats stats;
  stats.estimated_active_devices = 10000;
  stats.required_checkin_rate = 10.0;
  CHECK(SpreadPeriod(stats, policy) == 1000 * kMillisPerSecond);
  stats.estimated_active_devices = 100;
  CHECK(SpreadPeriod(stats, policy) == policy.min_spread_period_ms);
  stats.required_checkin_rate = 1e-9;
  CHECK(SpreadPeriod(stats, policy) == policy.max_spread_period_ms);
}

TEST_CASE("a million devices spread flat across a simulated day") {
  // Event-driven oracle: each device lands at a point in its suggested
  // window, gated by its availability at that hour (the diurnal curve both
  // thins peak-hour suggestions and governs who is awake, so realized
  // arrivals flatten).
  PaceSteeringPolicy policy;
  policy.max_spread_period_ms = 12 * kMillisPerHour;
  PopulationStats stats;
  stats.estimated_active_devices = 1000000;
  stats.required_checkin_rate = 400.0 / 300.0;  // 400 per 5 minutes
  stats.next_round_target_time = 0;
  stats.diurnal_curve = DefaultDiurnalCurve();
  SimTime period = SpreadPeriod(stats, policy);
  REQUIRE(period == 12 * kMillisPerHour);

  const SimTime bucket = 10 * kMillisPerSecond;
  const SimTime span_begin = policy.min_lead_ms + period / 2;
  const SimTime span_end = span_begin + period;
  std::map<SimTime, std::uint64_t> buckets;
  std::uint64_t landed = 0;
  Rng arrival_rng(4711);
  for (std::uint64_t d = 0; d < 1000000; ++d) {
    ReconnectWindow w = SuggestWindow(stats, policy, 0, DeriveSeed(17, d));
    SimTime at = w.start + static_cast<SimTime>(arrival_rng.NextBelow(
                               static_cast<std::uint64_t>(w.end - w.start)));
    CHECK(w.start >= span_begin);
    if (at >= span_end) continue;
    double avail = 0.35 * DiurnalMultiplier(stats.diurnal_curve, at);
    if (!arrival_rng.Bernoulli(avail)) continue;
    buckets[(at / bucket) * bucket] += 1;
    ++landed;
  }
  REQUIRE(landed > 100000);
  std::uint64_t peak = 0;
  for (const auto& [start, count] : buckets) peak = std::max(peak, count);
  double mean = static_cast<double>(landed) /
                static_cast<double>((span_end - span_begin) / bucket);
  CHECK(static_cast<double>(peak) <= 2.0 * mean);
}

TEST_CASE("steering defuses a thundering herd; disabling one recreates it") {
  const std::uint64_t n = 20000;
  const SimTime bucket = 10 * kMillisPerSecond;
  PaceSteeringPolicy policy;
  PopulationStats stats;
  stats.estimated_active_devices = n;
  stats.required_checkin_rate = 20.0;
  stats.diurnal_curve = FlatCurve();
  SimTime period = SpreadPeriod(stats, policy);

  std::map<SimTime, std::uint64_t> steered;
  std::map<SimTime, std::uint64_t> herd;
  Rng rng(31);
  for (std::uint64_t d = 0; d < n; ++d) {
    ReconnectWindow w = SuggestWindow(stats, policy, 1000, DeriveSeed(3, d));
    SimTime at = w.start + static_cast<SimTime>(
                               rng.NextBelow(static_cast<std::uint64_t>(
                                   w.end - w.start)));
    steered[(at / bucket) * bucket] += 1;
    // Steering disabled: every device retries immediately.
    SimTime naive = 1000 + static_cast<SimTime>(rng.NextBelow(1000));
    herd[(naive / bucket) * bucket] += 1;
  }
  std::uint64_t steered_peak = 0;
  for (const auto& [t, c] : steered) steered_peak = std::max(steered_peak, c);
  std::uint64_t herd_peak = 0;
  for (const auto& [t, c] : herd) herd_peak = std::max(herd_peak, c);

  double flat_expectation = static_cast<double>(n) *
                            static_cast<double>(bucket) /
                            static_cast<double>(period);
  CHECK(static_cast<double>(steered_peak) < 3.0 * flat_expectation);
  CHECK(herd_peak >= n * 9 / 10);
}

TEST_CASE("sustained arrivals stay at the required rate, not more") {
  // Renewal oracle: devices cycle (arrive, get re-steered, arrive again);
  // the steady-state aggregate rate must track required_checkin_rate.
  const std::uint64_t n = 2000;
  PaceSteeringPolicy policy;
  PopulationStats stats;
  stats.estimated_active_devices = n;
  stats.required_checkin_rate = 4.0;
  stats.diurnal_curve = FlatCurve();
  SimTime period = SpreadPeriod(stats, policy);  // n / rate = 500 s

  Rng rng(8);
  SimTime measure_begin = 5 * period;
  SimTime measure_end = 15 * period;
  std::uint64_t within = 0;
  for (std::uint64_t d = 0; d < n; ++d) {
    SimTime t = 0;
    for (int hops = 0; hops < 40 && t < measure_end; ++hops) {
      ReconnectWindow w =
          SuggestWindow(stats, policy, t, DeriveSeed(5, d, hops));
      t = w.start + static_cast<SimTime>(rng.NextBelow(
                        static_cast<std::uint64_t>(w.end - w.start)));
      if (t >= measure_begin && t < measure_end) ++within;
    }
  }
  double arrivals_per_second =
      static_cast<double>(within) /
      (static_cast<double>(measure_end - measure_begin) / kMillisPerSecond);
  CHECK(arrivals_per_second <= 1.2 * stats.required_checkin_rate);
  CHECK(arrivals_per_second >= 0.8 * stats.required_checkin_rate);
}
