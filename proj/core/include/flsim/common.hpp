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

#ifndef FLSIM_COMMON_HPP_
#define FLSIM_COMMON_HPP_

#include <cstdint>
#include <string>

namespace flsim {

// All protocol and engine logic runs on a simulated clock; nothing in the
// library reads the wall clock. Times are milliseconds since simulation start.
using SimTime = std::int64_t;

using DeviceId = std::uint64_t;
using ActorId = std::uint64_t;
using RoundId = std::uint64_t;

inline constexpr SimTime kMillisPerSecond = 1000;
inline constexpr SimTime kMillisPerMinute = 60 * kMillisPerSecond;
inline constexpr SimTime kMillisPerHour = 60 * kMillisPerMinute;
inline constexpr SimTime kMillisPerDay = 24 * kMillisPerHour;

// Simulation time zero is local midnight.
inline int HourOfDay(SimTime t) {
  SimTime of_day = t % kMillisPerDay;
  if (of_day < 0) of_day += kMillisPerDay;
  return static_cast<int>(of_day / kMillisPerHour);
}

// Sentinel round id for events not attributable to a round (e.g. a check-in
// that was rejected before selection).
inline constexpr RoundId kNoRound = 0;

}  // namespace flsim

#endif  // FLSIM_COMMON_HPP_
