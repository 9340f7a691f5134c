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

#ifndef FLSIM_PROTOCOL_HPP_
#define FLSIM_PROTOCOL_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "flsim/common.hpp"
#include "flsim/fedavg.hpp"
#include "flsim/secure_agg.hpp"

namespace flsim {

// ---------------------------------------------------------------------------
// Wire messages. Frames are length-prefixed binary records:
//   u32 payload length (LE) | u8 tag | payload
// Tag table:
//   0x01 CheckIn          device -> server
//   0x02 RejectWithWindow server -> device; also the post-report "done,
//                         reconnect in this window" instruction
//   0x03 Configure        server -> device (plan bytes + checkpoint)
//   0x04 Report           device -> server (plain update + metrics)
//   0x05 Abort            either direction (reason string)
//   0x06 AdvertiseKeys    device -> server (SecAgg prepare, commitments)
//   0x07 ShareBundle      server -> device (SecAgg prepare, shares)
//   0x08 MaskedInput      device -> server (SecAgg commit)
//   0x09 RevealShares     device -> server (SecAgg finalize)
// ---------------------------------------------------------------------------

struct CheckInMsg {
  std::string population;
  DeviceId device_id = 0;
  int runtime_version = 0;
};

struct RejectWithWindowMsg {
  SimTime window_start = 0;
  SimTime window_end = 0;
};

struct ConfigureMsg {
  RoundId round_id = 0;
  std::string plan_bytes;            // serialized plan (opaque at this layer)
  std::vector<double> checkpoint;    // global model parameters
};

using MetricMap = std::map<std::string, double>;

struct ReportMsg {
  RoundId round_id = 0;
  ModelUpdate update;
  MetricMap metrics;
};

struct AbortMsg {
  RoundId round_id = 0;
  std::string reason;
};

struct AdvertiseKeysMsg {
  RoundId round_id = 0;
  std::uint32_t group_id = 0;
  std::uint32_t member_index = 0;
  std::vector<std::uint64_t> commitments;
};

struct ShareBundleMsg {
  RoundId round_id = 0;
  std::uint32_t group_id = 0;
  MaskShareBundle bundle;
};

struct MaskedInputMsg {
  RoundId round_id = 0;
  std::uint32_t group_id = 0;
  std::uint32_t member_index = 0;
  FixedVector masked;
  MetricMap metrics;
};

struct RevealSharesMsg {
  RoundId round_id = 0;
  std::uint32_t group_id = 0;
  std::uint32_t member_index = 0;
  std::vector<KeyShare> shares;
};

using Message =
    std::variant<CheckInMsg, RejectWithWindowMsg, ConfigureMsg, ReportMsg,
                 AbortMsg, AdvertiseKeysMsg, ShareBundleMsg, MaskedInputMsg,
                 RevealSharesMsg>;

std::vector<std::uint8_t> EncodeFrame(const Message& m);
Message DecodeFrame(std::span<const std::uint8_t> frame);
std::size_t FrameSize(const Message& m);

// ---------------------------------------------------------------------------
// Round parameters and the server-side round state machine.
// ---------------------------------------------------------------------------

struct RoundParams {
  std::uint32_t goal_count = 0;
  double overselect_factor = 1.3;
  double min_fraction = 0.8;
  SimTime selection_timeout_ms = 60 * kMillisPerSecond;
  SimTime report_window_ms = 300 * kMillisPerSecond;
  double dropout_tolerance = 0.1;
};

void ValidateRoundParams(const RoundParams& p);  // throws InvalidConfigError

// Number of devices configured per round: ceil(goal * overselect_factor).
std::uint32_t ConfiguredTarget(const RoundParams& p);
// Minimum connected devices to start on timeout: ceil(goal * min_fraction).
std::uint32_t MinimumToStart(const RoundParams& p);

enum class RoundPhase {
  kSelection,
  kConfiguration,
  kReporting,
  kCompleted,
  kAbandoned,
};

const char* RoundPhaseName(RoundPhase p);

struct RoundState {
  RoundId round_id = 0;
  RoundPhase phase = RoundPhase::kSelection;
  std::set<DeviceId> participants;
  std::set<DeviceId> reported;
  SimTime selection_start = 0;
  SimTime configuration_start = 0;
  SimTime reporting_start = 0;
  SimTime terminal_time = 0;
};

RoundState MakeRound(RoundId id, SimTime now);

// Selection phase: moves to Configuration once `connected` reaches the
// configured target, or on timeout with at least the minimum; abandons on
// timeout below the minimum.
void SelectionTick(RoundState& state, std::uint32_t connected,
                   const RoundParams& params, SimTime now);

// Marks the Configuration -> Reporting handoff once plans are dispatched.
void BeginReporting(RoundState& state, SimTime now);

// Outcome of one report arrival against the round state.
enum class ReportOutcome {
  kCounted,         // absorbed into the aggregate
  kLate,            // round already closed; result rejected ('#')
  kNotParticipant,  // unknown device (ignored)
};

ReportOutcome RecordReport(RoundState& state, DeviceId device, SimTime now);

// Reporting phase: completes once the goal count has reported; abandons when
// the window elapses short of the goal. Stragglers past the goal are ignored.
void ReportingTick(RoundState& state, const RoundParams& params, SimTime now);

bool IsTerminal(RoundPhase p);

// ---------------------------------------------------------------------------
// Device-side session state machine. Each transition emits at most one
// session symbol (see analytics); the only silent transition is the
// rejection of a bare check-in, whose session stays "-".
// ---------------------------------------------------------------------------

enum class SessionPhase {
  kNew,  // before the first check-in
  kCheckedIn,
  kPlanDownloaded,
  kTraining,
  kTrained,
  kUploading,
  kUploaded,
  kRejected,
  kInterrupted,
  kErrored,
};

enum class SessionInput {
  kCheckIn,
  kRejectedByServer,
  kPlanReceived,
  kTrainingStarted,
  kTrainingCompleted,
  kUploadStarted,
  kUploadAccepted,
  kUploadRejected,
  kEligibilityLost,
  kError,
};

struct SessionStep {
  SessionPhase next = SessionPhase::kNew;
  std::optional<char> symbol;  // session-legend symbol for the new state
};

// Deterministic transition; throws IllegalTransitionError for inputs that are
// invalid in the current phase (programming error, not a protocol outcome).
SessionStep DeviceSessionStep(SessionPhase s, SessionInput input);

bool IsTerminalSession(SessionPhase p);

}  // namespace flsim

#endif  // FLSIM_PROTOCOL_HPP_
