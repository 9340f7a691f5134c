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

#include "flsim/protocol.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "flsim/errors.hpp"

namespace flsim {
namespace {

constexpr std::uint8_t kTagCheckIn = 0x01;
constexpr std::uint8_t kTagRejectWithWindow = 0x02;
constexpr std::uint8_t kTagConfigure = 0x03;
constexpr std::uint8_t kTagReport = 0x04;
constexpr std::uint8_t kTagAbort = 0x05;
constexpr std::uint8_t kTagAdvertiseKeys = 0x06;
constexpr std::uint8_t kTagShareBundle = 0x07;
constexpr std::uint8_t kTagMaskedInput = 0x08;
constexpr std::uint8_t kTagRevealShares = 0x09;

class Writer {
 public:
  void U8(std::uint8_t v) { buf_.push_back(v); }
  void U32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back((v >> (8 * i)) & 0xff);
  }
  void U64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back((v >> (8 * i)) & 0xff);
  }
  void I64(std::int64_t v) { U64(static_cast<std::uint64_t>(v)); }
  void F64(double v) { U64(std::bit_cast<std::uint64_t>(v)); }
  void Str(const std::string& s) {
    U32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void VecF64(const std::vector<double>& v) {
    U32(static_cast<std::uint32_t>(v.size()));
    for (double d : v) F64(d);
  }
  void VecU64(const std::vector<std::uint64_t>& v) {
    U32(static_cast<std::uint32_t>(v.size()));
    for (std::uint64_t u : v) U64(u);
  }
  void Metrics(const MetricMap& m) {
    U32(static_cast<std::uint32_t>(m.size()));
    for (const auto& [k, v] : m) {
      Str(k);
      F64(v);
    }
  }
  std::vector<std::uint8_t> Take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t U8() {
    Need(1);
    return data_[pos_++];
  }
  std::uint32_t U32() {
    Need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t U64() {
    Need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t I64() { return static_cast<std::int64_t>(U64()); }
  double F64() { return std::bit_cast<double>(U64()); }
  std::string Str() {
    std::uint32_t n = U32();
    Need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> VecF64() {
    std::uint32_t n = U32();
    std::vector<double> v(n);
    for (auto& d : v) d = F64();
    return v;
  }
  std::vector<std::uint64_t> VecU64() {
    std::uint32_t n = U32();
    std::vector<std::uint64_t> v(n);
    for (auto& u : v) u = U64();
    return v;
  }
  MetricMap Metrics() {
    std::uint32_t n = U32();
    MetricMap m;
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string k = Str();
      m[k] = F64();
    }
    return m;
  }
  bool AtEnd() const { return pos_ == data_.size(); }

 private:
  void Need(std::size_t n) {
    if (pos_ + n > data_.size()) throw DecodeError("frame truncated");
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void WriteBody(Writer& w, const CheckInMsg& m) {
  w.Str(m.population);
  w.U64(m.device_id);
  w.U32(static_cast<std::uint32_t>(m.runtime_version));
}
void WriteBody(Writer& w, const RejectWithWindowMsg& m) {
  w.I64(m.window_start);
  w.I64(m.window_end);
}
void WriteBody(Writer& w, const ConfigureMsg& m) {
  w.U64(m.round_id);
  w.Str(m.plan_bytes);
  w.VecF64(m.checkpoint);
}
void WriteBody(Writer& w, const ReportMsg& m) {
  w.U64(m.round_id);
  w.VecF64(m.update.delta);
  w.U64(m.update.weight);
  w.Metrics(m.metrics);
}
void WriteBody(Writer& w, const AbortMsg& m) {
  w.U64(m.round_id);
  w.Str(m.reason);
}
void WriteBody(Writer& w, const AdvertiseKeysMsg& m) {
  w.U64(m.round_id);
  w.U32(m.group_id);
  w.U32(m.member_index);
  w.VecU64(m.commitments);
}
void WriteBody(Writer& w, const ShareBundleMsg& m) {
  w.U64(m.round_id);
  w.U32(m.group_id);
  w.U32(m.bundle.member_index);
  w.U64(m.bundle.session_nonce);
  w.VecU64(m.bundle.pair_seeds);
  w.U32(static_cast<std::uint32_t>(m.bundle.incoming_shares.size()));
  for (const KeyShare& s : m.bundle.incoming_shares) {
    w.U32(s.owner);
    w.U64(s.x);
    w.U64(s.y);
  }
}
void WriteBody(Writer& w, const MaskedInputMsg& m) {
  w.U64(m.round_id);
  w.U32(m.group_id);
  w.U32(m.member_index);
  w.U64(m.masked.scale);
  w.U64(static_cast<std::uint64_t>(m.masked.dim));
  w.VecU64(m.masked.entries);
  w.Metrics(m.metrics);
}
void WriteBody(Writer& w, const RevealSharesMsg& m) {
  w.U64(m.round_id);
  w.U32(m.group_id);
  w.U32(m.member_index);
  w.U32(static_cast<std::uint32_t>(m.shares.size()));
  for (const KeyShare& s : m.shares) {
    w.U32(s.owner);
    w.U64(s.x);
    w.U64(s.y);
  }
}

std::uint8_t TagOf(const Message& m) {
  struct Visitor {
    std::uint8_t operator()(const CheckInMsg&) { return kTagCheckIn; }
    std::uint8_t operator()(const RejectWithWindowMsg&) {
      return kTagRejectWithWindow;
    }
    std::uint8_t operator()(const ConfigureMsg&) { return kTagConfigure; }
    std::uint8_t operator()(const ReportMsg&) { return kTagReport; }
    std::uint8_t operator()(const AbortMsg&) { return kTagAbort; }
    std::uint8_t operator()(const AdvertiseKeysMsg&) {
      return kTagAdvertiseKeys;
    }
    std::uint8_t operator()(const ShareBundleMsg&) { return kTagShareBundle; }
    std::uint8_t operator()(const MaskedInputMsg&) { return kTagMaskedInput; }
    std::uint8_t operator()(const RevealSharesMsg&) { return kTagRevealShares; }
  };
  return std::visit(Visitor{}, m);
}

}  // namespace

std::vector<std::uint8_t> EncodeFrame(const Message& m) {
  Writer body;
  std::visit([&body](const auto& msg) { WriteBody(body, msg); }, m);
  std::vector<std::uint8_t> payload = body.Take();

  Writer out;
  out.U32(static_cast<std::uint32_t>(payload.size() + 1));  // tag + payload
  out.U8(TagOf(m));
  std::vector<std::uint8_t> frame = out.Take();
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

Message DecodeFrame(std::span<const std::uint8_t> frame) {
  Reader header(frame);
  std::uint32_t length = header.U32();
  if (frame.size() != length + 4u) {
    throw DecodeError("frame length prefix does not match buffer");
  }
  std::uint8_t tag = header.U8();
  Reader r(frame.subspan(5));

  switch (tag) {
    case kTagCheckIn: {
      CheckInMsg m;
      m.population = r.Str();
      m.device_id = r.U64();
      m.runtime_version = static_cast<int>(r.U32());
      return m;
    }
    case kTagRejectWithWindow: {
      RejectWithWindowMsg m;
      m.window_start = r.I64();
      m.window_end = r.I64();
      return m;
    }
    case kTagConfigure: {
      ConfigureMsg m;
      m.round_id = r.U64();
      m.plan_bytes = r.Str();
      m.checkpoint = r.VecF64();
      return m;
    }
    case kTagReport: {
      ReportMsg m;
      m.round_id = r.U64();
      m.update.delta = r.VecF64();
      m.update.weight = r.U64();
      m.metrics = r.Metrics();
      return m;
    }
    case kTagAbort: {
      AbortMsg m;
      m.round_id = r.U64();
      m.reason = r.Str();
      return m;
    }
    case kTagAdvertiseKeys: {
      AdvertiseKeysMsg m;
      m.round_id = r.U64();
      m.group_id = r.U32();
      m.member_index = r.U32();
      m.commitments = r.VecU64();
      return m;
    }
    case kTagShareBundle: {
      ShareBundleMsg m;
      m.round_id = r.U64();
      m.group_id = r.U32();
      m.bundle.member_index = r.U32();
      m.bundle.session_nonce = r.U64();
      m.bundle.pair_seeds = r.VecU64();
      std::uint32_t n = r.U32();
      m.bundle.incoming_shares.resize(n);
      for (auto& s : m.bundle.incoming_shares) {
        s.owner = r.U32();
        s.x = r.U64();
        s.y = r.U64();
      }
      return m;
    }
    case kTagMaskedInput: {
      MaskedInputMsg m;
      m.round_id = r.U64();
      m.group_id = r.U32();
      m.member_index = r.U32();
      m.masked.scale = r.U64();
      m.masked.dim = static_cast<std::size_t>(r.U64());
      m.masked.entries = r.VecU64();
      m.metrics = r.Metrics();
      return m;
    }
    case kTagRevealShares: {
      RevealSharesMsg m;
      m.round_id = r.U64();
      m.group_id = r.U32();
      m.member_index = r.U32();
      std::uint32_t n = r.U32();
      m.shares.resize(n);
      for (auto& s : m.shares) {
        s.owner = r.U32();
        s.x = r.U64();
        s.y = r.U64();
      }
      return m;
    }
    default:
      throw DecodeError("unknown frame tag " + std::to_string(tag));
  }
}

std::size_t FrameSize(const Message& m) { return EncodeFrame(m).size(); }

void ValidateRoundParams(const RoundParams& p) {
  if (p.goal_count < 1) throw InvalidConfigError("goal_count must be >= 1");
  if (p.overselect_factor < 1.0) {
    throw InvalidConfigError("overselect_factor must be >= 1");
  }
  if (!(p.min_fraction > 0.0 && p.min_fraction <= 1.0)) {
    throw InvalidConfigError("min_fraction must be in (0, 1]");
  }
  if (p.min_fraction * p.goal_count < 1.0) {
    throw InvalidConfigError("min_fraction * goal_count must be >= 1");
  }
  if (p.selection_timeout_ms <= 0 || p.report_window_ms <= 0) {
    throw InvalidConfigError("phase windows must be positive");
  }
  if (!(p.dropout_tolerance >= 0.0 && p.dropout_tolerance < 1.0)) {
    throw InvalidConfigError("dropout_tolerance must be in [0, 1)");
  }
}

std::uint32_t ConfiguredTarget(const RoundParams& p) {
  return static_cast<std::uint32_t>(
      std::ceil(p.overselect_factor * static_cast<double>(p.goal_count)));
}

std::uint32_t MinimumToStart(const RoundParams& p) {
  return static_cast<std::uint32_t>(
      std::ceil(p.min_fraction * static_cast<double>(p.goal_count)));
}

const char* RoundPhaseName(RoundPhase p) {
  switch (p) {
    case RoundPhase::kSelection:
      return "selection";
    case RoundPhase::kConfiguration:
      return "configuration";
    case RoundPhase::kReporting:
      return "reporting";
    case RoundPhase::kCompleted:
      return "completed";
    case RoundPhase::kAbandoned:
      return "abandoned";
  }
  return "?";
}

RoundState MakeRound(RoundId id, SimTime now) {
  RoundState s;
  s.round_id = id;
  s.phase = RoundPhase::kSelection;
  s.selection_start = now;
  return s;
}

void SelectionTick(RoundState& state, std::uint32_t connected,
                   const RoundParams& params, SimTime now) {
  if (state.phase != RoundPhase::kSelection) return;
  const SimTime deadline = state.selection_start + params.selection_timeout_ms;
  if (connected >= ConfiguredTarget(params)) {
    state.phase = RoundPhase::kConfiguration;
    state.configuration_start = now;
    return;
  }
  if (now >= deadline) {
    if (connected >= MinimumToStart(params)) {
      state.phase = RoundPhase::kConfiguration;
      state.configuration_start = now;
    } else {
      state.phase = RoundPhase::kAbandoned;
      state.terminal_time = now;
    }
  }
}

void BeginReporting(RoundState& state, SimTime now) {
  if (state.phase != RoundPhase::kConfiguration) {
    throw IllegalTransitionError("BeginReporting outside Configuration");
  }
  state.phase = RoundPhase::kReporting;
  state.reporting_start = now;
}

ReportOutcome RecordReport(RoundState& state, DeviceId device, SimTime) {
  if (!state.participants.contains(device)) {
    return ReportOutcome::kNotParticipant;
  }
  if (state.phase != RoundPhase::kReporting) {
    return ReportOutcome::kLate;
  }
  state.reported.insert(device);
  return ReportOutcome::kCounted;
}

void ReportingTick(RoundState& state, const RoundParams& params, SimTime now) {
  if (state.phase != RoundPhase::kReporting) return;
  if (state.reported.size() >= params.goal_count) {
    state.phase = RoundPhase::kCompleted;
    state.terminal_time = now;
    return;
  }
  if (now >= state.reporting_start + params.report_window_ms) {
    state.phase = RoundPhase::kAbandoned;
    state.terminal_time = now;
  }
}

bool IsTerminal(RoundPhase p) {
  return p == RoundPhase::kCompleted || p == RoundPhase::kAbandoned;
}

SessionStep DeviceSessionStep(SessionPhase s, SessionInput input) {
  auto illegal = [&]() -> SessionStep {
    throw IllegalTransitionError("bad session input " +
                                 std::to_string(static_cast<int>(input)) +
                                 " in phase " +
                                 std::to_string(static_cast<int>(s)));
  };
  switch (s) {
    case SessionPhase::kNew:
      if (input == SessionInput::kCheckIn) {
        return {SessionPhase::kCheckedIn, '-'};
      }
      return illegal();
    case SessionPhase::kCheckedIn:
      switch (input) {
        case SessionInput::kRejectedByServer:
          // Early rejection: the session shape stays a bare "-".
          return {SessionPhase::kRejected, std::nullopt};
        case SessionInput::kPlanReceived:
          return {SessionPhase::kPlanDownloaded, 'v'};
        case SessionInput::kEligibilityLost:
          return {SessionPhase::kInterrupted, '!'};
        case SessionInput::kError:
          return {SessionPhase::kErrored, '*'};
        default:
          return illegal();
      }
    case SessionPhase::kPlanDownloaded:
      switch (input) {
        case SessionInput::kTrainingStarted:
          return {SessionPhase::kTraining, '['};
        case SessionInput::kEligibilityLost:
          return {SessionPhase::kInterrupted, '!'};
        case SessionInput::kError:
          return {SessionPhase::kErrored, '*'};
        default:
          return illegal();
      }
    case SessionPhase::kTraining:
      switch (input) {
        case SessionInput::kTrainingCompleted:
          return {SessionPhase::kTrained, ']'};
        case SessionInput::kEligibilityLost:
          return {SessionPhase::kInterrupted, '!'};
        case SessionInput::kError:
          return {SessionPhase::kErrored, '*'};
        default:
          return illegal();
      }
    case SessionPhase::kTrained:
      switch (input) {
        case SessionInput::kUploadStarted:
          return {SessionPhase::kUploading, '+'};
        case SessionInput::kEligibilityLost:
          return {SessionPhase::kInterrupted, '!'};
        case SessionInput::kError:
          return {SessionPhase::kErrored, '*'};
        default:
          return illegal();
      }
    case SessionPhase::kUploading:
      switch (input) {
        case SessionInput::kUploadAccepted:
          return {SessionPhase::kUploaded, '^'};
        case SessionInput::kUploadRejected:
          return {SessionPhase::kRejected, '#'};
        case SessionInput::kEligibilityLost:
          return {SessionPhase::kInterrupted, '!'};
        case SessionInput::kError:
          return {SessionPhase::kErrored, '*'};
        default:
          return illegal();
      }
    case SessionPhase::kUploaded:
    case SessionPhase::kRejected:
    case SessionPhase::kInterrupted:
    case SessionPhase::kErrored:
      return illegal();  // terminal
  }
  return illegal();
}

bool IsTerminalSession(SessionPhase p) {
  return p == SessionPhase::kUploaded || p == SessionPhase::kRejected ||
         p == SessionPhase::kInterrupted || p == SessionPhase::kErrored;
}

}  // namespace flsim
