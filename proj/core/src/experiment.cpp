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

#include "flsim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "flsim/engine.hpp"
#include "flsim/errors.hpp"
#include "flsim/rng.hpp"
#include "flsim/secure_agg.hpp"

namespace flsim {
namespace {

using nlohmann::json;

constexpr SimTime kArrivalBucketMs = 10 * kMillisPerSecond;
constexpr SimTime kPlanLoadDelayMs = 10;
constexpr SimTime kRevealDelayMs = kMillisPerSecond;

FleetSpec FleetFromJson(const json& j) {
  FleetSpec f;
  f.device_count = j.value("device_count", f.device_count);
  if (j.contains("version_mix")) {
    f.version_mix.clear();
    for (const auto& [k, v] : j.at("version_mix").items()) {
      f.version_mix[std::stoi(k)] = v.get<double>();
    }
  }
  f.genuine_fraction = j.value("genuine_fraction", f.genuine_fraction);
  f.dropout_hazard_per_min =
      j.value("dropout_hazard_per_min", f.dropout_hazard_per_min);
  f.speed_lognormal_sigma =
      j.value("speed_lognormal_sigma", f.speed_lognormal_sigma);
  f.schedule = j.value("schedule", f.schedule);
  f.base_eligibility = j.value("base_eligibility", f.base_eligibility);
  f.diurnal_amplitude = j.value("diurnal_amplitude", f.diurnal_amplitude);
  f.diurnal_peak_hour = j.value("diurnal_peak_hour", f.diurnal_peak_hour);
  f.store_capacity = j.value("store_capacity", f.store_capacity);
  f.store_expiration_ms = j.value("store_expiration_ms", f.store_expiration_ms);
  f.checkin_jitter_ms = j.value("checkin_jitter_ms", f.checkin_jitter_ms);
  f.error_probability = j.value("error_probability", f.error_probability);
  f.checkin_timeout_ms = j.value("checkin_timeout_ms", f.checkin_timeout_ms);
  f.upload_timeout_ms = j.value("upload_timeout_ms", f.upload_timeout_ms);
  f.retry_backoff_ms = j.value("retry_backoff_ms", f.retry_backoff_ms);
  return f;
}

json FleetToJson(const FleetSpec& f) {
  json mix = json::object();
  for (const auto& [v, frac] : f.version_mix) mix[std::to_string(v)] = frac;
  return json{{"device_count", f.device_count},
              {"version_mix", mix},
              {"genuine_fraction", f.genuine_fraction},
              {"dropout_hazard_per_min", f.dropout_hazard_per_min},
              {"speed_lognormal_sigma", f.speed_lognormal_sigma},
              {"schedule", f.schedule},
              {"base_eligibility", f.base_eligibility},
              {"diurnal_amplitude", f.diurnal_amplitude},
              {"diurnal_peak_hour", f.diurnal_peak_hour},
              {"store_capacity", f.store_capacity},
              {"store_expiration_ms", f.store_expiration_ms},
              {"checkin_jitter_ms", f.checkin_jitter_ms},
              {"error_probability", f.error_probability},
              {"checkin_timeout_ms", f.checkin_timeout_ms},
              {"upload_timeout_ms", f.upload_timeout_ms},
              {"retry_backoff_ms", f.retry_backoff_ms}};
}

SyntheticDataSpec DataFromJson(const json& j) {
  SyntheticDataSpec d;
  d.dim = j.value("dim", d.dim);
  if (j.contains("examples_per_device")) {
    d.min_examples = j["examples_per_device"].value("min", d.min_examples);
    d.max_examples = j["examples_per_device"].value("max", d.max_examples);
  }
  d.heterogeneity_sigma = j.value("heterogeneity_sigma", d.heterogeneity_sigma);
  d.label_noise_sigma = j.value("label_noise_sigma", d.label_noise_sigma);
  d.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  d.timezone_shift = j.value("timezone_shift", d.timezone_shift);
  d.timezone_shift_scale =
      j.value("timezone_shift_scale", d.timezone_shift_scale);
  d.label_kind = j.value("label_kind", d.label_kind);
  return d;
}

json DataToJson(const SyntheticDataSpec& d) {
  return json{{"dim", d.dim},
              {"examples_per_device", {{"min", d.min_examples},
                                        {"max", d.max_examples}}},
              {"heterogeneity_sigma", d.heterogeneity_sigma},
              {"label_noise_sigma", d.label_noise_sigma},
              {"holdout_fraction", d.holdout_fraction},
              {"timezone_shift", d.timezone_shift},
              {"timezone_shift_scale", d.timezone_shift_scale},
              {"label_kind", d.label_kind}};
}

ActorKind ActorKindFromName(const std::string& name) {
  if (name == "coordinator") return ActorKind::kCoordinator;
  if (name == "selector") return ActorKind::kSelector;
  if (name == "master_aggregator") return ActorKind::kMasterAggregator;
  if (name == "aggregator") return ActorKind::kAggregator;
  throw UnknownActorError("unknown actor kind '" + name + "'");
}

// -------------------------------------------------------------------------
// Fleet runtime: drives every simulated device through check-in, training
// and reporting, logging one session-event stream per device session.
// -------------------------------------------------------------------------

class FleetRuntime : public DeviceLink {
 public:
  FleetRuntime(EventQueue& events, ServerContext& ctx,
               std::vector<FleetDevice> fleet, const FleetSpec& spec,
               std::string population, std::uint64_t seed)
      : events_(events),
        ctx_(ctx),
        spec_(spec),
        population_(std::move(population)),
        seed_(seed) {
    devices_.reserve(fleet.size());
    for (FleetDevice& fd : fleet) {
      Dev d;
      d.profile = std::move(fd.profile);
      d.store = std::move(fd.store);
      d.rng = Rng(DeriveSeed(seed_, d.profile.device_id, 0xd37ULL));
      devices_.push_back(std::move(d));
    }
  }

  void Start() {
    for (std::size_t i = 0; i < devices_.size(); ++i) {
      Dev& d = devices_[i];
      SimTime at = spec_.checkin_jitter_ms > 0
                       ? static_cast<SimTime>(
                             d.rng.NextBelow(static_cast<std::uint64_t>(
                                 spec_.checkin_jitter_ms)))
                       : 0;
      ScheduleCheckIn(i, at);
    }
  }

  bool Genuine(DeviceId id) const {
    return devices_[static_cast<std::size_t>(id - 1)].profile.genuine;
  }

  void DeliverToDevice(DeviceId device, const Message& msg) override {
    std::size_t i = static_cast<std::size_t>(device - 1);
    if (i >= devices_.size()) return;
    Dev& d = devices_[i];

    if (const auto* reject = std::get_if<RejectWithWindowMsg>(&msg)) {
      if (d.session == SessionPhase::kCheckedIn) {
        Step(d, SessionInput::kRejectedByServer);
        EndSession(i, PickInWindow(d, reject->window_start,
                                   reject->window_end));
      } else if (d.session == SessionPhase::kUploading) {
        Step(d, SessionInput::kUploadAccepted);
        ScheduleReveal(d);
        EndSession(i, PickInWindow(d, reject->window_start,
                                   reject->window_end));
      }
      return;
    }
    if (const auto* abort = std::get_if<AbortMsg>(&msg)) {
      if (d.session == SessionPhase::kCheckedIn) {
        Step(d, SessionInput::kRejectedByServer);
        // Attestation or hard refusal: back off for a long while.
        EndSession(i, events_.now() + 4 * kMillisPerHour +
                          static_cast<SimTime>(d.rng.NextBelow(
                              static_cast<std::uint64_t>(kMillisPerHour))));
      } else if (d.session == SessionPhase::kUploading) {
        Step(d, SessionInput::kUploadRejected);
        EndSession(i, RetryAt(d));
      }
      (void)abort;
      return;
    }
    if (const auto* conf = std::get_if<ConfigureMsg>(&msg)) {
      if (d.session != SessionPhase::kCheckedIn) return;
      try {
        d.plan = ParsePlan(conf->plan_bytes);
      } catch (const Error&) {
        Step(d, SessionInput::kError);
        EndSession(i, RetryAt(d));
        return;
      }
      d.has_plan = true;
      d.round = conf->round_id;
      d.checkpoint = conf->checkpoint;
      d.secagg_expected = d.plan.server_part.secagg_min_k.has_value();
      Step(d, SessionInput::kPlanReceived);
      SimTime h = (events_.now() / kMillisPerHour) * kMillisPerHour;
      participating_per_hour_[h] += 1;
      std::uint64_t seq = d.session_seq;
      events_.ScheduleAfter(kPlanLoadDelayMs, [this, i, seq] {
        Dev& dev = devices_[i];
        if (dev.session_seq == seq &&
            dev.session == SessionPhase::kPlanDownloaded) {
          BeginTraining(i);
        }
      });
      return;
    }
    if (const auto* sb = std::get_if<ShareBundleMsg>(&msg)) {
      if (IsTerminalSession(d.session) || d.session == SessionPhase::kNew) {
        return;
      }
      d.bundle = sb->bundle;
      d.group_id = sb->group_id;
      AdvertiseKeysMsg keys;
      keys.round_id = sb->round_id;
      keys.group_id = sb->group_id;
      keys.member_index = sb->bundle.member_index;
      for (std::uint64_t s : sb->bundle.pair_seeds) {
        if (s != 0) keys.commitments.push_back(Mix64(s ^ 0xc0117e3dULL));
      }
      ctx_.FromDevice(d.profile.device_id, keys);
      if (d.upload_pending_bundle) {
        d.upload_pending_bundle = false;
        Upload(i);
      }
      return;
    }
  }

  EventLog& log() { return log_; }
  const std::map<SimTime, std::uint64_t>& arrivals() const { return arrivals_; }
  const std::map<SimTime, std::uint64_t>& participating_per_hour() const {
    return participating_per_hour_;
  }
  const std::vector<SimTime>& participation_times() const {
    return participation_times_;
  }

 private:
  struct Dev {
    DeviceProfile profile;
    ExampleStore store;
    TenantQueue tenants;
    SessionPhase session = SessionPhase::kNew;
    std::vector<SessionEvent> events;
    RoundId round = kNoRound;
    std::uint64_t session_seq = 0;
    std::uint64_t checkin_token = 0;
    Plan plan;
    bool has_plan = false;
    std::vector<double> checkpoint;
    bool secagg_expected = false;
    bool upload_pending_bundle = false;
    std::optional<MaskShareBundle> bundle;
    std::uint32_t group_id = 0;
    ModelUpdate update;
    MetricMap metrics;
    Rng rng{0};
  };

  void Step(Dev& d, SessionInput input) {
    SessionStep step = DeviceSessionStep(d.session, input);
    d.session = step.next;
    if (step.symbol.has_value()) {
      d.events.push_back(SessionEvent{*step.symbol, events_.now(),
                                      d.profile.device_id, d.round});
    }
  }

  SimTime RetryAt(Dev& d) {
    SimTime base = spec_.retry_backoff_ms;
    return events_.now() + base / 2 +
           static_cast<SimTime>(
               d.rng.NextBelow(static_cast<std::uint64_t>(base)));
  }

  SimTime PickInWindow(Dev& d, SimTime start, SimTime end) {
    SimTime now = events_.now();
    if (end <= start) end = start + 1;
    SimTime at = start + static_cast<SimTime>(d.rng.NextBelow(
                             static_cast<std::uint64_t>(end - start)));
    return std::max(at, now + 1);
  }

  void ScheduleCheckIn(std::size_t i, SimTime at) {
    Dev& d = devices_[i];
    std::uint64_t token = ++d.checkin_token;
    events_.ScheduleAt(std::max(at, events_.now()), [this, i, token] {
      Dev& dev = devices_[i];
      if (dev.checkin_token != token || dev.session != SessionPhase::kNew) {
        return;
      }
      CheckInNow(i);
    });
  }

  void CheckInNow(std::size_t i) {
    Dev& d = devices_[i];
    SimTime now = events_.now();
    if (!CheckEligibility(d.profile, now)) {
      auto next = d.profile.availability.NextEligible(now);
      if (!next.has_value()) return;  // never eligible
      // Spread deferred retries across the half hour after eligibility
      // resumes so hour boundaries do not turn into arrival spikes.
      ScheduleCheckIn(i, *next + static_cast<SimTime>(d.rng.NextBelow(
                                     static_cast<std::uint64_t>(
                                         30 * kMillisPerMinute))));
      return;
    }
    d.store.Maintain(now);
    d.round = kNoRound;
    d.events.clear();
    Step(d, SessionInput::kCheckIn);
    arrivals_[(now / kArrivalBucketMs) * kArrivalBucketMs] += 1;

    CheckInMsg msg;
    msg.population = population_;
    msg.device_id = d.profile.device_id;
    msg.runtime_version = d.profile.runtime_version;
    ctx_.FromDevice(d.profile.device_id, msg);

    std::uint64_t seq = d.session_seq;
    events_.ScheduleAfter(spec_.checkin_timeout_ms, [this, i, seq] {
      Dev& dev = devices_[i];
      if (dev.session_seq == seq && dev.session == SessionPhase::kCheckedIn) {
        // No response (selector lost or server idle): give up this session.
        dev.session = SessionPhase::kRejected;
        EndSession(i, RetryAt(dev));
      }
    });
  }

  void BeginTraining(std::size_t i) {
    Dev& d = devices_[i];
    Step(d, SessionInput::kTrainingStarted);
    TaskExecution exec = ExecuteTask(
        d.profile, d.plan, ModelParams{d.checkpoint}, d.store, events_.now(),
        spec_.error_probability, DeriveSeed(seed_, d.profile.device_id,
                                            d.session_seq));
    std::uint64_t seq = d.session_seq;
    events_.ScheduleAfter(exec.duration_ms, [this, i, seq, exec] {
      Dev& dev = devices_[i];
      if (dev.session_seq != seq || dev.session != SessionPhase::kTraining) {
        return;
      }
      switch (exec.outcome) {
        case ExecutionOutcome::kSuccess: {
          Step(dev, SessionInput::kTrainingCompleted);
          dev.update = exec.update;
          dev.metrics = exec.metrics;
          Step(dev, SessionInput::kUploadStarted);
          std::uint64_t upload_seq = dev.session_seq;
          events_.ScheduleAfter(spec_.upload_timeout_ms,
                                [this, i, upload_seq] {
                                  Dev& t = devices_[i];
                                  if (t.session_seq == upload_seq &&
                                      t.session == SessionPhase::kUploading) {
                                    Step(t, SessionInput::kError);
                                    EndSession(i, RetryAt(t));
                                  }
                                });
          Upload(i);
          break;
        }
        case ExecutionOutcome::kInterrupted: {
          Step(dev, SessionInput::kEligibilityLost);
          ctx_.FromDevice(dev.profile.device_id,
                          AbortMsg{dev.round, "interrupted"});
          EndSession(i, RetryAt(dev));
          break;
        }
        case ExecutionOutcome::kComputeError:
        case ExecutionOutcome::kNoMatchingExamples: {
          Step(dev, SessionInput::kError);
          ctx_.FromDevice(dev.profile.device_id,
                          AbortMsg{dev.round, "computation_failed"});
          EndSession(i, RetryAt(dev));
          break;
        }
      }
    });
  }

  void Upload(std::size_t i) {
    Dev& d = devices_[i];
    if (d.session != SessionPhase::kUploading) return;
    if (d.secagg_expected) {
      if (!d.bundle.has_value()) {
        d.upload_pending_bundle = true;
        return;
      }
      try {
        FixedVector fixed = EncodeFixed(d.update, kDefaultFixedScale,
                                        d.bundle->pair_seeds.size());
        MaskedInputMsg masked;
        masked.round_id = d.round;
        masked.group_id = d.group_id;
        masked.member_index = d.bundle->member_index;
        masked.masked =
            MaskCommit(fixed, *d.bundle, d.bundle->pair_seeds.size());
        masked.metrics = d.metrics;
        ctx_.FromDevice(d.profile.device_id, masked);
      } catch (const Error&) {
        Step(d, SessionInput::kError);
        EndSession(i, RetryAt(d));
      }
      return;
    }
    ReportMsg report;
    report.round_id = d.round;
    report.update = d.update;
    report.metrics = d.metrics;
    ctx_.FromDevice(d.profile.device_id, report);
  }

  void ScheduleReveal(Dev& d) {
    if (!d.secagg_expected || !d.bundle.has_value()) return;
    RevealSharesMsg reveal;
    reveal.round_id = d.round;
    reveal.group_id = d.group_id;
    reveal.member_index = d.bundle->member_index;
    reveal.shares = d.bundle->incoming_shares;
    DeviceId id = d.profile.device_id;
    const DeviceProfile* profile = &d.profile;
    events_.ScheduleAfter(kRevealDelayMs, [this, id, profile, reveal] {
      // Only finalization survivors reveal their shares.
      if (CheckEligibility(*profile, events_.now())) {
        ctx_.FromDevice(id, reveal);
      }
    });
  }

  void EndSession(std::size_t i, SimTime next_checkin) {
    Dev& d = devices_[i];
    for (SessionEvent& e : d.events) e.round_id = d.round;
    if (!d.events.empty()) log_.RecordSession(d.events);
    for (const SessionEvent& e : d.events) {
      if (e.symbol == 'v') {
        participation_times_.push_back(d.events.back().sim_time - e.sim_time);
        break;
      }
    }
    d.events.clear();
    d.session = SessionPhase::kNew;
    d.session_seq += 1;
    d.round = kNoRound;
    d.has_plan = false;
    d.secagg_expected = false;
    d.upload_pending_bundle = false;
    d.bundle.reset();
    d.update = ModelUpdate{};
    d.metrics.clear();
    ScheduleCheckIn(i, next_checkin);
  }

  EventQueue& events_;
  ServerContext& ctx_;
  FleetSpec spec_;
  std::string population_;
  std::uint64_t seed_;
  std::vector<Dev> devices_;
  EventLog log_;
  std::map<SimTime, std::uint64_t> arrivals_;
  std::map<SimTime, std::uint64_t> participating_per_hour_;
  std::vector<SimTime> participation_times_;
};

void WriteFile(const std::filesystem::path& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << body;
}

}  // namespace

ExperimentConfig ParseExperimentConfig(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InvalidConfigError(std::string("experiment config parse: ") +
                             e.what());
  }
  ExperimentConfig cfg;
  cfg.raw_json = json_text;
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.duration_ms = j.value("duration_ms", cfg.duration_ms);
    if (j.contains("fleet")) cfg.fleet = FleetFromJson(j["fleet"]);
    if (j.contains("data")) cfg.data = DataFromJson(j["data"]);
    if (j.contains("tasks")) {
      for (const json& t : j["tasks"]) {
        cfg.tasks.push_back(ParseTaskConfig(t.dump()));
      }
    }
    if (j.contains("pace_steering")) {
      const json& p = j["pace_steering"];
      cfg.pace_enabled = p.value("enabled", cfg.pace_enabled);
      cfg.pace_diurnal_adjustment =
          p.value("diurnal_adjustment", cfg.pace_diurnal_adjustment);
      cfg.pace_policy.concentration_threshold =
          p.value("concentration_threshold",
                  cfg.pace_policy.concentration_threshold);
      cfg.pace_policy.min_spread_period_ms =
          p.value("min_spread_period_ms", cfg.pace_policy.min_spread_period_ms);
      cfg.pace_policy.max_spread_period_ms =
          p.value("max_spread_period_ms", cfg.pace_policy.max_spread_period_ms);
      cfg.pace_policy.window_width_ms =
          p.value("window_width_ms", cfg.pace_policy.window_width_ms);
      cfg.required_checkin_rate =
          p.value("required_checkin_rate", cfg.required_checkin_rate);
    }
    if (j.contains("server")) {
      const json& s = j["server"];
      cfg.selector_count = s.value("selector_count", cfg.selector_count);
      cfg.aggregator_target = s.value("aggregator_target", cfg.aggregator_target);
      cfg.pipelining = s.value("pipelining", cfg.pipelining);
      cfg.lease_ms = s.value("lease_ms", cfg.lease_ms);
      cfg.secagg_threshold_fraction =
          s.value("secagg_threshold_fraction", cfg.secagg_threshold_fraction);
    }
    if (j.contains("monitors")) {
      const json& m = j["monitors"];
      cfg.monitors.completion_rate_floor =
          m.value("completion_rate_floor", cfg.monitors.completion_rate_floor);
      cfg.monitors.dropout_ceiling =
          m.value("dropout_ceiling", cfg.monitors.dropout_ceiling);
      cfg.monitors.window_ms = m.value("window_ms", cfg.monitors.window_ms);
    }
    if (j.contains("failure_injections")) {
      for (const json& f : j["failure_injections"]) {
        FailureInjection inj;
        inj.at_ms = f.at("at_ms").get<SimTime>();
        inj.kind = f.at("kind").get<std::string>();
        inj.index = f.value("index", std::size_t{0});
        cfg.failure_injections.push_back(std::move(inj));
      }
    }
  } catch (const json::exception& e) {
    throw InvalidConfigError(std::string("experiment config: ") + e.what());
  }
  return cfg;
}

std::string SerializeExperimentConfig(const ExperimentConfig& cfg) {
  json tasks = json::array();
  for (const TaskConfig& t : cfg.tasks) {
    tasks.push_back(json::parse(SerializeTaskConfig(t)));
  }
  json j{{"seed", cfg.seed},
         {"duration_ms", cfg.duration_ms},
         {"fleet", FleetToJson(cfg.fleet)},
         {"data", DataToJson(cfg.data)},
         {"tasks", tasks},
         {"pace_steering",
          {{"enabled", cfg.pace_enabled},
           {"diurnal_adjustment", cfg.pace_diurnal_adjustment},
           {"concentration_threshold", cfg.pace_policy.concentration_threshold},
           {"min_spread_period_ms", cfg.pace_policy.min_spread_period_ms},
           {"max_spread_period_ms", cfg.pace_policy.max_spread_period_ms},
           {"window_width_ms", cfg.pace_policy.window_width_ms},
           {"required_checkin_rate", cfg.required_checkin_rate}}},
         {"server",
          {{"selector_count", cfg.selector_count},
           {"aggregator_target", cfg.aggregator_target},
           {"pipelining", cfg.pipelining},
           {"lease_ms", cfg.lease_ms},
           {"secagg_threshold_fraction", cfg.secagg_threshold_fraction}}},
         {"monitors",
          {{"completion_rate_floor", cfg.monitors.completion_rate_floor},
           {"dropout_ceiling", cfg.monitors.dropout_ceiling},
           {"window_ms", cfg.monitors.window_ms}}}};
  json inj = json::array();
  for (const FailureInjection& f : cfg.failure_injections) {
    inj.push_back(json{{"at_ms", f.at_ms}, {"kind", f.kind}, {"index", f.index}});
  }
  j["failure_injections"] = inj;
  return j.dump(2);
}

void ValidateExperimentConfig(const ExperimentConfig& cfg) {
  if (cfg.duration_ms <= 0) {
    throw InvalidConfigError("duration_ms must be positive");
  }
  if (cfg.fleet.device_count == 0) {
    throw InvalidConfigError("fleet.device_count must be positive");
  }
  if (cfg.tasks.empty()) {
    throw InvalidConfigError("experiment needs at least one task");
  }
  const std::string& pop = cfg.tasks[0].population_name;
  for (const TaskConfig& t : cfg.tasks) {
    ValidateTaskConfig(t);
    if (t.population_name != pop) {
      throw InvalidConfigError(
          "all tasks in an experiment must target one population");
    }
  }
  for (const FailureInjection& f : cfg.failure_injections) {
    ActorKindFromName(f.kind);  // throws UnknownActorError
  }
}

std::vector<double> GroundTruthParams(const SyntheticDataSpec& data,
                                      std::uint64_t seed) {
  Rng rng(DeriveSeed(seed, 0x7472757468ULL));
  std::vector<double> truth(data.dim);
  for (double& t : truth) t = rng.Normal(0.0, 1.0);
  return truth;
}

std::vector<FleetDevice> GenerateFleet(const FleetSpec& fleet,
                                       const SyntheticDataSpec& data,
                                       std::uint64_t seed) {
  std::vector<double> truth = GroundTruthParams(data, seed);
  DiurnalCurve curve =
      SinusoidCurve(fleet.diurnal_amplitude, fleet.diurnal_peak_hour);

  // Normalized cumulative version mix, in version order.
  std::vector<std::pair<int, double>> mix(fleet.version_mix.begin(),
                                          fleet.version_mix.end());
  double mix_total = 0.0;
  for (const auto& [v, f] : mix) mix_total += f;
  if (mix.empty() || mix_total <= 0.0) {
    mix = {{kCurrentRuntimeVersion, 1.0}};
    mix_total = 1.0;
  }

  std::vector<FleetDevice> out;
  out.reserve(fleet.device_count);
  for (std::size_t n = 0; n < fleet.device_count; ++n) {
    DeviceId id = static_cast<DeviceId>(n + 1);
    Rng rng(DeriveSeed(seed, id, 0xf1ee7ULL));

    FleetDevice fd;
    fd.profile.device_id = id;
    double pick = rng.NextDouble() * mix_total;
    fd.profile.runtime_version = mix.back().first;
    double acc = 0.0;
    for (const auto& [v, f] : mix) {
      acc += f;
      if (pick < acc) {
        fd.profile.runtime_version = v;
        break;
      }
    }
    fd.profile.genuine = rng.NextDouble() < fleet.genuine_fraction;
    fd.profile.speed_factor = rng.LogNormal(0.0, fleet.speed_lognormal_sigma);
    fd.profile.dropout_hazard_per_min = fleet.dropout_hazard_per_min;

    int tz = 0;
    if (data.timezone_shift) tz = static_cast<int>(rng.NextBelow(24));

    if (fleet.schedule == "diurnal") {
      std::uint32_t mask = 0;
      for (int h = 0; h < 24; ++h) {
        double p = fleet.base_eligibility *
                   curve.multipliers[static_cast<std::size_t>((h + 24 - tz) %
                                                              24)];
        if (rng.NextDouble() < std::min(p, 0.95)) mask |= 1u << h;
      }
      fd.profile.availability.hour_mask = mask;
    } else {
      fd.profile.availability.hour_mask = 0xffffff;
    }

    // Per-device parameter shift; optionally correlated with the time zone
    // (the bias probe).
    std::vector<double> shifted = truth;
    for (double& w : shifted) {
      w += rng.Normal(0.0, data.heterogeneity_sigma);
    }
    if (data.timezone_shift && !shifted.empty()) {
      shifted[0] += data.timezone_shift_scale *
                    (static_cast<double>(tz) / 23.0 - 0.5);
    }

    std::size_t count =
        data.min_examples +
        static_cast<std::size_t>(rng.NextBelow(
            static_cast<std::uint64_t>(data.max_examples - data.min_examples +
                                       1)));
    fd.store = ExampleStore(fleet.store_capacity, fleet.store_expiration_ms);
    for (std::size_t e = 0; e < count; ++e) {
      Example ex;
      ex.features.resize(data.dim);
      double z = 0.0;
      for (std::size_t k = 0; k < data.dim; ++k) {
        ex.features[k] = rng.Normal(0.0, 1.0);
        z += shifted[k] * ex.features[k];
      }
      if (data.label_kind == "logistic") {
        double p = 1.0 / (1.0 + std::exp(-z));
        ex.label = rng.NextDouble() < p ? 1.0 : 0.0;
      } else {
        ex.label = z + rng.Normal(0.0, data.label_noise_sigma);
      }
      ex.timestamp = 0;
      ex.tag = rng.NextDouble() < data.holdout_fraction ? "holdout" : "train";
      fd.store.Append(std::move(ex));
    }
    out.push_back(std::move(fd));
  }
  return out;
}

std::vector<std::uint64_t> EligibleCountByHour(
    const std::vector<FleetDevice>& fleet) {
  std::vector<std::uint64_t> counts(24, 0);
  for (const FleetDevice& fd : fleet) {
    for (int h = 0; h < 24; ++h) {
      if ((fd.profile.availability.hour_mask >> h) & 1u) counts[h] += 1;
    }
  }
  return counts;
}

std::string HashHex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

RunResult RunExperiment(const ExperimentConfig& cfg,
                        const std::string& out_dir) {
  ValidateExperimentConfig(cfg);

  // Every task must clear the deployment gate before it can be served.
  DeploymentRegistry deployment;
  for (const TaskConfig& task : cfg.tasks) {
    Plan plan = GeneratePlan(task);
    DeploymentGateReport report = RunDeploymentGate(task, plan);
    if (!report.accepted()) {
      throw GateRejectedError("task '" + task.task_name +
                              "' rejected by the deployment gate:\n" +
                              FormatGateReport(report));
    }
    deployment.Register(task, plan);
  }
  deployment.SetInitialWeights(
      std::vector<double>(deployment.ModelDim(), 0.0));

  EventQueue events;
  ActorSystem system(events);
  LockService lock;
  RoundLedger ledger;

  std::filesystem::path dir;
  std::ofstream ledger_stream;
  if (!out_dir.empty()) {
    dir = out_dir;
    std::filesystem::create_directories(dir);
    ledger_stream.open(dir / "ledger.jsonl", std::ios::binary);
    ledger.AttachStream(&ledger_stream);
  }

  ServerConfig server;
  server.population = cfg.tasks[0].population_name;
  server.lease_ms = cfg.lease_ms;
  server.aggregator_target = cfg.aggregator_target;
  server.pipelining = cfg.pipelining;
  server.pace_enabled = cfg.pace_enabled;
  server.pace_policy = cfg.pace_policy;
  server.secagg_threshold_fraction = cfg.secagg_threshold_fraction;
  server.required_checkin_rate_override = cfg.required_checkin_rate;

  ServerHarness harness(events, system, lock, ledger, deployment, server,
                        cfg.seed);
  ServerContext& ctx = harness.context();

  std::vector<FleetDevice> fleet = GenerateFleet(cfg.fleet, cfg.data, cfg.seed);
  std::vector<std::uint64_t> eligible_by_hour = EligibleCountByHour(fleet);
  FleetRuntime runtime(events, ctx, std::move(fleet), cfg.fleet,
                       server.population, cfg.seed);
  ctx.device_link = &runtime;
  ctx.attestation_oracle = [&runtime](DeviceId id) {
    return runtime.Genuine(id);
  };
  ctx.pop_stats.estimated_active_devices = cfg.fleet.device_count;
  ctx.pop_stats.required_checkin_rate = cfg.required_checkin_rate;
  ctx.pop_stats.diurnal_curve =
      (cfg.fleet.schedule == "diurnal" && cfg.pace_diurnal_adjustment)
          ? SinusoidCurve(cfg.fleet.diurnal_amplitude,
                          cfg.fleet.diurnal_peak_hour)
          : FlatCurve();

  for (const FailureInjection& f : cfg.failure_injections) {
    ActorKind kind = ActorKindFromName(f.kind);
    std::size_t index = f.index;
    events.ScheduleAt(f.at_ms,
                      [&harness, kind, index] { harness.InjectKill(kind, index); });
  }

  harness.Start(cfg.selector_count);
  runtime.Start();
  events.RunUntil(cfg.duration_ms);

  RunResult result;
  result.ledger = ledger.records();
  result.events = std::move(runtime.log());
  result.rounds = ctx.round_metrics;
  std::sort(result.rounds.begin(), result.rounds.end(),
            [](const RoundMetricsRecord& a, const RoundMetricsRecord& b) {
              return a.round_id < b.round_id;
            });
  result.shapes = ComputeShapeDistribution(result.events,
                                           /*participating_only=*/true);
  result.traffic = ctx.traffic.Buckets();
  result.alerts = AlertCheck(result.rounds, cfg.monitors);
  for (const Alert& alert : result.alerts) {
    std::cerr << "ALERT window_start_ms=" << alert.window_start << " "
              << alert.metric << "=" << alert.value
              << " threshold=" << alert.threshold << "\n";
  }
  result.arrivals_per_bucket = runtime.arrivals();
  result.participating_per_hour = runtime.participating_per_hour();
  result.participation_times = runtime.participation_times();
  result.eligible_by_hour = eligible_by_hour;
  result.checkins = ctx.checkins_seen;
  result.checkins_rejected = ctx.checkins_rejected;
  result.bytes_down = ctx.traffic.total_down();
  result.bytes_up = ctx.traffic.total_up();
  result.coordinators_alive_max = ctx.coordinators_alive_max;
  result.respawn_count = ctx.respawn_count;
  auto kills_it = ctx.kills_executed.find(ActorKind::kCoordinator);
  result.coordinator_kills =
      kills_it != ctx.kills_executed.end() ? kills_it->second : 0;

  std::string config_text =
      cfg.raw_json.empty() ? SerializeExperimentConfig(cfg) : cfg.raw_json;
  json task_names = json::array();
  for (const TaskConfig& t : cfg.tasks) task_names.push_back(t.task_name);
  json manifest{{"config_hash", HashHex(config_text)},
                {"seed", cfg.seed},
                {"duration_ms", cfg.duration_ms},
                {"device_count", cfg.fleet.device_count},
                {"tasks", task_names},
                {"ledger_records", result.ledger.size()},
                {"session_events", result.events.size()},
                {"flsim_version", "0.1.0"}};
  result.manifest_json = manifest.dump(2);

  if (!out_dir.empty()) {
    WriteFile(dir / "manifest.json", result.manifest_json + "\n");
    {
      std::ofstream os(dir / "events.log", std::ios::binary);
      result.events.WriteTo(os);
    }
    {
      std::ostringstream os;
      WriteRoundsCsv(os, result.rounds);
      WriteFile(dir / "rounds.csv", os.str());
    }
    {
      std::ostringstream os;
      WriteShapesCsv(os, result.shapes);
      WriteFile(dir / "shapes.csv", os.str());
    }
    {
      std::ostringstream os;
      WriteTrafficCsv(os, result.traffic);
      WriteFile(dir / "traffic.csv", os.str());
    }
    {
      std::ostringstream os;
      WriteAlertsCsv(os, result.alerts);
      WriteFile(dir / "alerts.csv", os.str());
    }
    {
      std::ostringstream os;
      os << "bucket_start_ms,arrivals\n";
      for (const auto& [bucket, count] : result.arrivals_per_bucket) {
        os << bucket << ',' << count << '\n';
      }
      WriteFile(dir / "arrivals_per_bucket.csv", os.str());
    }
    {
      std::ostringstream os;
      os << "hour,eligible_count\n";
      for (int h = 0; h < 24; ++h) {
        os << h << ',' << result.eligible_by_hour[h] << '\n';
      }
      WriteFile(dir / "availability.csv", os.str());
    }
  }
  return result;
}

std::string ProfileReport::ToText() const {
  std::ostringstream os;
  os << "profile report\n";
  os << "  rounds: completed/aborted/dropped per round (mean): "
     << completed_mean << " / " << aborted_mean << " / " << dropped_mean
     << "\n";
  os << "  round duration ms: p50 " << round_duration_p50 << ", max "
     << round_duration_max << "\n";
  os << "  participation ms:  p50 " << participation_p50 << ", max "
     << participation_max << "\n";
  os << "  traffic bytes: down " << bytes_down << ", up " << bytes_up
     << ", down/up ratio "
     << (bytes_up > 0 ? static_cast<double>(bytes_down) /
                            static_cast<double>(bytes_up)
                      : 0.0)
     << "\n";
  os << "  completion-rate vs availability: best cross-correlation lag "
     << best_correlation_lag_hours << " h\n";
  os << "  hour_start_ms,rounds_completed,sessions_started,eligible\n";
  for (const HourRow& row : by_hour) {
    os << "  " << row.hour_start << ',' << row.rounds_completed << ','
       << row.sessions_started << ',' << row.eligible_devices << "\n";
  }
  return os.str();
}

ProfileReport ReportProfile(const std::string& run_dir) {
  std::filesystem::path dir(run_dir);
  ProfileReport report;

  std::vector<RoundMetricsRecord> rounds;
  {
    std::ifstream is(dir / "rounds.csv");
    if (!is) throw Error("missing rounds.csv in " + run_dir);
    rounds = ReadRoundsCsv(is);
  }
  std::vector<std::uint64_t> eligible(24, 0);
  {
    std::ifstream is(dir / "availability.csv");
    if (is) {
      std::string line;
      std::getline(is, line);  // header
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::size_t comma = line.find(',');
        int h = std::stoi(line.substr(0, comma));
        if (h >= 0 && h < 24) eligible[h] = std::stoull(line.substr(comma + 1));
      }
    }
  }

  EventLog log;
  {
    std::ifstream is(dir / "events.log");
    if (is) log = EventLog::ReadFrom(is);
  }

  SimTime horizon = 0;
  for (const RoundMetricsRecord& r : rounds) {
    horizon = std::max(horizon, r.finished_ms);
  }
  std::size_t hours = static_cast<std::size_t>(horizon / kMillisPerHour) + 1;
  std::vector<std::uint64_t> completed_series(hours, 0);
  std::vector<std::uint64_t> sessions_series(hours, 0);

  double completed_sum = 0.0;
  double aborted_sum = 0.0;
  double dropped_sum = 0.0;
  std::vector<SimTime> durations;
  for (const RoundMetricsRecord& r : rounds) {
    if (r.outcome == "completed") {
      completed_series[static_cast<std::size_t>(r.finished_ms /
                                                kMillisPerHour)] += 1;
    }
    completed_sum += r.completed;
    aborted_sum += r.aborted;
    dropped_sum += r.dropped;
    durations.push_back(r.finished_ms - r.started_ms);
  }
  if (!rounds.empty()) {
    report.completed_mean = completed_sum / static_cast<double>(rounds.size());
    report.aborted_mean = aborted_sum / static_cast<double>(rounds.size());
    report.dropped_mean = dropped_sum / static_cast<double>(rounds.size());
  }

  std::vector<SimTime> participation;
  {
    // Sessions are contiguous; measure plan download -> last event.
    SimTime v_time = -1;
    SimTime last = 0;
    DeviceId device = 0;
    auto flush = [&]() {
      if (v_time >= 0) participation.push_back(last - v_time);
      v_time = -1;
    };
    for (const SessionEvent& e : log.events()) {
      if (e.symbol == '-' || e.device_id != device) {
        flush();
        device = e.device_id;
      }
      if (e.symbol == 'v') v_time = e.sim_time;
      if (e.symbol == 'v' && e.sim_time >= 0) {
        std::size_t h = static_cast<std::size_t>(e.sim_time / kMillisPerHour);
        if (h < sessions_series.size()) sessions_series[h] += 1;
      }
      last = e.sim_time;
    }
    flush();
  }

  auto percentile = [](std::vector<SimTime>& v, double p) -> SimTime {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    std::size_t idx = static_cast<std::size_t>(
        p * static_cast<double>(v.size() - 1));
    return v[idx];
  };
  report.round_duration_p50 = percentile(durations, 0.5);
  report.round_duration_max = durations.empty() ? 0 : durations.back();
  report.participation_p50 = percentile(participation, 0.5);
  report.participation_max = participation.empty() ? 0 : participation.back();

  {
    std::ifstream is(dir / "traffic.csv");
    if (is) {
      std::string line;
      std::getline(is, line);
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::getline(ls, field, ',');
        std::getline(ls, field, ',');
        report.bytes_down += std::stoull(field);
        std::getline(ls, field, ',');
        report.bytes_up += std::stoull(field);
      }
    }
  }

  for (std::size_t h = 0; h < hours; ++h) {
    ProfileReport::HourRow row;
    row.hour_start = static_cast<SimTime>(h) * kMillisPerHour;
    row.rounds_completed = completed_series[h];
    row.sessions_started = sessions_series[h];
    row.eligible_devices = eligible[h % 24];
    report.by_hour.push_back(row);
  }

  // Cross-correlation of the hourly completion series against availability,
  // circular over the 24 h pattern.
  if (hours >= 12) {
    double best = -1e300;
    int best_lag = 0;
    auto mean_of = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    std::vector<double> comp(completed_series.begin(), completed_series.end());
    double comp_mean = mean_of(comp);
    for (int lag = -11; lag <= 12; ++lag) {
      std::vector<double> avail(hours, 0.0);
      for (std::size_t h = 0; h < hours; ++h) {
        int idx = (static_cast<int>(h % 24) - lag % 24 + 48) % 24;
        avail[h] = static_cast<double>(eligible[static_cast<std::size_t>(idx)]);
      }
      double avail_mean = mean_of(avail);
      double num = 0.0;
      for (std::size_t h = 0; h < hours; ++h) {
        num += (comp[h] - comp_mean) * (avail[h] - avail_mean);
      }
      if (num > best) {
        best = num;
        best_lag = lag;
      }
    }
    report.best_correlation_lag_hours = best_lag;
  }
  return report;
}

}  // namespace flsim
