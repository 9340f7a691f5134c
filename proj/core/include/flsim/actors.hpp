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
//
// FL server: Coordinator / Selector / MasterAggregator / Aggregator actors
// over a shared locking service. All actors keep their state in memory and
// are ephemeral; nothing about a round reaches the ledger until it is fully
// aggregated. Each actor drains its mailbox strictly sequentially (delivery
// events on the simulation queue), and actors communicate only by message.

#ifndef FLSIM_ACTORS_HPP_
#define FLSIM_ACTORS_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flsim/analytics.hpp"
#include "flsim/common.hpp"
#include "flsim/engine.hpp"
#include "flsim/fedavg.hpp"
#include "flsim/pace_steering.hpp"
#include "flsim/plan.hpp"
#include "flsim/protocol.hpp"
#include "flsim/rng.hpp"
#include "flsim/secure_agg.hpp"

namespace flsim {

enum class ActorKind { kCoordinator, kSelector, kMasterAggregator, kAggregator };
const char* ActorKindName(ActorKind k);

// ---------------------------------------------------------------------------
// Internal actor messages (datacenter side; device traffic uses wire frames).
// ---------------------------------------------------------------------------

struct MsgTick {
  std::uint32_t token = 0;
};
struct MsgSelectorCounts {
  ActorId selector = 0;
  std::uint32_t seen_since_last = 0;
};
struct MsgStartSelection {
  RoundId round = 0;
  std::size_t task_index = 0;
  RoundParams params;
  std::uint32_t quota = 0;
  ActorId master = 0;
  std::uint64_t seed = 0;
  std::vector<int> supported_versions;
};
struct MsgReservoirCount {
  RoundId round = 0;
  ActorId selector = 0;
  std::uint32_t count = 0;
};
struct MsgCloseSelection {
  RoundId round = 0;
  bool forward = false;  // false releases the reservoir (round abandoned)
};
struct MsgForwardBatch {
  RoundId round = 0;
  ActorId selector = 0;
  std::vector<std::pair<DeviceId, int>> devices;  // (id, runtime version)
  std::uint32_t rejected_during_selection = 0;
};
struct MsgFromDevice {
  DeviceId device = 0;
  Message wire;
};
struct MsgReportArrived {
  RoundId round = 0;
  ActorId aggregator = 0;
  DeviceId device = 0;
};
struct MsgReportDecision {
  RoundId round = 0;
  DeviceId device = 0;
  bool counted = false;
};
struct MsgPhaseUpdate {
  RoundId round = 0;
  RoundPhase phase = RoundPhase::kSelection;
};
struct MsgReadyToConfigure {
  RoundId round = 0;
};
struct MsgCheckpoint {
  RoundId round = 0;
  std::vector<double> weights;
};
struct MsgRoundClosed {
  RoundId round = 0;
  bool completed = false;
};
struct MsgPartialAggregate {
  RoundId round = 0;
  ActorId aggregator = 0;
  AggregateState partial;
  double loss_weighted_sum = 0.0;
  double example_sum = 0.0;
};
struct MsgGroupResult {
  RoundId round = 0;
  ActorId aggregator = 0;
  bool ok = false;
  FixedVector sum;
  std::size_t member_count = 0;
  std::size_t committed_count = 0;
  double loss_weighted_sum = 0.0;
  double example_sum = 0.0;
};
struct MsgCommitRequest {
  RoundId round = 0;
  ActorId master = 0;
};
struct MsgCommitOk {
  RoundId round = 0;
};
struct MsgRoundOutcome {
  RoundId round = 0;
  bool completed = false;
  std::vector<double> new_weights;
};
struct MsgRoundMetrics {
  RoundMetricsRecord record;
};
struct MsgWatchdog {
  RoundId round = 0;
};
struct MsgTeardown {
  RoundId round = 0;
};

using ActorMsg =
    std::variant<MsgTick, MsgSelectorCounts, MsgStartSelection,
                 MsgReservoirCount, MsgCloseSelection, MsgForwardBatch,
                 MsgFromDevice, MsgReportArrived, MsgReportDecision,
                 MsgPhaseUpdate, MsgReadyToConfigure, MsgCheckpoint,
                 MsgRoundClosed, MsgPartialAggregate, MsgGroupResult,
                 MsgCommitRequest, MsgCommitOk, MsgRoundOutcome,
                 MsgRoundMetrics, MsgWatchdog, MsgTeardown>;

// ---------------------------------------------------------------------------
// Actor runtime.
// ---------------------------------------------------------------------------

class ActorSystem;

class Actor {
 public:
  virtual ~Actor() = default;
  virtual void OnStart() {}
  virtual void OnMessage(const ActorMsg& msg) = 0;
  // Invoked by ActorSystem::Kill before the actor is discarded, while the
  // surrounding context is guaranteed to still exist. Destructors must not
  // touch shared state: at system teardown it may already be gone.
  virtual void OnKill() {}

  ActorId id() const { return id_; }
  ActorKind kind() const { return kind_; }

 protected:
  explicit Actor(ActorKind kind) : kind_(kind) {}
  ActorSystem& system() { return *system_; }

 private:
  friend class ActorSystem;
  ActorId id_ = 0;
  ActorSystem* system_ = nullptr;
  ActorKind kind_;
};

// Owns the actors; delivery is one simulation event per message, so each
// actor's handlers run strictly sequentially. Messages to killed actors are
// dropped (dead letters).
class ActorSystem {
 public:
  explicit ActorSystem(EventQueue& events) : events_(events) {}

  ActorId Spawn(std::unique_ptr<Actor> actor);
  void Kill(ActorId id);
  bool Alive(ActorId id) const { return actors_.contains(id); }
  void Send(ActorId to, ActorMsg msg, SimTime delay = 0);

  std::size_t AliveCount(ActorKind kind) const;
  // Alive ids of a kind in spawn order (failure injection targets).
  std::vector<ActorId> AliveOfKind(ActorKind kind) const;
  std::uint64_t dead_letters() const { return dead_letters_; }

  EventQueue& events() { return events_; }

 private:
  EventQueue& events_;
  std::map<ActorId, std::unique_ptr<Actor>> actors_;
  ActorId next_id_ = 1;
  std::uint64_t dead_letters_ = 0;
};

// ---------------------------------------------------------------------------
// Shared services.
// ---------------------------------------------------------------------------

// In-process locking service: at most one live coordinator per population,
// lease epochs strictly increasing across re-registrations.
class LockService {
 public:
  struct Entry {
    ActorId owner = 0;
    std::uint64_t epoch = 0;
    SimTime lease_expiry = 0;
    bool respawn_claimed = false;
  };

  bool Acquire(const std::string& population, ActorId owner, SimTime now,
               SimTime lease_ms);
  bool Renew(const std::string& population, ActorId owner, SimTime now,
             SimTime lease_ms);
  bool LeaseValid(const std::string& population, SimTime now) const;
  std::optional<Entry> Lookup(const std::string& population) const;
  // First-caller-wins claim to respawn after observing an expired lease;
  // resets when a new owner registers.
  bool ClaimRespawn(const std::string& population, std::uint64_t observed_epoch,
                    SimTime now);

 private:
  std::map<std::string, Entry> registry_;
};

// Committed-round records; a record exists only for fully aggregated rounds.
struct LedgerRecord {
  RoundId round_id = 0;
  std::string task_name;
  std::vector<double> weights;
  MetricMap metrics;
  SimTime committed_at = 0;
};

class RoundLedger {
 public:
  // Optional stream: each commit appends one JSON line immediately.
  void AttachStream(std::ostream* os) { stream_ = os; }
  void Commit(LedgerRecord record);
  bool HasRound(RoundId id) const;
  const LedgerRecord* Find(RoundId id) const;
  const std::vector<LedgerRecord>& records() const { return records_; }

  static std::string ToJsonLine(const LedgerRecord& r);
  static std::vector<LedgerRecord> ReadJsonl(std::istream& is);

 private:
  std::vector<LedgerRecord> records_;
  std::ostream* stream_ = nullptr;
};

// Accepted FL tasks for one population (only gate-accepted tasks belong
// here; registration enforces a single model dimension per population).
struct DeployedTask {
  TaskConfig config;
  Plan plan;
  std::map<int, Plan> versioned_plans;
  std::map<int, std::string> serialized_plans;
};

class DeploymentRegistry {
 public:
  void Register(const TaskConfig& config, const Plan& plan);
  const std::vector<DeployedTask>& tasks() const { return tasks_; }
  bool empty() const { return tasks_.empty(); }
  std::size_t ModelDim() const { return model_dim_; }
  std::vector<int> SupportedVersions() const;
  void SetInitialWeights(std::vector<double> w) { initial_weights_ = std::move(w); }
  const std::vector<double>& InitialWeights() const { return initial_weights_; }

 private:
  std::vector<DeployedTask> tasks_;
  std::size_t model_dim_ = 0;
  std::vector<double> initial_weights_;
};

struct NetworkParams {
  SimTime up_base_ms = 50;
  SimTime down_base_ms = 50;
  double ms_per_byte = 0.001;  // ~1 MB/s
};

class TrafficAccount {
 public:
  void Down(SimTime now, std::uint64_t bytes);
  void Up(SimTime now, std::uint64_t bytes);
  std::uint64_t total_down() const { return total_down_; }
  std::uint64_t total_up() const { return total_up_; }
  std::vector<TrafficBucket> Buckets() const;
  void set_bucket_ms(SimTime ms) { bucket_ms_ = ms; }

 private:
  SimTime bucket_ms_ = kMillisPerHour;
  std::uint64_t total_down_ = 0;
  std::uint64_t total_up_ = 0;
  std::map<SimTime, TrafficBucket> buckets_;
};

struct ServerConfig {
  std::string population;
  SimTime lease_ms = 10 * kMillisPerSecond;
  SimTime coordinator_tick_ms = 1 * kMillisPerSecond;
  SimTime selector_tick_ms = 2 * kMillisPerSecond;
  std::size_t aggregator_target = 100;  // devices per aggregator (and group)
  bool pipelining = true;
  bool pace_enabled = true;
  PaceSteeringPolicy pace_policy;
  SimTime commit_timeout_ms = 5 * kMillisPerSecond;
  SimTime finalize_grace_ms = 3 * kMillisPerSecond;
  SimTime teardown_grace_ms = 1 * kMillisPerSecond;
  SimTime round_gap_ms = 100;
  double secagg_threshold_fraction = 2.0 / 3.0;
  std::uint64_t fixed_scale = kDefaultFixedScale;
  // When positive, pins the pace-steering target rate instead of deriving
  // it from the observed round period.
  double required_checkin_rate_override = 0.0;
};

// Outbound edge toward the simulated fleet; implemented by the fleet runtime.
class DeviceLink {
 public:
  virtual ~DeviceLink() = default;
  virtual void DeliverToDevice(DeviceId device, const Message& msg) = 0;
};

// Shared wiring for one population's server: engine, actors, services,
// routing and accounting. Actors hold a reference to this context.
struct ServerContext {
  ServerContext(EventQueue& ev, ActorSystem& sys, LockService& lk,
                RoundLedger& ld, DeploymentRegistry& dep, ServerConfig cfg,
                std::uint64_t seed_in)
      : events(ev),
        system(sys),
        lock(lk),
        ledger(ld),
        deployment(dep),
        config(std::move(cfg)),
        seed(seed_in) {}

  EventQueue& events;
  ActorSystem& system;
  LockService& lock;
  RoundLedger& ledger;
  DeploymentRegistry& deployment;
  ServerConfig config;
  NetworkParams net;
  std::uint64_t seed;

  DeviceLink* device_link = nullptr;
  std::function<bool(DeviceId)> attestation_oracle;  // unset => all genuine

  std::vector<ActorId> selectors;
  PopulationStats pop_stats;
  TrafficAccount traffic;
  std::vector<RoundMetricsRecord> round_metrics;

  // Device -> (round, aggregator) routing, set during Configuration.
  struct Assignment {
    RoundId round = 0;
    ActorId aggregator = 0;
  };
  std::map<DeviceId, Assignment> assignments;

  RoundId next_round_id = 1;

  // Probes used by invariants/tests.
  std::uint32_t coordinators_alive = 0;
  std::uint32_t coordinators_alive_max = 0;
  std::uint64_t respawn_count = 0;
  std::map<ActorKind, std::uint64_t> kills_executed;
  std::map<RoundId, std::vector<std::uint32_t>> quota_splits;
  std::uint64_t checkins_seen = 0;
  std::uint64_t checkins_rejected = 0;

  // Sends a frame to a device, counting traffic (attributed to `round` when
  // nonzero) and applying the downlink latency model.
  void SendToDevice(DeviceId device, const Message& msg, RoundId round);
  // Entry point for device traffic; routes check-ins to a selector by stable
  // hash over the live selector set, round traffic to the assigned
  // aggregator. Unroutable frames are dropped (lost connection).
  void FromDevice(DeviceId device, const Message& msg);

  std::pair<std::uint64_t, std::uint64_t> RoundBytes(RoundId round) const;

 private:
  std::map<RoundId, std::pair<std::uint64_t, std::uint64_t>> round_bytes_;
};

// ---------------------------------------------------------------------------
// Actors. Construction wires them to the context; behavior is message-driven.
// ---------------------------------------------------------------------------

class Coordinator : public Actor {
 public:
  explicit Coordinator(ServerContext& ctx);
  void OnStart() override;
  void OnMessage(const ActorMsg& msg) override;
  void OnKill() override;

 private:
  struct InFlight {
    RoundId round = 0;
    std::size_t task_index = 0;
    ActorId master = 0;
    SimTime started = 0;
    bool selection_done = false;
    bool checkpoint_sent = false;
    bool terminal = false;
  };

  void Tick();
  void MaybeStartRound();
  void StartRound();
  void GrantCheckpoints();
  void FinishRound(InFlight& r, bool completed,
                   const std::vector<double>* new_weights);

  ServerContext& ctx_;
  bool registered_ = false;
  std::vector<double> weights_;
  std::size_t next_task_ = 0;
  std::vector<InFlight> in_flight_;  // spawn order
  std::map<ActorId, std::uint32_t> selector_counts_;
  double period_ema_ = 0.0;
  SimTime last_selection_start_ = -1;
  Rng rng_;
};

class Selector : public Actor {
 public:
  Selector(ServerContext& ctx, std::size_t index);
  void OnStart() override;
  void OnMessage(const ActorMsg& msg) override;

 private:
  struct ActiveSelection {
    RoundId round = 0;
    ActorId master = 0;
    std::uint32_t quota = 0;
    RoundParams params;
    std::vector<int> supported_versions;
    std::vector<std::pair<DeviceId, int>> reservoir;
    std::uint32_t seen = 0;
    std::uint32_t rejected = 0;
    SimTime deadline = 0;
    Rng rng{0};
  };

  void Tick();
  void HandleCheckIn(DeviceId device, const CheckInMsg& m);
  void RejectDevice(DeviceId device, RoundId round);
  void MaybeRespawnCoordinator();

  ServerContext& ctx_;
  std::size_t index_;
  std::optional<ActiveSelection> active_;
  std::uint32_t seen_since_report_ = 0;
  Rng rng_;
};

class MasterAggregator : public Actor {
 public:
  MasterAggregator(ServerContext& ctx, RoundId round, std::size_t task_index,
                   ActorId coordinator, std::uint64_t seed);
  void OnStart() override;
  void OnMessage(const ActorMsg& msg) override;

 private:
  void OnSelectionProgress(SimTime now);
  void CloseSelection(bool forward);
  void Configure(const std::vector<double>& checkpoint);
  void OnRoundClosed();
  void TryAssemble();
  void Teardown();

  ServerContext& ctx_;
  const DeployedTask& task_;
  ActorId coordinator_;
  std::uint64_t seed_;
  RoundParams params_;
  RoundState state_;
  std::map<ActorId, std::uint32_t> reservoir_counts_;
  std::vector<std::pair<DeviceId, int>> forwarded_;
  std::size_t forward_batches_expected_ = 0;
  std::size_t forward_batches_seen_ = 0;
  std::uint32_t rejected_total_ = 0;
  std::vector<double> checkpoint_;
  std::vector<ActorId> aggregators_;
  std::map<ActorId, MsgPartialAggregate> partials_;
  std::map<ActorId, MsgGroupResult> group_results_;
  std::uint32_t late_reports_ = 0;
  bool secagg_ = false;
  bool ready_sent_ = false;
  bool closed_broadcast_ = false;
  bool commit_requested_ = false;
  bool commit_done_ = false;
  bool outcome_sent_ = false;
  bool assembled_ = false;
  bool torn_down_ = false;
  std::vector<double> final_weights_;
  MetricMap final_metrics_;
};

class Aggregator : public Actor {
 public:
  struct SecAggSetup {
    SecAggGroup group;
    std::vector<std::uint64_t> seed_commitments;
    std::map<DeviceId, std::uint32_t> member_index;
  };

  Aggregator(ServerContext& ctx, RoundId round, ActorId master,
             std::vector<DeviceId> assigned,
             std::optional<SecAggSetup> secagg);
  void OnMessage(const ActorMsg& msg) override;

 private:
  struct Buffered {
    ModelUpdate update;
    FixedVector masked;
    MetricMap metrics;
    bool is_masked = false;
  };

  void FinalizeSecAgg();

  ServerContext& ctx_;
  RoundId round_;
  ActorId master_;
  std::vector<DeviceId> assigned_;
  std::optional<SecAggSetup> secagg_;
  std::map<DeviceId, Buffered> buffered_;
  AggregateState plain_sum_;
  FixedVector masked_sum_;
  std::vector<std::uint8_t> committed_;
  std::vector<RevealedShares> reveals_;
  double loss_weighted_sum_ = 0.0;
  double example_sum_ = 0.0;
  bool closed_ = false;
  bool completed_ = false;
  bool result_sent_ = false;
};

// Builds and starts one population's server stack.
class ServerHarness {
 public:
  ServerHarness(EventQueue& events, ActorSystem& system, LockService& lock,
                RoundLedger& ledger, DeploymentRegistry& deployment,
                ServerConfig config, std::uint64_t seed);

  void Start(std::size_t selector_count);
  ServerContext& context() { return ctx_; }

  // Kills the index-th alive actor of the kind (spawn order, wrapping).
  // Returns the killed actor id, or 0 when none is alive.
  ActorId InjectKill(ActorKind kind, std::size_t index);

 private:
  ServerContext ctx_;
};

}  // namespace flsim

#endif  // FLSIM_ACTORS_HPP_
