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

#include "flsim/actors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "flsim/errors.hpp"
#include "flsim/rng.hpp"

namespace flsim {

const char* ActorKindName(ActorKind k) {
  switch (k) {
    case ActorKind::kCoordinator:
      return "coordinator";
    case ActorKind::kSelector:
      return "selector";
    case ActorKind::kMasterAggregator:
      return "master_aggregator";
    case ActorKind::kAggregator:
      return "aggregator";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ActorSystem
// ---------------------------------------------------------------------------

ActorId ActorSystem::Spawn(std::unique_ptr<Actor> actor) {
  ActorId id = next_id_++;
  actor->id_ = id;
  actor->system_ = this;
  actors_.emplace(id, std::move(actor));
  events_.ScheduleAfter(0, [this, id] {
    auto it = actors_.find(id);
    if (it != actors_.end()) it->second->OnStart();
  });
  return id;
}

void ActorSystem::Kill(ActorId id) {
  auto it = actors_.find(id);
  if (it == actors_.end()) return;
  it->second->OnKill();
  // Defer destruction to the next event so an actor may kill itself (or be
  // killed by the actor it is currently messaging) mid-handler.
  std::shared_ptr<Actor> doomed(it->second.release());
  actors_.erase(it);
  events_.ScheduleAfter(0, [doomed] {});
}

void ActorSystem::Send(ActorId to, ActorMsg msg, SimTime delay) {
  events_.ScheduleAfter(delay, [this, to, m = std::move(msg)] {
    auto it = actors_.find(to);
    if (it == actors_.end()) {
      ++dead_letters_;
      return;
    }
    it->second->OnMessage(m);
  });
}

std::size_t ActorSystem::AliveCount(ActorKind kind) const {
  std::size_t n = 0;
  for (const auto& [id, actor] : actors_) {
    if (actor->kind() == kind) ++n;
  }
  return n;
}

std::vector<ActorId> ActorSystem::AliveOfKind(ActorKind kind) const {
  std::vector<ActorId> ids;
  for (const auto& [id, actor] : actors_) {
    if (actor->kind() == kind) ids.push_back(id);
  }
  return ids;  // map order == spawn order (ids are monotone)
}

// ---------------------------------------------------------------------------
// LockService
// ---------------------------------------------------------------------------

bool LockService::Acquire(const std::string& population, ActorId owner,
                          SimTime now, SimTime lease_ms) {
  auto it = registry_.find(population);
  if (it == registry_.end()) {
    registry_[population] = Entry{owner, 1, now + lease_ms, false};
    return true;
  }
  Entry& e = it->second;
  if (e.owner == owner) {
    e.lease_expiry = now + lease_ms;
    return true;
  }
  if (e.lease_expiry > now) return false;
  e.owner = owner;
  e.epoch += 1;
  e.lease_expiry = now + lease_ms;
  e.respawn_claimed = false;
  return true;
}

bool LockService::Renew(const std::string& population, ActorId owner,
                        SimTime now, SimTime lease_ms) {
  auto it = registry_.find(population);
  if (it == registry_.end()) return false;
  Entry& e = it->second;
  if (e.owner != owner || e.lease_expiry <= now) return false;
  e.lease_expiry = now + lease_ms;
  return true;
}

bool LockService::LeaseValid(const std::string& population,
                             SimTime now) const {
  auto it = registry_.find(population);
  return it != registry_.end() && it->second.lease_expiry > now;
}

std::optional<LockService::Entry> LockService::Lookup(
    const std::string& population) const {
  auto it = registry_.find(population);
  if (it == registry_.end()) return std::nullopt;
  return it->second;
}

bool LockService::ClaimRespawn(const std::string& population,
                               std::uint64_t observed_epoch, SimTime now) {
  auto it = registry_.find(population);
  if (it == registry_.end()) return false;
  Entry& e = it->second;
  if (e.lease_expiry > now || e.respawn_claimed || e.epoch != observed_epoch) {
    return false;
  }
  e.respawn_claimed = true;
  return true;
}

// ---------------------------------------------------------------------------
// RoundLedger
// ---------------------------------------------------------------------------

void RoundLedger::Commit(LedgerRecord record) {
  if (HasRound(record.round_id)) {
    throw Error("ledger: duplicate commit for round " +
                std::to_string(record.round_id));
  }
  if (stream_ != nullptr) {
    *stream_ << ToJsonLine(record) << '\n';
    stream_->flush();
  }
  records_.push_back(std::move(record));
}

bool RoundLedger::HasRound(RoundId id) const { return Find(id) != nullptr; }

const LedgerRecord* RoundLedger::Find(RoundId id) const {
  for (const LedgerRecord& r : records_) {
    if (r.round_id == id) return &r;
  }
  return nullptr;
}

std::string RoundLedger::ToJsonLine(const LedgerRecord& r) {
  nlohmann::json j{{"round_id", r.round_id},
                   {"task_name", r.task_name},
                   {"weights", r.weights},
                   {"metrics", r.metrics},
                   {"committed_at", r.committed_at}};
  return j.dump();
}

std::vector<LedgerRecord> RoundLedger::ReadJsonl(std::istream& is) {
  std::vector<LedgerRecord> records;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    LedgerRecord r;
    r.round_id = j.at("round_id").get<RoundId>();
    r.task_name = j.at("task_name").get<std::string>();
    r.weights = j.at("weights").get<std::vector<double>>();
    r.metrics = j.at("metrics").get<MetricMap>();
    r.committed_at = j.at("committed_at").get<SimTime>();
    records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// DeploymentRegistry
// ---------------------------------------------------------------------------

void DeploymentRegistry::Register(const TaskConfig& config, const Plan& plan) {
  if (model_dim_ == 0) {
    model_dim_ = plan.model_dim;
    if (initial_weights_.empty()) {
      initial_weights_.assign(model_dim_, 0.0);
    }
  } else if (model_dim_ != plan.model_dim) {
    throw InvalidConfigError(
        "deployment: all tasks in a population must share the model dim");
  }
  DeployedTask task;
  task.config = config;
  task.plan = plan;
  for (int v : config.required_runtime_versions) {
    if (!RuntimeVersionSupported(v)) continue;
    Plan versioned = DeriveVersionedPlan(plan, v);
    task.serialized_plans[v] = SerializePlan(versioned);
    task.versioned_plans[v] = std::move(versioned);
  }
  if (task.versioned_plans.empty()) {
    throw InvalidConfigError("deployment: task supports no runtime version");
  }
  tasks_.push_back(std::move(task));
}

std::vector<int> DeploymentRegistry::SupportedVersions() const {
  std::vector<int> versions;
  for (const DeployedTask& t : tasks_) {
    for (const auto& [v, plan] : t.versioned_plans) {
      if (std::find(versions.begin(), versions.end(), v) == versions.end()) {
        versions.push_back(v);
      }
    }
  }
  std::sort(versions.begin(), versions.end());
  return versions;
}

// ---------------------------------------------------------------------------
// TrafficAccount / ServerContext
// ---------------------------------------------------------------------------

void TrafficAccount::Down(SimTime now, std::uint64_t bytes) {
  total_down_ += bytes;
  SimTime start = (now / bucket_ms_) * bucket_ms_;
  TrafficBucket& b = buckets_[start];
  b.bucket_start = start;
  b.bytes_down += bytes;
}

void TrafficAccount::Up(SimTime now, std::uint64_t bytes) {
  total_up_ += bytes;
  SimTime start = (now / bucket_ms_) * bucket_ms_;
  TrafficBucket& b = buckets_[start];
  b.bucket_start = start;
  b.bytes_up += bytes;
}

std::vector<TrafficBucket> TrafficAccount::Buckets() const {
  std::vector<TrafficBucket> out;
  out.reserve(buckets_.size());
  for (const auto& [start, b] : buckets_) out.push_back(b);
  return out;
}

void ServerContext::SendToDevice(DeviceId device, const Message& msg,
                                 RoundId round) {
  std::uint64_t bytes = FrameSize(msg);
  traffic.Down(events.now(), bytes);
  if (round != kNoRound) round_bytes_[round].first += bytes;
  SimTime latency =
      net.down_base_ms +
      static_cast<SimTime>(static_cast<double>(bytes) * net.ms_per_byte);
  DeviceLink* link = device_link;
  if (link == nullptr) return;
  events.ScheduleAfter(latency,
                       [link, device, msg] { link->DeliverToDevice(device, msg); });
}

void ServerContext::FromDevice(DeviceId device, const Message& msg) {
  std::uint64_t bytes = FrameSize(msg);
  traffic.Up(events.now(), bytes);
  SimTime latency =
      net.up_base_ms +
      static_cast<SimTime>(static_cast<double>(bytes) * net.ms_per_byte);

  if (std::holds_alternative<CheckInMsg>(msg)) {
    std::vector<ActorId> alive;
    for (ActorId s : selectors) {
      if (system.Alive(s)) alive.push_back(s);
    }
    if (alive.empty()) return;  // no selector layer; connection lost
    ActorId target = alive[device % alive.size()];
    system.Send(target, MsgFromDevice{device, msg}, latency);
    return;
  }

  auto it = assignments.find(device);
  if (it == assignments.end()) return;  // stale or unroutable; dropped
  if (it->second.round != kNoRound) {
    round_bytes_[it->second.round].second += bytes;
  }
  system.Send(it->second.aggregator, MsgFromDevice{device, msg}, latency);
}

std::pair<std::uint64_t, std::uint64_t> ServerContext::RoundBytes(
    RoundId round) const {
  auto it = round_bytes_.find(round);
  if (it == round_bytes_.end()) return {0, 0};
  return it->second;
}

// ---------------------------------------------------------------------------
// Coordinator
// ---------------------------------------------------------------------------

namespace {
constexpr std::uint32_t kTickSelectionDeadline = 1;
constexpr std::uint32_t kTickReportingDeadline = 2;
constexpr std::uint32_t kTickAssembleDeadline = 3;
constexpr std::uint32_t kTickCommitTimeout = 4;
constexpr std::uint32_t kTickCoordinator = 5;
constexpr std::uint32_t kTickSelector = 6;
constexpr std::uint32_t kTickSecAggFinalize = 7;
constexpr std::uint32_t kTickSelfDestruct = 8;

std::vector<std::uint32_t> SplitQuota(std::uint32_t total,
                                      const std::vector<std::uint64_t>& weights) {
  std::size_t n = weights.size();
  std::vector<std::uint32_t> quota(n, 0);
  if (n == 0) return quota;
  std::uint64_t sum = 0;
  for (std::uint64_t w : weights) sum += w;
  if (sum == 0) {
    // Equal split when no counts are known (or all equal zero).
    std::uint32_t base = total / static_cast<std::uint32_t>(n);
    std::uint32_t extra = total % static_cast<std::uint32_t>(n);
    for (std::size_t i = 0; i < n; ++i) {
      quota[i] = base + (i < extra ? 1u : 0u);
    }
    return quota;
  }
  // Largest remainder, ties to the lower index.
  std::vector<std::pair<double, std::size_t>> rema(n);
  std::uint32_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double exact = static_cast<double>(total) *
                   (static_cast<double>(weights[i]) / static_cast<double>(sum));
    quota[i] = static_cast<std::uint32_t>(exact);
    assigned += quota[i];
    rema[i] = {exact - std::floor(exact), i};
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < total && i < n; ++i, ++assigned) {
    quota[rema[i].second] += 1;
  }
  return quota;
}
}  // namespace

Coordinator::Coordinator(ServerContext& ctx)
    : Actor(ActorKind::kCoordinator),
      ctx_(ctx),
      rng_(DeriveSeed(ctx.seed, 0xc00dULL)) {}

void Coordinator::OnKill() {
  if (registered_ && ctx_.coordinators_alive > 0) {
    ctx_.coordinators_alive -= 1;
    registered_ = false;
  }
}

void Coordinator::OnStart() {
  Tick();
}

void Coordinator::Tick() {
  SimTime now = ctx_.events.now();
  if (!registered_) {
    if (ctx_.lock.Acquire(ctx_.config.population, id(), now,
                          ctx_.config.lease_ms)) {
      registered_ = true;
      ctx_.coordinators_alive += 1;
      ctx_.coordinators_alive_max =
          std::max(ctx_.coordinators_alive_max, ctx_.coordinators_alive);
      // Resume from the last committed round, if any.
      if (!ctx_.ledger.records().empty()) {
        weights_ = ctx_.ledger.records().back().weights;
      } else {
        weights_ = ctx_.deployment.InitialWeights();
      }
    }
    // Not registered: someone else owns the population; retry on the tick.
  } else {
    if (!ctx_.lock.Renew(ctx_.config.population, id(), now,
                         ctx_.config.lease_ms)) {
      // Lost the lease; a single owner per population is the invariant.
      system().Kill(id());
      return;
    }
    if (ctx_.config.required_checkin_rate_override > 0.0) {
      ctx_.pop_stats.required_checkin_rate =
          ctx_.config.required_checkin_rate_override;
    } else if (period_ema_ > 0.0) {
      double target = static_cast<double>(
          ConfiguredTarget(ctx_.deployment.tasks().empty()
                               ? RoundParams{1}
                               : ctx_.deployment.tasks()[0].config.round_params));
      ctx_.pop_stats.required_checkin_rate =
          target / (period_ema_ / 1000.0);
    }
    MaybeStartRound();
  }
  system().Send(id(), MsgTick{kTickCoordinator}, ctx_.config.coordinator_tick_ms);
}

void Coordinator::MaybeStartRound() {
  if (!registered_ || ctx_.deployment.empty()) return;
  for (const InFlight& r : in_flight_) {
    if (r.terminal) continue;
    if (!r.selection_done) return;       // one round selecting at a time
    if (!ctx_.config.pipelining) return;  // strictly sequential rounds
  }
  SimTime now = ctx_.events.now();
  if (last_selection_start_ >= 0 &&
      now < last_selection_start_ + ctx_.config.round_gap_ms) {
    return;
  }
  StartRound();
}

void Coordinator::StartRound() {
  SimTime now = ctx_.events.now();
  RoundId round = ctx_.next_round_id++;
  std::size_t task_index = next_task_ % ctx_.deployment.tasks().size();
  next_task_ = (next_task_ + 1) % ctx_.deployment.tasks().size();
  const DeployedTask& task = ctx_.deployment.tasks()[task_index];

  auto master = std::make_unique<MasterAggregator>(ctx_, round, task_index,
                                                   id(),
                                                   DeriveSeed(ctx_.seed, round));
  ActorId master_id = ctx_.system.Spawn(std::move(master));

  InFlight r;
  r.round = round;
  r.task_index = task_index;
  r.master = master_id;
  r.started = now;
  in_flight_.push_back(r);

  // Quotas proportional to the selectors' connected-device counts; equal
  // split when counts are equal (or unknown).
  std::vector<ActorId> alive;
  for (ActorId s : ctx_.selectors) {
    if (ctx_.system.Alive(s)) alive.push_back(s);
  }
  std::vector<std::uint64_t> weights;
  bool all_equal = true;
  for (ActorId s : alive) {
    weights.push_back(selector_counts_.contains(s) ? selector_counts_[s] : 0);
    if (weights.back() != weights.front()) all_equal = false;
  }
  if (all_equal) std::fill(weights.begin(), weights.end(), 0);
  std::vector<std::uint32_t> quotas =
      SplitQuota(ConfiguredTarget(task.config.round_params), weights);
  ctx_.quota_splits[round] = quotas;

  std::vector<int> versions;
  for (const auto& [v, plan] : task.versioned_plans) versions.push_back(v);

  for (std::size_t i = 0; i < alive.size(); ++i) {
    MsgStartSelection sel;
    sel.round = round;
    sel.task_index = task_index;
    sel.params = task.config.round_params;
    sel.quota = quotas[i];
    sel.master = master_id;
    sel.seed = DeriveSeed(ctx_.seed, round, 0x5e1ec7ULL);
    sel.supported_versions = versions;
    ctx_.system.Send(alive[i], std::move(sel));
  }

  if (last_selection_start_ >= 0) {
    double interval = static_cast<double>(now - last_selection_start_);
    period_ema_ = period_ema_ == 0.0 ? interval
                                     : 0.7 * period_ema_ + 0.3 * interval;
  }
  last_selection_start_ = now;
  SimTime period_estimate =
      period_ema_ > 0.0 ? static_cast<SimTime>(period_ema_)
                        : task.config.round_params.selection_timeout_ms;
  ctx_.pop_stats.next_round_target_time = now + period_estimate;

  // A round may wait up to one extra report window for its checkpoint while
  // the previous round is still reporting.
  const RoundParams& p = task.config.round_params;
  SimTime deadline = p.selection_timeout_ms + 2 * p.report_window_ms +
                     ctx_.config.finalize_grace_ms +
                     ctx_.config.commit_timeout_ms +
                     ctx_.config.teardown_grace_ms + 3 * kMillisPerSecond;
  system().Send(id(), MsgWatchdog{round}, deadline);
}

void Coordinator::GrantCheckpoints() {
  // Configuration happens in round order: a round gets its checkpoint only
  // after every earlier round reached a terminal phase.
  for (InFlight& r : in_flight_) {
    if (r.terminal) continue;
    if (!r.selection_done || r.checkpoint_sent) return;
    ctx_.system.Send(r.master, MsgCheckpoint{r.round, weights_});
    r.checkpoint_sent = true;
    return;
  }
}

void Coordinator::FinishRound(InFlight& r, bool completed,
                              const std::vector<double>* new_weights) {
  if (r.terminal) return;
  r.terminal = true;
  if (completed && new_weights != nullptr) weights_ = *new_weights;
  GrantCheckpoints();
  MaybeStartRound();
}

void Coordinator::OnMessage(const ActorMsg& msg) {
  if (std::holds_alternative<MsgTick>(msg)) {
    Tick();
    return;
  }
  if (const auto* m = std::get_if<MsgSelectorCounts>(&msg)) {
    selector_counts_[m->selector] = m->seen_since_last;
    return;
  }
  if (const auto* m = std::get_if<MsgPhaseUpdate>(&msg)) {
    for (InFlight& r : in_flight_) {
      if (r.round == m->round && m->phase == RoundPhase::kConfiguration) {
        r.selection_done = true;
        MaybeStartRound();
      }
    }
    return;
  }
  if (const auto* m = std::get_if<MsgReadyToConfigure>(&msg)) {
    for (InFlight& r : in_flight_) {
      if (r.round == m->round) r.selection_done = true;
    }
    GrantCheckpoints();
    return;
  }
  if (const auto* m = std::get_if<MsgCommitRequest>(&msg)) {
    SimTime now = ctx_.events.now();
    if (!registered_ ||
        !ctx_.lock.Renew(ctx_.config.population, id(), now,
                         ctx_.config.lease_ms)) {
      return;
    }
    for (InFlight& r : in_flight_) {
      if (r.round == m->round && !r.terminal && r.master == m->master) {
        ctx_.system.Send(m->master, MsgCommitOk{m->round});
      }
    }
    return;
  }
  if (const auto* m = std::get_if<MsgRoundOutcome>(&msg)) {
    for (InFlight& r : in_flight_) {
      if (r.round == m->round) {
        FinishRound(r, m->completed,
                    m->completed ? &m->new_weights : nullptr);
      }
    }
    return;
  }
  if (const auto* m = std::get_if<MsgRoundMetrics>(&msg)) {
    ctx_.round_metrics.push_back(m->record);
    std::erase_if(in_flight_, [&](const InFlight& r) {
      return r.round == m->record.round_id && r.terminal;
    });
    return;
  }
  if (const auto* m = std::get_if<MsgWatchdog>(&msg)) {
    for (InFlight& r : in_flight_) {
      if (r.round != m->round || r.terminal) continue;
      if (const LedgerRecord* rec = ctx_.ledger.Find(m->round)) {
        // The master committed but its outcome never arrived.
        std::vector<double> w = rec->weights;
        FinishRound(r, true, &w);
        continue;
      }
      // Master lost: the round of this FL task failed; restart it.
      if (ctx_.system.Alive(r.master)) ctx_.system.Kill(r.master);
      next_task_ = r.task_index;
      FinishRound(r, false, nullptr);
    }
    std::erase_if(in_flight_, [&](const InFlight& r) {
      return r.round == m->round && r.terminal;
    });
    return;
  }
}

// ---------------------------------------------------------------------------
// Selector
// ---------------------------------------------------------------------------

Selector::Selector(ServerContext& ctx, std::size_t index)
    : Actor(ActorKind::kSelector),
      ctx_(ctx),
      index_(index),
      rng_(DeriveSeed(ctx.seed, 0x5e1ULL, index)) {}

void Selector::OnStart() { Tick(); }

void Selector::Tick() {
  SimTime now = ctx_.events.now();
  MaybeRespawnCoordinator();

  if (active_.has_value() && now > active_->deadline) {
    // The master never closed this selection (likely dead): release the
    // reservoir so the devices are not stranded.
    for (const auto& [device, version] : active_->reservoir) {
      RejectDevice(device, active_->round);
    }
    active_.reset();
  }

  if (auto entry = ctx_.lock.Lookup(ctx_.config.population);
      entry.has_value() && ctx_.lock.LeaseValid(ctx_.config.population, now)) {
    ctx_.system.Send(entry->owner,
                     MsgSelectorCounts{id(), seen_since_report_});
    seen_since_report_ = 0;
  }
  system().Send(id(), MsgTick{kTickSelector}, ctx_.config.selector_tick_ms);
}

void Selector::MaybeRespawnCoordinator() {
  SimTime now = ctx_.events.now();
  auto entry = ctx_.lock.Lookup(ctx_.config.population);
  if (!entry.has_value()) return;
  if (ctx_.lock.LeaseValid(ctx_.config.population, now)) return;
  if (!ctx_.lock.ClaimRespawn(ctx_.config.population, entry->epoch, now)) {
    return;  // another selector claimed it; this happens exactly once
  }
  ctx_.respawn_count += 1;
  ctx_.system.Spawn(std::make_unique<Coordinator>(ctx_));
}

void Selector::RejectDevice(DeviceId device, RoundId round) {
  SimTime now = ctx_.events.now();
  RejectWithWindowMsg reject;
  if (ctx_.config.pace_enabled) {
    ReconnectWindow w =
        SuggestWindow(ctx_.pop_stats, ctx_.config.pace_policy, now,
                      DeriveSeed(ctx_.seed, device,
                                 static_cast<std::uint64_t>(now)));
    reject.window_start = w.start;
    reject.window_end = w.end;
  } else {
    reject.window_start = now + ctx_.config.pace_policy.min_lead_ms;
    reject.window_end = reject.window_start + kMillisPerSecond;
  }
  ctx_.checkins_rejected += 1;
  if (active_.has_value()) active_->rejected += 1;
  ctx_.SendToDevice(device, reject, round);
}

void Selector::HandleCheckIn(DeviceId device, const CheckInMsg& m) {
  SimTime now = ctx_.events.now();
  ctx_.checkins_seen += 1;
  seen_since_report_ += 1;

  if (ctx_.attestation_oracle && !ctx_.attestation_oracle(device)) {
    ctx_.checkins_rejected += 1;
    ctx_.SendToDevice(device, AbortMsg{kNoRound, "attestation_failed"},
                      kNoRound);
    return;
  }

  if (!active_.has_value() || now > active_->deadline) {
    RejectDevice(device, kNoRound);
    return;
  }

  ActiveSelection& sel = *active_;
  bool version_ok =
      std::find(sel.supported_versions.begin(), sel.supported_versions.end(),
                m.runtime_version) != sel.supported_versions.end();
  if (!version_ok) {
    RejectDevice(device, sel.round);
    return;
  }

  sel.seen += 1;
  if (sel.reservoir.size() < sel.quota) {
    sel.reservoir.emplace_back(device, m.runtime_version);
  } else if (sel.quota > 0) {
    // Reservoir sampling over the check-in stream, seeded per round.
    std::uint64_t slot = sel.rng.NextBelow(sel.seen);
    if (slot < sel.quota) {
      RejectDevice(sel.reservoir[slot].first, sel.round);
      sel.reservoir[slot] = {device, m.runtime_version};
    } else {
      RejectDevice(device, sel.round);
    }
    return;  // reservoir size unchanged
  } else {
    RejectDevice(device, sel.round);
    return;
  }
  ctx_.system.Send(sel.master,
                   MsgReservoirCount{sel.round, id(),
                                     static_cast<std::uint32_t>(
                                         sel.reservoir.size())});
}

void Selector::OnMessage(const ActorMsg& msg) {
  if (std::holds_alternative<MsgTick>(msg)) {
    Tick();
    return;
  }
  if (const auto* m = std::get_if<MsgStartSelection>(&msg)) {
    if (active_.has_value()) {
      // Stale selection never closed; release before starting the new one.
      for (const auto& [device, version] : active_->reservoir) {
        RejectDevice(device, active_->round);
      }
    }
    ActiveSelection sel;
    sel.round = m->round;
    sel.master = m->master;
    sel.quota = m->quota;
    sel.params = m->params;
    sel.supported_versions = m->supported_versions;
    sel.deadline = ctx_.events.now() + m->params.selection_timeout_ms +
                   5 * kMillisPerSecond;
    sel.rng = Rng(DeriveSeed(m->seed, id()));
    active_ = std::move(sel);
    return;
  }
  if (const auto* m = std::get_if<MsgCloseSelection>(&msg)) {
    if (!active_.has_value() || active_->round != m->round) return;
    if (m->forward) {
      MsgForwardBatch batch;
      batch.round = m->round;
      batch.selector = id();
      batch.devices = active_->reservoir;
      batch.rejected_during_selection = active_->rejected;
      ctx_.system.Send(active_->master, std::move(batch));
    } else {
      for (const auto& [device, version] : active_->reservoir) {
        RejectDevice(device, active_->round);
      }
    }
    active_.reset();
    return;
  }
  if (const auto* m = std::get_if<MsgFromDevice>(&msg)) {
    if (const auto* checkin = std::get_if<CheckInMsg>(&m->wire)) {
      HandleCheckIn(m->device, *checkin);
    }
    return;
  }
}

// ---------------------------------------------------------------------------
// MasterAggregator
// ---------------------------------------------------------------------------

MasterAggregator::MasterAggregator(ServerContext& ctx, RoundId round,
                                   std::size_t task_index, ActorId coordinator,
                                   std::uint64_t seed)
    : Actor(ActorKind::kMasterAggregator),
      ctx_(ctx),
      task_(ctx.deployment.tasks()[task_index]),
      coordinator_(coordinator),
      seed_(seed),
      params_(ctx.deployment.tasks()[task_index].config.round_params) {
  state_.round_id = round;
  secagg_ = task_.config.secagg_group_min_k.has_value();
}

void MasterAggregator::OnStart() {
  state_ = MakeRound(state_.round_id, ctx_.events.now());
  system().Send(id(), MsgTick{kTickSelectionDeadline},
                params_.selection_timeout_ms);
  // Last-resort exit in case the coordinator dies and nobody tears us down.
  system().Send(id(), MsgTick{kTickSelfDestruct},
                params_.selection_timeout_ms + 2 * params_.report_window_ms +
                    ctx_.config.finalize_grace_ms +
                    ctx_.config.commit_timeout_ms +
                    ctx_.config.teardown_grace_ms + 2 * kMillisPerSecond);
}

void MasterAggregator::OnSelectionProgress(SimTime now) {
  if (state_.phase != RoundPhase::kSelection) return;
  std::uint32_t connected = 0;
  for (const auto& [sel, count] : reservoir_counts_) connected += count;
  SelectionTick(state_, connected, params_, now);
  if (state_.phase == RoundPhase::kConfiguration) {
    CloseSelection(/*forward=*/true);
  } else if (state_.phase == RoundPhase::kAbandoned) {
    CloseSelection(/*forward=*/false);
  }
}

void MasterAggregator::CloseSelection(bool forward) {
  if (closed_broadcast_) return;
  closed_broadcast_ = true;
  std::size_t notified = 0;
  for (ActorId s : ctx_.selectors) {
    if (!ctx_.system.Alive(s)) continue;
    ctx_.system.Send(s, MsgCloseSelection{state_.round_id, forward});
    ++notified;
  }
  if (forward) {
    forward_batches_expected_ = notified;
    ctx_.system.Send(coordinator_,
                     MsgPhaseUpdate{state_.round_id, RoundPhase::kConfiguration});
    if (notified == 0) {
      // No selector layer left; nothing can be configured.
      state_.phase = RoundPhase::kAbandoned;
      state_.terminal_time = ctx_.events.now();
      if (!outcome_sent_) {
        outcome_sent_ = true;
        ctx_.system.Send(coordinator_,
                         MsgRoundOutcome{state_.round_id, false, {}});
      }
      system().Send(id(), MsgTeardown{state_.round_id},
                    ctx_.config.teardown_grace_ms);
    }
  } else {
    if (!outcome_sent_) {
      outcome_sent_ = true;
      ctx_.system.Send(coordinator_,
                       MsgRoundOutcome{state_.round_id, false, {}});
    }
    system().Send(id(), MsgTeardown{state_.round_id},
                  ctx_.config.teardown_grace_ms);
  }
}

void MasterAggregator::Configure(const std::vector<double>& checkpoint) {
  SimTime now = ctx_.events.now();
  checkpoint_ = checkpoint;
  const std::size_t n = forwarded_.size();
  for (const auto& [device, version] : forwarded_) {
    state_.participants.insert(device);
  }

  std::size_t agg_count =
      std::max<std::size_t>(1, (n + ctx_.config.aggregator_target - 1) /
                                   ctx_.config.aggregator_target);
  std::vector<std::vector<DeviceId>> partitions(agg_count);
  for (std::size_t i = 0; i < n; ++i) {
    partitions[i % agg_count].push_back(forwarded_[i].first);
  }

  std::uint32_t min_k = 0;
  if (secagg_) {
    min_k = *task_.config.secagg_group_min_k;
    for (const auto& part : partitions) {
      if (part.size() < min_k) {
        // Groups below k are not allowed to aggregate; the round cannot run.
        state_.phase = RoundPhase::kAbandoned;
        state_.terminal_time = now;
        if (!outcome_sent_) {
          outcome_sent_ = true;
          ctx_.system.Send(coordinator_,
                           MsgRoundOutcome{state_.round_id, false, {}});
        }
        system().Send(id(), MsgTeardown{state_.round_id},
                      ctx_.config.teardown_grace_ms);
        return;
      }
    }
  }

  std::vector<std::optional<Aggregator::SecAggSetup>> setups(agg_count);
  std::vector<std::vector<MaskShareBundle>> bundles(agg_count);
  if (secagg_) {
    for (std::size_t a = 0; a < agg_count; ++a) {
      SecAggGroup group;
      group.members = partitions[a];
      double frac = ctx_.config.secagg_threshold_fraction;
      group.threshold = std::max<std::uint32_t>(
          1, static_cast<std::uint32_t>(
                 std::ceil(frac * static_cast<double>(group.members.size()))));
      group.session_nonce = DeriveSeed(seed_, a, 0x5ecaULL);
      PrepareResult prep = Prepare(group);
      Aggregator::SecAggSetup setup;
      setup.group = group;
      setup.seed_commitments = prep.seed_commitments;
      for (std::size_t m = 0; m < group.members.size(); ++m) {
        setup.member_index[group.members[m]] =
            static_cast<std::uint32_t>(m);
      }
      setups[a] = std::move(setup);
      bundles[a] = std::move(prep.bundles);
    }
  }

  std::map<DeviceId, int> version_of;
  for (const auto& [device, version] : forwarded_) version_of[device] = version;

  aggregators_.clear();
  for (std::size_t a = 0; a < agg_count; ++a) {
    ActorId agg = ctx_.system.Spawn(std::make_unique<Aggregator>(
        ctx_, state_.round_id, id(), partitions[a], setups[a]));
    aggregators_.push_back(agg);
    for (std::size_t m = 0; m < partitions[a].size(); ++m) {
      DeviceId device = partitions[a][m];
      ctx_.assignments[device] =
          ServerContext::Assignment{state_.round_id, agg};
      int v = version_of[device];
      auto plan_it = task_.serialized_plans.find(v);
      if (plan_it == task_.serialized_plans.end()) continue;
      ConfigureMsg conf;
      conf.round_id = state_.round_id;
      conf.plan_bytes = plan_it->second;
      conf.checkpoint = checkpoint_;
      ctx_.SendToDevice(device, conf, state_.round_id);
      if (secagg_) {
        ShareBundleMsg sb;
        sb.round_id = state_.round_id;
        sb.group_id = static_cast<std::uint32_t>(a);
        sb.bundle = bundles[a][m];
        ctx_.SendToDevice(device, sb, state_.round_id);
      }
    }
  }

  BeginReporting(state_, now);
  system().Send(id(), MsgTick{kTickReportingDeadline},
                params_.report_window_ms);
  system().Send(id(), MsgTeardown{state_.round_id},
                params_.report_window_ms + ctx_.config.teardown_grace_ms);
}

void MasterAggregator::OnRoundClosed() {
  if (!IsTerminal(state_.phase)) return;
  bool completed = state_.phase == RoundPhase::kCompleted;
  for (ActorId agg : aggregators_) {
    if (ctx_.system.Alive(agg)) {
      ctx_.system.Send(agg, MsgRoundClosed{state_.round_id, completed});
    }
  }
  if (completed) {
    system().Send(id(), MsgTick{kTickAssembleDeadline},
                  ctx_.config.finalize_grace_ms);
  } else if (!outcome_sent_) {
    outcome_sent_ = true;
    ctx_.system.Send(coordinator_, MsgRoundOutcome{state_.round_id, false, {}});
  }
}

void MasterAggregator::TryAssemble() {
  if (assembled_ || state_.phase != RoundPhase::kCompleted) return;
  assembled_ = true;

  double loss_weighted = 0.0;
  double examples = 0.0;
  std::uint64_t contributions = 0;

  AggregateState total;
  bool training = task_.plan.device_part.mutate_weights;

  if (!secagg_) {
    // Hierarchical aggregation: partial sums combine with the same absorb
    // semantics as individual updates.
    for (ActorId agg : aggregators_) {
      auto it = partials_.find(agg);
      if (it == partials_.end()) continue;  // crashed aggregator: devices lost
      MergeAggregates(total, it->second.partial);
      loss_weighted += it->second.loss_weighted_sum;
      examples += it->second.example_sum;
    }
    contributions = total.contributions;
  } else {
    std::vector<FixedVector> sums;
    std::vector<std::size_t> counts;
    for (ActorId agg : aggregators_) {
      auto it = group_results_.find(agg);
      if (it == group_results_.end() || !it->second.ok) continue;
      if (it->second.committed_count == 0) continue;
      sums.push_back(it->second.sum);
      counts.push_back(it->second.member_count);
      contributions += it->second.committed_count;
      loss_weighted += it->second.loss_weighted_sum;
      examples += it->second.example_sum;
    }
    if (!sums.empty() && training) {
      ModelUpdate decoded = ComposeHierarchical(
          sums, counts, *task_.config.secagg_group_min_k);
      AbsorbUpdate(total, decoded);
      total.contributions = contributions;
    }
  }

  // Post-close losses (crashed aggregators, failed secagg groups) may undo
  // completion if they exceed the round's dropout tolerance.
  std::uint32_t needed = static_cast<std::uint32_t>(std::ceil(
      static_cast<double>(params_.goal_count) *
      (1.0 - params_.dropout_tolerance)));
  bool viable = contributions >= std::max<std::uint32_t>(1, needed);
  if (training && total.weight_sum == 0) viable = false;

  if (!viable) {
    if (!outcome_sent_) {
      outcome_sent_ = true;
      ctx_.system.Send(coordinator_, MsgRoundOutcome{state_.round_id, false, {}});
    }
    return;
  }

  if (training) {
    ModelParams w_t{checkpoint_};
    final_weights_ = FinalizeRound(total, w_t).weights;
  } else {
    final_weights_ = checkpoint_;
  }
  final_metrics_["contributions"] = static_cast<double>(contributions);
  final_metrics_["examples"] = examples;
  final_metrics_["weight_sum"] = static_cast<double>(total.weight_sum);
  if (examples > 0.0) {
    final_metrics_["mean_loss"] = loss_weighted / examples;
  }

  commit_requested_ = true;
  ctx_.system.Send(coordinator_, MsgCommitRequest{state_.round_id, id()});
  system().Send(id(), MsgTick{kTickCommitTimeout},
                ctx_.config.commit_timeout_ms);
}

void MasterAggregator::Teardown() {
  if (torn_down_) return;
  torn_down_ = true;
  RoundMetricsRecord rec;
  rec.round_id = state_.round_id;
  rec.task_name = task_.config.task_name;
  rec.outcome = (state_.phase == RoundPhase::kCompleted && commit_done_)
                    ? "completed"
                    : "abandoned";
  rec.accepted = static_cast<std::uint32_t>(state_.participants.size());
  rec.rejected = rejected_total_;
  rec.completed = static_cast<std::uint32_t>(state_.reported.size());
  rec.aborted = late_reports_;
  std::uint32_t accounted =
      rec.completed + late_reports_;
  rec.dropped = rec.accepted > accounted ? rec.accepted - accounted : 0;
  rec.selection_ms = state_.configuration_start > 0
                         ? state_.configuration_start - state_.selection_start
                         : state_.terminal_time - state_.selection_start;
  rec.configuration_ms = state_.reporting_start > 0
                             ? state_.reporting_start - state_.configuration_start
                             : 0;
  rec.reporting_ms = state_.reporting_start > 0
                         ? state_.terminal_time - state_.reporting_start
                         : 0;
  auto [down, up] = ctx_.RoundBytes(state_.round_id);
  rec.bytes_down = down;
  rec.bytes_up = up;
  auto it = final_metrics_.find("mean_loss");
  rec.mean_loss = it != final_metrics_.end() ? it->second : 0.0;
  rec.started_ms = state_.selection_start;
  rec.finished_ms =
      state_.terminal_time > 0 ? state_.terminal_time : ctx_.events.now();
  ctx_.system.Send(coordinator_, MsgRoundMetrics{rec});

  for (const DeviceId device : state_.participants) {
    auto assigned = ctx_.assignments.find(device);
    if (assigned != ctx_.assignments.end() &&
        assigned->second.round == state_.round_id) {
      ctx_.assignments.erase(assigned);
    }
  }
  for (ActorId agg : aggregators_) {
    if (ctx_.system.Alive(agg)) ctx_.system.Kill(agg);
  }
  system().Kill(id());
}

void MasterAggregator::OnMessage(const ActorMsg& msg) {
  SimTime now = ctx_.events.now();
  if (const auto* m = std::get_if<MsgTick>(&msg)) {
    switch (m->token) {
      case kTickSelectionDeadline:
        OnSelectionProgress(now);
        break;
      case kTickReportingDeadline:
        ReportingTick(state_, params_, now);
        OnRoundClosed();
        break;
      case kTickAssembleDeadline:
        TryAssemble();
        break;
      case kTickCommitTimeout:
        if (!commit_done_ && commit_requested_ && !outcome_sent_) {
          outcome_sent_ = true;
          ctx_.system.Send(coordinator_,
                           MsgRoundOutcome{state_.round_id, false, {}});
        }
        break;
      case kTickSelfDestruct:
        if (!torn_down_) {
          if (!IsTerminal(state_.phase)) {
            state_.phase = RoundPhase::kAbandoned;
            state_.terminal_time = now;
          }
          Teardown();
        }
        break;
      default:
        break;
    }
    return;
  }
  if (const auto* m = std::get_if<MsgReservoirCount>(&msg)) {
    if (m->round != state_.round_id) return;
    reservoir_counts_[m->selector] = m->count;
    OnSelectionProgress(now);
    return;
  }
  if (const auto* m = std::get_if<MsgForwardBatch>(&msg)) {
    if (m->round != state_.round_id) return;
    forwarded_.insert(forwarded_.end(), m->devices.begin(), m->devices.end());
    rejected_total_ += m->rejected_during_selection;
    forward_batches_seen_ += 1;
    if (forward_batches_seen_ == forward_batches_expected_) {
      if (forwarded_.empty()) {
        state_.phase = RoundPhase::kAbandoned;
        state_.terminal_time = now;
        if (!outcome_sent_) {
          outcome_sent_ = true;
          ctx_.system.Send(coordinator_,
                           MsgRoundOutcome{state_.round_id, false, {}});
        }
        system().Send(id(), MsgTeardown{state_.round_id},
                      ctx_.config.teardown_grace_ms);
        return;
      }
      if (!ready_sent_) {
        ready_sent_ = true;
        ctx_.system.Send(coordinator_, MsgReadyToConfigure{state_.round_id});
      }
    }
    return;
  }
  if (const auto* m = std::get_if<MsgCheckpoint>(&msg)) {
    if (m->round != state_.round_id ||
        state_.phase != RoundPhase::kConfiguration) {
      return;
    }
    Configure(m->weights);
    return;
  }
  if (const auto* m = std::get_if<MsgReportArrived>(&msg)) {
    if (m->round != state_.round_id) return;
    ReportOutcome outcome = RecordReport(state_, m->device, now);
    bool counted = outcome == ReportOutcome::kCounted;
    if (outcome == ReportOutcome::kLate) late_reports_ += 1;
    ctx_.system.Send(m->aggregator,
                     MsgReportDecision{state_.round_id, m->device, counted});
    if (counted) {
      ReportingTick(state_, params_, now);
      if (state_.phase == RoundPhase::kCompleted) OnRoundClosed();
    }
    return;
  }
  if (const auto* m = std::get_if<MsgPartialAggregate>(&msg)) {
    if (m->round != state_.round_id) return;
    partials_[m->aggregator] = *m;
    if (partials_.size() == aggregators_.size()) TryAssemble();
    return;
  }
  if (const auto* m = std::get_if<MsgGroupResult>(&msg)) {
    if (m->round != state_.round_id) return;
    group_results_[m->aggregator] = *m;
    if (group_results_.size() == aggregators_.size()) TryAssemble();
    return;
  }
  if (const auto* m = std::get_if<MsgCommitOk>(&msg)) {
    if (m->round != state_.round_id || commit_done_ || !commit_requested_) {
      return;
    }
    commit_done_ = true;
    LedgerRecord rec;
    rec.round_id = state_.round_id;
    rec.task_name = task_.config.task_name;
    rec.weights = final_weights_;
    rec.metrics = final_metrics_;
    rec.committed_at = now;
    ctx_.ledger.Commit(std::move(rec));
    if (!outcome_sent_) {
      outcome_sent_ = true;
      ctx_.system.Send(coordinator_,
                       MsgRoundOutcome{state_.round_id, true, final_weights_});
    }
    return;
  }
  if (std::holds_alternative<MsgTeardown>(msg)) {
    Teardown();
    return;
  }
}

// ---------------------------------------------------------------------------
// Aggregator
// ---------------------------------------------------------------------------

Aggregator::Aggregator(ServerContext& ctx, RoundId round, ActorId master,
                       std::vector<DeviceId> assigned,
                       std::optional<SecAggSetup> secagg)
    : Actor(ActorKind::kAggregator),
      ctx_(ctx),
      round_(round),
      master_(master),
      assigned_(std::move(assigned)),
      secagg_(std::move(secagg)) {
  if (secagg_.has_value()) {
    committed_.assign(secagg_->group.size(), 0);
  }
}

void Aggregator::FinalizeSecAgg() {
  if (result_sent_) return;
  result_sent_ = true;
  MsgGroupResult result;
  result.round = round_;
  result.aggregator = id();
  result.member_count = secagg_->group.size();
  result.committed_count = static_cast<std::size_t>(
      std::count(committed_.begin(), committed_.end(), 1));
  result.loss_weighted_sum = loss_weighted_sum_;
  result.example_sum = example_sum_;
  if (result.committed_count == 0) {
    result.ok = false;
  } else {
    try {
      result.sum = FinalizeSum(secagg_->group, committed_, masked_sum_,
                               reveals_, secagg_->seed_commitments);
      result.ok = true;
    } catch (const BelowThresholdError&) {
      // Below the survivor threshold nothing may be released; the group's
      // contribution is abandoned.
      result.ok = false;
      result.sum = FixedVector{};
    }
  }
  ctx_.system.Send(master_, std::move(result));
}

void Aggregator::OnMessage(const ActorMsg& msg) {
  if (const auto* m = std::get_if<MsgFromDevice>(&msg)) {
    if (const auto* report = std::get_if<ReportMsg>(&m->wire)) {
      if (report->round_id != round_ || buffered_.contains(m->device)) return;
      Buffered b;
      b.update = report->update;
      b.metrics = report->metrics;
      b.is_masked = false;
      buffered_[m->device] = std::move(b);
      ctx_.system.Send(master_, MsgReportArrived{round_, id(), m->device});
      return;
    }
    if (const auto* masked = std::get_if<MaskedInputMsg>(&m->wire)) {
      if (masked->round_id != round_ || !secagg_.has_value() ||
          buffered_.contains(m->device)) {
        return;
      }
      auto member = secagg_->member_index.find(m->device);
      if (member == secagg_->member_index.end() ||
          member->second != masked->member_index) {
        return;
      }
      Buffered b;
      b.masked = masked->masked;
      b.metrics = masked->metrics;
      b.is_masked = true;
      buffered_[m->device] = std::move(b);
      ctx_.system.Send(master_, MsgReportArrived{round_, id(), m->device});
      return;
    }
    if (const auto* reveal = std::get_if<RevealSharesMsg>(&m->wire)) {
      if (reveal->round_id != round_ || !secagg_.has_value()) return;
      auto member = secagg_->member_index.find(m->device);
      if (member == secagg_->member_index.end() ||
          member->second != reveal->member_index) {
        return;
      }
      reveals_.push_back(RevealedShares{reveal->member_index, reveal->shares});
      return;
    }
    // AdvertiseKeys and device-side aborts carry no aggregation state.
    return;
  }
  if (const auto* m = std::get_if<MsgReportDecision>(&msg)) {
    if (m->round != round_) return;
    auto it = buffered_.find(m->device);
    if (it == buffered_.end()) return;
    Buffered& b = it->second;
    if (m->counted) {
      if (b.is_masked) {
        AddInto(masked_sum_, b.masked);
        committed_[secagg_->member_index.at(m->device)] = 1;
      } else if (!b.update.delta.empty() || b.update.weight > 0) {
        AbsorbUpdate(plain_sum_, b.update);
      } else {
        plain_sum_.contributions += 1;  // evaluation report: metrics only
      }
      auto examples = b.metrics.find("examples");
      double n = examples != b.metrics.end() ? examples->second : 0.0;
      auto loss = b.metrics.find("loss_before");
      if (loss == b.metrics.end()) loss = b.metrics.find("loss");
      if (loss != b.metrics.end()) {
        loss_weighted_sum_ += loss->second * n;
        example_sum_ += n;
      }
      RejectWithWindowMsg next;
      SimTime now = ctx_.events.now();
      if (ctx_.config.pace_enabled) {
        ReconnectWindow w =
            SuggestWindow(ctx_.pop_stats, ctx_.config.pace_policy, now,
                          DeriveSeed(ctx_.seed, m->device,
                                     static_cast<std::uint64_t>(now)));
        next.window_start = w.start;
        next.window_end = w.end;
      } else {
        next.window_start = now + ctx_.config.pace_policy.min_lead_ms;
        next.window_end = next.window_start + kMillisPerSecond;
      }
      ctx_.SendToDevice(m->device, next, round_);
    } else {
      ctx_.SendToDevice(m->device, AbortMsg{round_, "report_rejected"},
                        round_);
    }
    return;
  }
  if (const auto* m = std::get_if<MsgRoundClosed>(&msg)) {
    if (m->round != round_ || closed_) return;
    closed_ = true;
    completed_ = m->completed;
    if (!completed_) return;  // nothing is ever released for failed rounds
    if (!secagg_.has_value()) {
      MsgPartialAggregate partial;
      partial.round = round_;
      partial.aggregator = id();
      partial.partial = plain_sum_;
      partial.loss_weighted_sum = loss_weighted_sum_;
      partial.example_sum = example_sum_;
      ctx_.system.Send(master_, std::move(partial));
    } else {
      // Reveals trail the last commit ack by a second plus uplink latency;
      // wait almost the full grace before finalizing the group.
      SimTime wait = std::max<SimTime>(
          1500, ctx_.config.finalize_grace_ms - kMillisPerSecond);
      system().Send(id(), MsgTick{kTickSecAggFinalize}, wait);
    }
    return;
  }
  if (const auto* m = std::get_if<MsgTick>(&msg)) {
    if (m->token == kTickSecAggFinalize && secagg_.has_value() && completed_) {
      FinalizeSecAgg();
    }
    return;
  }
}

// ---------------------------------------------------------------------------
// ServerHarness
// ---------------------------------------------------------------------------

ServerHarness::ServerHarness(EventQueue& events, ActorSystem& system,
                             LockService& lock, RoundLedger& ledger,
                             DeploymentRegistry& deployment,
                             ServerConfig config, std::uint64_t seed)
    : ctx_(events, system, lock, ledger, deployment, std::move(config), seed) {}

void ServerHarness::Start(std::size_t selector_count) {
  for (std::size_t i = 0; i < selector_count; ++i) {
    ctx_.selectors.push_back(
        ctx_.system.Spawn(std::make_unique<Selector>(ctx_, i)));
  }
  ctx_.system.Spawn(std::make_unique<Coordinator>(ctx_));
}

ActorId ServerHarness::InjectKill(ActorKind kind, std::size_t index) {
  std::vector<ActorId> ids = ctx_.system.AliveOfKind(kind);
  if (ids.empty()) return 0;
  ActorId target = ids[index % ids.size()];
  ctx_.system.Kill(target);
  ctx_.kills_executed[kind] += 1;
  return target;
}

}  // namespace flsim
