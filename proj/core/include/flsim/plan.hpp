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

#ifndef FLSIM_PLAN_HPP_
#define FLSIM_PLAN_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flsim/common.hpp"
#include "flsim/fedavg.hpp"
#include "flsim/protocol.hpp"

namespace flsim {

// Runtime versions with registry entries. Computation "graphs" are named
// references into a registry of built-in computations; version transforms
// rewrite the names, which captures the versioned-plan mechanism without a
// tensor IR.
inline constexpr int kCurrentRuntimeVersion = 3;
bool RuntimeVersionSupported(int version);

// Resolves a computation id (any supported version's name) to its loss.
// Throws InvalidConfigError for unknown ids.
LossKind ComputationLoss(const std::string& computation_id);

enum class TaskKind { kTraining, kEvaluation };

struct DataSelector {
  std::string tag;          // empty selects all shards
  SimTime max_age_ms = 0;   // 0 = no age limit
};

struct ModelSpec {
  std::string computation;  // registry id at the current runtime version
  std::size_t dim = 0;
};

struct ResourceLimits {
  std::uint64_t memory_bytes = 64ull * 1024 * 1024;
  SimTime compute_ms = 60 * kMillisPerSecond;
};

struct TaskConfig {
  std::string population_name;
  std::string task_name;
  TaskKind kind = TaskKind::kTraining;
  Hyperparameters hyper;
  RoundParams round_params;
  DataSelector data_selector;
  std::vector<int> required_runtime_versions;
  std::optional<std::uint32_t> secagg_group_min_k;
  ModelSpec model;
  // Stand-in for the "built from auditable, peer reviewed code" condition; a
  // process attestation, not something the gate can compute.
  bool code_review_ok = false;
  std::vector<std::string> test_predicates;
  ResourceLimits resource_limits;
};

void ValidateTaskConfig(const TaskConfig& cfg);  // throws InvalidConfigError
std::string SerializeTaskConfig(const TaskConfig& cfg);
TaskConfig ParseTaskConfig(const std::string& json_text);
// Accepts a single config object or an array of them (task groups).
std::vector<TaskConfig> ParseTaskConfigs(const std::string& json_text);

// The two halves of a plan. The device part carries no aggregation logic and
// the server part no per-example logic.
struct DevicePart {
  std::string computation_id;
  DataSelector selector;
  int epochs = 1;
  int batch_size = 1;
  double eta = 0.0;
  bool mutate_weights = true;  // false for evaluation plans
  std::map<std::string, std::string> entry_points;
};

struct ServerPart {
  std::string aggregation_id;  // "weighted_mean" or "metric_mean"
  RoundParams round_params;
  std::optional<std::uint32_t> secagg_min_k;
};

struct Plan {
  DevicePart device_part;
  ServerPart server_part;
  int version = kCurrentRuntimeVersion;
  std::size_t model_dim = 0;
};

// Deterministic: equal configs yield byte-identical serialized plans.
Plan GeneratePlan(const TaskConfig& cfg);

std::string SerializePlan(const Plan& plan);  // self-describing, versioned
Plan ParsePlan(const std::string& bytes);

// Rewrites computation ids through the registered transformation table;
// the result is semantically equivalent (the gate verifies this by running
// identical test predicates on both). Throws IncompatibleVersionError when
// no transformation path exists.
Plan DeriveVersionedPlan(const Plan& plan, int target_version);

struct DeploymentGateReport {
  bool code_review_ok = false;
  bool predicates_pass = false;
  bool resources_within_range = false;
  bool versions_all_pass = false;
  std::vector<std::string> details;

  bool accepted() const {
    return code_review_ok && predicates_pass && resources_within_range &&
           versions_all_pass;
  }
};

std::string FormatGateReport(const DeploymentGateReport& report);

// Executes the bundled test predicates on a deterministic fixture, checks
// simulated resource usage against the configured safe ranges, and reruns
// the predicates through every claimed runtime version (verifying that the
// versioned plan produces identical results). Failures are reported, never
// thrown.
DeploymentGateReport RunDeploymentGate(const TaskConfig& cfg, const Plan& plan);

// Resource proxies for one simulated plan execution (exposed for tests).
struct ResourceUsage {
  std::uint64_t memory_bytes = 0;
  SimTime compute_ms = 0;
};
ResourceUsage SimulatePlanResources(const Plan& plan,
                                    std::size_t example_count);

}  // namespace flsim

#endif  // FLSIM_PLAN_HPP_
