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

#include "flsim/plan.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "flsim/errors.hpp"
#include "flsim/rng.hpp"

namespace flsim {
namespace {

using nlohmann::json;

// id -> loss kind, per supported runtime version.
struct RegistryEntry {
  const char* id;
  int version;
  LossKind loss;
};

constexpr RegistryEntry kComputationRegistry[] = {
    {"linear_regression_l2", 3, LossKind::kLinearRegressionL2},
    {"logistic_regression", 3, LossKind::kLogisticRegression},
    {"linreg_l2_compat", 2, LossKind::kLinearRegressionL2},
    {"logreg_compat", 2, LossKind::kLogisticRegression},
};

// (current id, target version) -> renamed id. Absent entries mean the change
// cannot be bridged by a rename.
struct TransformEntry {
  const char* from_id;
  int to_version;
  const char* to_id;
};

constexpr TransformEntry kVersionTransforms[] = {
    {"linear_regression_l2", 2, "linreg_l2_compat"},
    {"logistic_regression", 2, "logreg_compat"},
    {"linreg_l2_compat", 3, "linear_regression_l2"},
    {"logreg_compat", 3, "logistic_regression"},
};

const RegistryEntry* FindComputation(const std::string& id) {
  for (const RegistryEntry& e : kComputationRegistry) {
    if (id == e.id) return &e;
  }
  return nullptr;
}

std::string KindName(TaskKind k) {
  return k == TaskKind::kTraining ? "training" : "evaluation";
}

TaskKind KindFromName(const std::string& s) {
  if (s == "training") return TaskKind::kTraining;
  if (s == "evaluation") return TaskKind::kEvaluation;
  throw InvalidConfigError("kind: expected 'training' or 'evaluation', got '" +
                           s + "'");
}

json RoundParamsToJson(const RoundParams& p) {
  return json{{"goal_count", p.goal_count},
              {"overselect_factor", p.overselect_factor},
              {"min_fraction", p.min_fraction},
              {"selection_timeout_ms", p.selection_timeout_ms},
              {"report_window_ms", p.report_window_ms},
              {"dropout_tolerance", p.dropout_tolerance}};
}

RoundParams RoundParamsFromJson(const json& j) {
  RoundParams p;
  p.goal_count = j.at("goal_count").get<std::uint32_t>();
  p.overselect_factor = j.value("overselect_factor", 1.3);
  p.min_fraction = j.value("min_fraction", 0.8);
  p.selection_timeout_ms = j.value("selection_timeout_ms", SimTime{60000});
  p.report_window_ms = j.value("report_window_ms", SimTime{300000});
  p.dropout_tolerance = j.value("dropout_tolerance", 0.1);
  return p;
}

json SelectorToJson(const DataSelector& s) {
  return json{{"tag", s.tag}, {"max_age_ms", s.max_age_ms}};
}

DataSelector SelectorFromJson(const json& j) {
  DataSelector s;
  s.tag = j.value("tag", std::string{});
  s.max_age_ms = j.value("max_age_ms", SimTime{0});
  return s;
}

TaskConfig TaskConfigFromJson(const json& j) {
  TaskConfig cfg;
  try {
    cfg.population_name = j.at("population_name").get<std::string>();
    cfg.task_name = j.at("task_name").get<std::string>();
    cfg.kind = KindFromName(j.at("kind").get<std::string>());
    const json& h = j.at("hyper");
    cfg.hyper.epochs = h.at("epochs").get<int>();
    cfg.hyper.batch_size = h.at("batch_size").get<int>();
    cfg.hyper.eta = h.at("eta").get<double>();
    cfg.round_params = RoundParamsFromJson(j.at("round_params"));
    if (j.contains("data_selector")) {
      cfg.data_selector = SelectorFromJson(j.at("data_selector"));
    }
    cfg.required_runtime_versions =
        j.at("required_runtime_versions").get<std::vector<int>>();
    if (j.contains("secagg_group_min_k") && !j["secagg_group_min_k"].is_null()) {
      cfg.secagg_group_min_k = j["secagg_group_min_k"].get<std::uint32_t>();
    }
    const json& m = j.at("model");
    cfg.model.computation = m.at("computation").get<std::string>();
    cfg.model.dim = m.at("dim").get<std::size_t>();
    cfg.code_review_ok = j.value("code_review_ok", false);
    cfg.test_predicates = j.value(
        "test_predicates",
        std::vector<std::string>{"update_is_finite", "loss_is_finite"});
    if (j.contains("resource_limits")) {
      const json& r = j["resource_limits"];
      cfg.resource_limits.memory_bytes =
          r.value("memory_bytes", cfg.resource_limits.memory_bytes);
      cfg.resource_limits.compute_ms =
          r.value("compute_ms", cfg.resource_limits.compute_ms);
    }
  } catch (const json::exception& e) {
    throw InvalidConfigError(std::string("task config: ") + e.what());
  }
  return cfg;
}

json TaskConfigToJson(const TaskConfig& cfg) {
  json j{{"population_name", cfg.population_name},
         {"task_name", cfg.task_name},
         {"kind", KindName(cfg.kind)},
         {"hyper",
          {{"epochs", cfg.hyper.epochs},
           {"batch_size", cfg.hyper.batch_size},
           {"eta", cfg.hyper.eta}}},
         {"round_params", RoundParamsToJson(cfg.round_params)},
         {"data_selector", SelectorToJson(cfg.data_selector)},
         {"required_runtime_versions", cfg.required_runtime_versions},
         {"model",
          {{"computation", cfg.model.computation}, {"dim", cfg.model.dim}}},
         {"code_review_ok", cfg.code_review_ok},
         {"test_predicates", cfg.test_predicates},
         {"resource_limits",
          {{"memory_bytes", cfg.resource_limits.memory_bytes},
           {"compute_ms", cfg.resource_limits.compute_ms}}}};
  if (cfg.secagg_group_min_k.has_value()) {
    j["secagg_group_min_k"] = *cfg.secagg_group_min_k;
  } else {
    j["secagg_group_min_k"] = nullptr;
  }
  return j;
}

// Deterministic fixture used by the gate harness: consistent linear data so
// the convexity predicates are meaningful for both loss kinds.
Dataset GateFixture(std::size_t dim, std::size_t count, LossKind loss) {
  Rng rng(DeriveSeed(0xf1c5u, dim, count));
  std::vector<double> truth(dim);
  for (double& t : truth) t = rng.Normal(0.0, 1.0);
  Dataset data;
  data.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Example e;
    e.features.resize(dim);
    double z = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      e.features[d] = rng.Normal(0.0, 1.0);
      z += truth[d] * e.features[d];
    }
    e.label = loss == LossKind::kLogisticRegression ? (z > 0.0 ? 1.0 : 0.0)
                                                     : z + rng.Normal(0.0, 0.01);
    e.timestamp = static_cast<SimTime>(i);
    e.tag = "train";
    data.push_back(std::move(e));
  }
  return data;
}

struct PlanRunResult {
  ModelUpdate update;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

PlanRunResult RunPlanOnFixture(const Plan& plan, const Dataset& fixture) {
  LossKind loss = ComputationLoss(plan.device_part.computation_id);
  ModelParams w0;
  w0.weights.assign(plan.model_dim, 0.0);
  PlanRunResult r;
  r.loss_before = Evaluate(loss, w0, fixture).loss;
  if (plan.device_part.mutate_weights) {
    Hyperparameters hyper{plan.device_part.epochs, plan.device_part.batch_size,
                          plan.device_part.eta};
    r.update = ClientUpdate(loss, w0, fixture, hyper, /*shuffle_seed=*/17);
    ModelParams w1 = w0;
    double n = static_cast<double>(r.update.weight);
    for (std::size_t i = 0; i < w1.weights.size(); ++i) {
      w1.weights[i] += r.update.delta[i] / n;
    }
    r.loss_after = Evaluate(loss, w1, fixture).loss;
  } else {
    r.loss_after = r.loss_before;
  }
  return r;
}

bool RunPredicate(const std::string& name, const PlanRunResult& run,
                  std::string& detail) {
  if (name == "update_is_finite") {
    bool ok = std::all_of(run.update.delta.begin(), run.update.delta.end(),
                          [](double v) { return std::isfinite(v); });
    if (!ok) detail = "update_is_finite: non-finite delta entry";
    return ok;
  }
  if (name == "loss_is_finite") {
    bool ok = std::isfinite(run.loss_before) && std::isfinite(run.loss_after) &&
              run.loss_before >= 0.0 && run.loss_after >= 0.0;
    if (!ok) detail = "loss_is_finite: loss not finite and non-negative";
    return ok;
  }
  if (name == "loss_decreases") {
    bool ok = run.loss_after <= run.loss_before;
    if (!ok) {
      detail = "loss_decreases: " + std::to_string(run.loss_before) + " -> " +
               std::to_string(run.loss_after);
    }
    return ok;
  }
  if (name == "metrics_nonnegative") {
    bool ok = run.loss_before >= 0.0 && run.loss_after >= 0.0;
    if (!ok) detail = "metrics_nonnegative: negative metric";
    return ok;
  }
  detail = "unknown predicate '" + name + "'";
  return false;
}

}  // namespace

bool RuntimeVersionSupported(int version) {
  for (const RegistryEntry& e : kComputationRegistry) {
    if (e.version == version) return true;
  }
  return false;
}

LossKind ComputationLoss(const std::string& computation_id) {
  const RegistryEntry* e = FindComputation(computation_id);
  if (e == nullptr) {
    throw InvalidConfigError("unknown computation id '" + computation_id + "'");
  }
  return e->loss;
}

void ValidateTaskConfig(const TaskConfig& cfg) {
  std::vector<std::string> reasons;
  if (cfg.population_name.empty()) reasons.push_back("population_name empty");
  if (cfg.task_name.empty()) reasons.push_back("task_name empty");
  if (cfg.hyper.eta < 0.0) reasons.push_back("hyper.eta must be >= 0");
  if (cfg.hyper.epochs < 1) reasons.push_back("hyper.epochs must be >= 1");
  if (cfg.hyper.batch_size < 1) {
    reasons.push_back("hyper.batch_size must be >= 1");
  }
  if (cfg.model.dim < 1) reasons.push_back("model.dim must be >= 1");
  if (FindComputation(cfg.model.computation) == nullptr) {
    reasons.push_back("model.computation unknown: '" + cfg.model.computation +
                      "'");
  }
  if (cfg.required_runtime_versions.empty()) {
    reasons.push_back("required_runtime_versions empty");
  }
  if (cfg.secagg_group_min_k.has_value() && *cfg.secagg_group_min_k < 1) {
    reasons.push_back("secagg_group_min_k must be >= 1");
  }
  try {
    ValidateRoundParams(cfg.round_params);
  } catch (const InvalidConfigError& e) {
    reasons.push_back(std::string("round_params: ") + e.what());
  }
  if (!reasons.empty()) {
    std::string joined;
    for (const std::string& r : reasons) {
      if (!joined.empty()) joined += "; ";
      joined += r;
    }
    throw InvalidConfigError("invalid task config: " + joined);
  }
}

std::string SerializeTaskConfig(const TaskConfig& cfg) {
  return TaskConfigToJson(cfg).dump(2);
}

TaskConfig ParseTaskConfig(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InvalidConfigError(std::string("task config parse: ") + e.what());
  }
  return TaskConfigFromJson(j);
}

std::vector<TaskConfig> ParseTaskConfigs(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InvalidConfigError(std::string("task config parse: ") + e.what());
  }
  std::vector<TaskConfig> out;
  if (j.is_array()) {
    for (const json& item : j) out.push_back(TaskConfigFromJson(item));
  } else {
    out.push_back(TaskConfigFromJson(j));
  }
  return out;
}

Plan GeneratePlan(const TaskConfig& cfg) {
  ValidateTaskConfig(cfg);

  int version = -1;
  for (int v : cfg.required_runtime_versions) {
    if (RuntimeVersionSupported(v)) version = std::max(version, v);
  }
  if (version < 0) {
    throw InvalidConfigError(
        "required_runtime_versions: none is a supported runtime version");
  }

  Plan plan;
  plan.model_dim = cfg.model.dim;
  plan.version = kCurrentRuntimeVersion;
  plan.device_part.computation_id = cfg.model.computation;
  plan.device_part.selector = cfg.data_selector;
  plan.device_part.epochs = cfg.hyper.epochs;
  plan.device_part.batch_size = cfg.hyper.batch_size;
  plan.device_part.eta = cfg.hyper.eta;
  plan.device_part.mutate_weights = cfg.kind == TaskKind::kTraining;
  plan.device_part.entry_points = {
      {"main", cfg.model.computation},
      {"metrics", "mean_loss"},
  };
  plan.server_part.aggregation_id =
      cfg.kind == TaskKind::kTraining ? "weighted_mean" : "metric_mean";
  plan.server_part.round_params = cfg.round_params;
  plan.server_part.secagg_min_k = cfg.secagg_group_min_k;
  if (version != kCurrentRuntimeVersion) {
    plan = DeriveVersionedPlan(plan, version);
  }
  return plan;
}

std::string SerializePlan(const Plan& plan) {
  json j{{"format_version", 1},
         {"version", plan.version},
         {"model_dim", plan.model_dim},
         {"device_part",
          {{"computation_id", plan.device_part.computation_id},
           {"selector", SelectorToJson(plan.device_part.selector)},
           {"epochs", plan.device_part.epochs},
           {"batch_size", plan.device_part.batch_size},
           {"eta", plan.device_part.eta},
           {"mutate_weights", plan.device_part.mutate_weights},
           {"entry_points", plan.device_part.entry_points}}},
         {"server_part",
          {{"aggregation_id", plan.server_part.aggregation_id},
           {"round_params", RoundParamsToJson(plan.server_part.round_params)}}}};
  if (plan.server_part.secagg_min_k.has_value()) {
    j["server_part"]["secagg_min_k"] = *plan.server_part.secagg_min_k;
  } else {
    j["server_part"]["secagg_min_k"] = nullptr;
  }
  return j.dump();
}

Plan ParsePlan(const std::string& bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    throw DecodeError(std::string("plan parse: ") + e.what());
  }
  if (j.value("format_version", 0) != 1) {
    throw DecodeError("plan: unsupported format_version");
  }
  Plan plan;
  try {
    plan.version = j.at("version").get<int>();
    plan.model_dim = j.at("model_dim").get<std::size_t>();
    const json& d = j.at("device_part");
    plan.device_part.computation_id = d.at("computation_id").get<std::string>();
    plan.device_part.selector = SelectorFromJson(d.at("selector"));
    plan.device_part.epochs = d.at("epochs").get<int>();
    plan.device_part.batch_size = d.at("batch_size").get<int>();
    plan.device_part.eta = d.at("eta").get<double>();
    plan.device_part.mutate_weights = d.at("mutate_weights").get<bool>();
    plan.device_part.entry_points =
        d.at("entry_points").get<std::map<std::string, std::string>>();
    const json& s = j.at("server_part");
    plan.server_part.aggregation_id =
        s.at("aggregation_id").get<std::string>();
    plan.server_part.round_params = RoundParamsFromJson(s.at("round_params"));
    if (s.contains("secagg_min_k") && !s["secagg_min_k"].is_null()) {
      plan.server_part.secagg_min_k = s["secagg_min_k"].get<std::uint32_t>();
    }
  } catch (const json::exception& e) {
    throw DecodeError(std::string("plan parse: ") + e.what());
  }
  return plan;
}

Plan DeriveVersionedPlan(const Plan& plan, int target_version) {
  if (target_version == plan.version) return plan;
  const std::string& id = plan.device_part.computation_id;
  for (const TransformEntry& t : kVersionTransforms) {
    if (id == t.from_id && target_version == t.to_version) {
      Plan derived = plan;
      derived.version = target_version;
      derived.device_part.computation_id = t.to_id;
      derived.device_part.entry_points["main"] = t.to_id;
      return derived;
    }
  }
  throw IncompatibleVersionError("no transformation from '" + id +
                                 "' (version " + std::to_string(plan.version) +
                                 ") to runtime version " +
                                 std::to_string(target_version));
}

ResourceUsage SimulatePlanResources(const Plan& plan,
                                    std::size_t example_count) {
  ResourceUsage u;
  const std::size_t row = (plan.model_dim + 1) * sizeof(double);
  // Checkpoint, working copy and update vector, plus plan bytes, one batch
  // buffer and the selected examples.
  u.memory_bytes = 3 * plan.model_dim * sizeof(double) +
                   SerializePlan(plan).size() +
                   static_cast<std::size_t>(plan.device_part.batch_size) * row +
                   example_count * row;
  // Same cost model the simulated devices use, at unit speed.
  u.compute_ms = static_cast<SimTime>(2.0 * static_cast<double>(example_count) *
                                      plan.device_part.epochs);
  return u;
}

std::string FormatGateReport(const DeploymentGateReport& report) {
  std::ostringstream os;
  os << "deployment gate: " << (report.accepted() ? "ACCEPTED" : "REJECTED")
     << "\n"
     << "  code_review_ok:         " << (report.code_review_ok ? "pass" : "fail")
     << "\n"
     << "  predicates_pass:        " << (report.predicates_pass ? "pass" : "fail")
     << "\n"
     << "  resources_within_range: "
     << (report.resources_within_range ? "pass" : "fail") << "\n"
     << "  versions_all_pass:      "
     << (report.versions_all_pass ? "pass" : "fail") << "\n";
  for (const std::string& d : report.details) {
    os << "  - " << d << "\n";
  }
  return os.str();
}

DeploymentGateReport RunDeploymentGate(const TaskConfig& cfg,
                                       const Plan& plan) {
  DeploymentGateReport report;
  report.code_review_ok = cfg.code_review_ok;
  if (!cfg.code_review_ok) {
    report.details.push_back("code review attestation missing");
  }

  const std::size_t fixture_count = 32;
  LossKind loss = ComputationLoss(plan.device_part.computation_id);
  Dataset fixture = GateFixture(plan.model_dim, fixture_count, loss);

  PlanRunResult base_run = RunPlanOnFixture(plan, fixture);
  report.predicates_pass = true;
  for (const std::string& name : cfg.test_predicates) {
    std::string detail;
    if (!RunPredicate(name, base_run, detail)) {
      report.predicates_pass = false;
      report.details.push_back("predicate failed: " + detail);
    }
  }

  ResourceUsage usage = SimulatePlanResources(plan, fixture_count);
  report.resources_within_range = true;
  if (usage.memory_bytes > cfg.resource_limits.memory_bytes) {
    report.resources_within_range = false;
    report.details.push_back(
        "memory proxy " + std::to_string(usage.memory_bytes) +
        " B exceeds limit " + std::to_string(cfg.resource_limits.memory_bytes) +
        " B");
  }
  if (usage.compute_ms > cfg.resource_limits.compute_ms) {
    report.resources_within_range = false;
    report.details.push_back(
        "compute proxy " + std::to_string(usage.compute_ms) +
        " ms exceeds limit " + std::to_string(cfg.resource_limits.compute_ms) +
        " ms");
  }

  report.versions_all_pass = true;
  for (int v : cfg.required_runtime_versions) {
    Plan versioned;
    try {
      versioned = DeriveVersionedPlan(plan, v);
    } catch (const IncompatibleVersionError& e) {
      report.versions_all_pass = false;
      report.details.push_back(std::string("version ") + std::to_string(v) +
                               ": " + e.what());
      continue;
    }
    PlanRunResult run = RunPlanOnFixture(versioned, fixture);
    // Versioned and unversioned plans must be semantically equivalent.
    if (run.update.delta != base_run.update.delta ||
        run.update.weight != base_run.update.weight) {
      report.versions_all_pass = false;
      report.details.push_back("version " + std::to_string(v) +
                               ": output differs from unversioned plan");
      continue;
    }
    for (const std::string& name : cfg.test_predicates) {
      std::string detail;
      if (!RunPredicate(name, run, detail)) {
        report.versions_all_pass = false;
        report.details.push_back("version " + std::to_string(v) +
                                 " predicate failed: " + detail);
      }
    }
  }
  return report;
}

}  // namespace flsim
