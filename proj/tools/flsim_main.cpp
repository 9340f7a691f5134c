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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "flsim/analytics.hpp"
#include "flsim/errors.hpp"
#include "flsim/experiment.hpp"
#include "flsim/plan.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitGateRejected = 2;
constexpr int kExitConfigError = 3;

std::string ReadFile(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw flsim::Error("cannot read " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int RunCommand(const std::string& config_path, const std::string& out_dir) {
  flsim::ExperimentConfig cfg =
      flsim::ParseExperimentConfig(ReadFile(config_path));
  flsim::RunResult result = flsim::RunExperiment(cfg, out_dir);
  std::cout << "run complete: " << result.ledger.size()
            << " committed rounds, " << result.rounds.size()
            << " round records, " << result.events.size()
            << " session events\n";
  if (!out_dir.empty()) {
    std::cout << "artifacts written to " << out_dir << "\n";
  }
  return kExitOk;
}

int DeployTaskCommand(const std::string& config_path,
                      const std::string& registry_path) {
  std::vector<flsim::TaskConfig> tasks =
      flsim::ParseTaskConfigs(ReadFile(config_path));
  bool all_accepted = true;
  nlohmann::json registry = nlohmann::json::array();
  if (!registry_path.empty() && std::filesystem::exists(registry_path)) {
    registry = nlohmann::json::parse(ReadFile(registry_path));
  }
  for (const flsim::TaskConfig& task : tasks) {
    flsim::Plan plan = flsim::GeneratePlan(task);
    flsim::DeploymentGateReport report = flsim::RunDeploymentGate(task, plan);
    std::cout << "task '" << task.task_name << "' ("
              << task.population_name << ")\n"
              << flsim::FormatGateReport(report);
    if (report.accepted()) {
      registry.push_back(nlohmann::json{
          {"population_name", task.population_name},
          {"task_name", task.task_name},
          {"plan", nlohmann::json::parse(flsim::SerializePlan(plan))}});
    } else {
      all_accepted = false;
    }
  }
  if (!registry_path.empty()) {
    std::ofstream os(registry_path, std::ios::binary);
    os << registry.dump(2) << "\n";
    std::cout << "accepted tasks registered in " << registry_path << "\n";
  }
  return all_accepted ? kExitOk : kExitGateRejected;
}

int ReportCommand(const std::string& run_dir) {
  flsim::ProfileReport report = flsim::ReportProfile(run_dir);
  std::cout << report.ToText();
  std::filesystem::path dir(run_dir);
  std::ofstream os(dir / "profile.txt", std::ios::binary);
  os << report.ToText();
  std::cout << "profile written to " << (dir / "profile.txt").string() << "\n";
  return kExitOk;
}

int ReplayCommand(const std::string& run_dir, const std::string& filter) {
  std::string key;
  std::uint64_t value = 0;
  auto eq = filter.find('=');
  if (eq != std::string::npos) {
    key = filter.substr(0, eq);
    value = std::stoull(filter.substr(eq + 1));
  }
  if (key != "device" && key != "round") {
    throw flsim::InvalidConfigError(
        "--filter must be device=<id> or round=<id>");
  }

  std::ifstream is(std::filesystem::path(run_dir) / "events.log");
  if (!is) throw flsim::Error("missing events.log in " + run_dir);
  flsim::EventLog log = flsim::EventLog::ReadFrom(is);

  std::vector<flsim::SessionEvent> session;
  auto flush = [&]() {
    if (session.empty()) return;
    bool match = false;
    for (const flsim::SessionEvent& e : session) {
      if ((key == "device" && e.device_id == value) ||
          (key == "round" && e.round_id == value)) {
        match = true;
        break;
      }
    }
    if (match) {
      for (const flsim::SessionEvent& e : session) {
        std::cout << flsim::FormatEventLine(e) << "\n";
      }
      std::cout << "  shape: " << flsim::EncodeSession(session) << "\n";
    }
    session.clear();
  };
  for (const flsim::SessionEvent& e : log.events()) {
    if (e.symbol == '-' ||
        (!session.empty() && e.device_id != session.front().device_id)) {
      flush();
    }
    session.push_back(e);
  }
  flush();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "flsim: a federated learning round-protocol simulator with an "
      "actor-based server, simulated device fleet, secure aggregation and "
      "operational analytics"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string registry_path;
  std::string run_dir;
  std::string filter;

  CLI::App* run = app.add_subcommand("run", "run an experiment end to end");
  run->add_option("--config", config_path, "experiment config (JSON)")
      ->required();
  run->add_option("--out", out_dir, "artifact output directory")->required();

  CLI::App* deploy = app.add_subcommand(
      "deploy-task", "run the deployment gate over task configs");
  deploy->add_option("--config", config_path, "task config (JSON)")->required();
  deploy->add_option("--registry", registry_path,
                     "file to record accepted tasks in");

  CLI::App* report =
      app.add_subcommand("report", "summarize a finished run's artifacts");
  report->add_option("--run", run_dir, "run directory")->required();

  CLI::App* replay =
      app.add_subcommand("replay", "print filtered session event streams");
  replay->add_option("--run", run_dir, "run directory")->required();
  replay->add_option("--filter", filter, "device=<id> or round=<id>")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return RunCommand(config_path, out_dir);
    if (deploy->parsed()) return DeployTaskCommand(config_path, registry_path);
    if (report->parsed()) return ReportCommand(run_dir);
    if (replay->parsed()) return ReplayCommand(run_dir, filter);
  } catch (const flsim::GateRejectedError& e) {
    std::cerr << e.what() << "\n";
    return kExitGateRejected;
  } catch (const flsim::InvalidConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const flsim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
