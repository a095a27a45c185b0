#pragma once

#include <string>

#include "json.hpp"
#include "interrogate/data.hpp"
#include "interrogate/train.hpp"

namespace interrogate {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// The run configuration document. Every field has a default; unknown keys
// are rejected everywhere.
struct RunConfig {
  SyntheticSpec dataset;
  ModelConfig model;
  std::vector<TaskSpec> tasks;  // defaults to the generator's tasks
  OptimizerConfig optimizer;
  SparsityConfig sparsity;
  SweepPlan sweep;
  std::string output_dir = "runs/out";
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// The fully-materialized document (all defaults filled in), echoed next to
// every run's outputs.
nlohmann::json resolved_config(const RunConfig& cfg);

}  // namespace interrogate
