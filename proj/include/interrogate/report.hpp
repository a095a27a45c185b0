#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "interrogate/metrics.hpp"
#include "interrogate/train.hpp"

namespace interrogate {

// Per-run scorecard written next to every checkpoint.
struct RunMetrics {
  std::string method;
  uint64_t seed = 0;
  std::vector<std::string> task_names;
  std::vector<std::string> metric_names;
  std::vector<bool> lower_better;
  std::vector<double> values;
  uint64_t flops = 0;
  uint64_t encoder_flops = 0;
  uint64_t params = 0;
  bool baseline = false;
};

nlohmann::json metrics_to_json(const RunMetrics& m);
RunMetrics metrics_from_json(const nlohmann::json& j);

struct MethodSummary {
  std::string method;
  std::vector<double> values;
  double delta_mtl = 0.0;
  double mean_rank = 0.0;
  uint64_t flops = 0;
  uint64_t params = 0;
  int runs = 0;
};

struct Report {
  std::vector<std::string> task_names;
  std::vector<std::string> metric_names;
  std::vector<MethodSummary> methods;  // baseline first
};

// Aggregates run scorecards (averaging seeds of a method), computes the
// relative-drop and mean-rank columns against the single-task rows.
Report build_report(const std::vector<RunMetrics>& runs);

std::string report_csv(const Report& r);
std::string report_text(const Report& r);

nlohmann::json gate_stats_json(const GateReport& report,
                               const std::vector<std::string>& task_names);

// Sweep emission. The CSV header is a frozen format contract.
std::string sweep_csv_header(const std::vector<TaskSpec>& specs);
std::string sweep_csv(const SweepReport& report,
                      const std::vector<TaskSpec>& specs);
std::string pareto_csv(const SweepReport& report,
                       const std::vector<TaskSpec>& specs);
nlohmann::json sweep_json(const SweepReport& report,
                          const std::vector<TaskSpec>& specs);
// 800x600 scatter of compute vs relative drop with the front joined.
std::string pareto_svg(const SweepReport& report);

nlohmann::json history_json(const EpochStats& stats);

std::string format_tau(const std::vector<double>& tau);

}  // namespace interrogate
