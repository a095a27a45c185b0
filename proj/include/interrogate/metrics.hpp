#pragma once

#include <map>
#include <string>
#include <vector>

#include "interrogate/prune.hpp"

namespace interrogate {

// Per-task metric values for a set of methods, with one designated
// single-task baseline row.
struct ScoreTable {
  std::vector<std::string> task_names;
  std::vector<bool> lower_better;  // direction bit per task
  std::map<std::string, std::vector<double>> rows;
  std::string baseline;

  void add_row(const std::string& method, std::vector<double> values);
};

// Averaged normalized drop versus the baseline row, in percent:
// (100/T) * sum_i (-1)^{l_i} (M_{m,i} - M_{b,i}) / M_{b,i}.
double delta_mtl(const ScoreTable& table, const std::string& method);

// Direction-aware rank per task (1 = best, ties averaged), then the mean
// across tasks.
std::map<std::string, double> mean_rank(const ScoreTable& table);

struct FlopLedger {
  struct Entry {
    std::string layer;
    std::string branch;  // "shared", "taskN", "mixer", "gate"
    uint64_t macs = 0;
    uint64_t params = 0;
  };
  std::vector<Entry> entries;

  uint64_t total_macs() const;
  uint64_t total_params() const;
  // Encoder cost only (head entries excluded).
  uint64_t encoder_macs() const;
  // Reported FLOPs use the 2 * MAC convention.
  uint64_t total_flops() const { return 2 * total_macs(); }
  uint64_t encoder_flops() const { return 2 * encoder_macs(); }
  uint64_t branch_macs(const std::string& branch) const;
  uint64_t branch_params(const std::string& branch) const;
};

// Analytic MAC/parameter accounting of a single-sample forward pass.
// Convs count c_out*c_in*k^2 per output position (zero padding included),
// linears rows*c_in per token, attention 2*N^2*C per stream, the mixer
// C*T per position; gate selects are 0-MAC entries.
FlopLedger count_flops(const GatedEncoder& enc);
FlopLedger count_flops(const PrunedModel& pm);
FlopLedger count_flops(const SingleTaskNet& net);

}  // namespace interrogate
