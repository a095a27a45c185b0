#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "interrogate/data.hpp"
#include "interrogate/metrics.hpp"
#include "interrogate/model.hpp"

namespace interrogate {

struct OptimizerConfig {
  double main_lr = 1e-3;
  double weight_decay = 1e-4;
  // Desk-scale gate defaults; see the README for the plain large-scale
  // recipe (gate_lr 0.1, no clip, no clamp). At these widths the raw
  // selection gradients drown the sparsity signal, so the task-loss part
  // of the gate step is clipped and logits are kept near the threshold.
  enum class GateKind { kSgd, kAdam };
  GateKind gate_kind = GateKind::kSgd;
  double gate_lr = 15.0;
  double gate_clamp = 0.4;
  // Elementwise clip on the task-loss part of the gate gradient. The raw
  // selection gradients are orders larger than the sparsity term at these
  // widths; clipping that part keeps single batches from flipping gates
  // while the regularizer's pressure is applied unclipped. 0 disables.
  double gate_grad_clip = 1e-4;
  int epochs = 30;
  int batch_size = 32;
  uint64_t seed = 1;
  enum class Schedule { kNone, kStep, kPolynomial };
  Schedule schedule = Schedule::kNone;
  int step_size = 20;
  double step_factor = 1.0 / 3.0;
  double poly_power = 0.9;

  double lr_at(int epoch) const;
};

// Adam with torch-style L2 decay folded into the gradient.
class Adam {
 public:
  Adam(ParamList params, double weight_decay);
  void step(double lr);
  void zero_grad();
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  double weight_decay_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

class Sgd {
 public:
  // grad_clip > 0 clamps every gradient coordinate to [-clip, clip]
  explicit Sgd(ParamList params, double grad_clip = 0.0);
  void step(double lr);
  void zero_grad();
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  double grad_clip_;
};

struct EpochStats {
  int epoch = 0;
  std::vector<double> task_losses;
  double weighted = 0.0;
  double sparsity = 0.0;
  std::vector<double> selection_ratios;  // per task
  double main_lr = 0.0;
  double gate_lr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<double> test_metrics;  // per task
};

std::vector<double> evaluate(const GatedEncoder& enc, const Dataset& test,
                             const std::vector<TaskSpec>& specs,
                             int batch_size);
double evaluate_single(const SingleTaskNet& net, const Dataset& test,
                       int task_index, int batch_size);

// Baseline: an independent network for one task.
TrainResult train_single_task(SingleTaskNet& net, const Dataset& train,
                              const Dataset& test, int task_index,
                              const OptimizerConfig& cfg);

// Joint training with the two-optimizer scheme: Adam on transforms and
// heads, plain SGD on the gate and mixer logits. The two parameter sets
// are asserted disjoint.
TrainResult train_interrogate(GatedEncoder& enc, const Dataset& train,
                              const Dataset& test,
                              const std::vector<TaskSpec>& specs,
                              const OptimizerConfig& ocfg,
                              const SparsityConfig& scfg);

struct SweepPlan {
  std::vector<double> lambda_grid = {0.01, 0.03, 0.05, 0.07, 0.10};
  std::vector<std::vector<double>> tau_grid = {{0.0, 0.0, 0.0},
                                               {1.0, 1.0, 1.0}};
  std::vector<uint64_t> seeds = {1};
  int epochs = 10;  // per-cell budget
  SparsityConfig::Variant variant = SparsityConfig::Variant::kHinge;
};

struct SweepCell {
  size_t index = 0;
  double lambda_s = 0.0;
  std::vector<double> tau;
  uint64_t seed = 1;
  SparsityConfig::Variant variant = SparsityConfig::Variant::kHinge;
  bool ok = false;
  std::string error;
  uint64_t flops = 0;          // pruned model, total
  uint64_t encoder_flops = 0;  // pruned model, heads excluded
  uint64_t params = 0;
  double delta_mtl = 0.0;
  std::vector<double> metrics;          // per task
  std::vector<double> selection_ratios;  // per task, final
  double max_rel_deviation = 0.0;
};

struct SweepReport {
  std::vector<SweepCell> cells;
  std::vector<size_t> pareto;  // indices of non-dominated cells
  std::vector<double> stl_metrics;
  std::vector<double> uniform_metrics;
  double uniform_delta = 0.0;
  uint64_t uniform_flops = 0;
  uint64_t stl_flops = 0;
};

struct SweepContext {
  ModelConfig model;
  std::vector<TaskSpec> specs;
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  OptimizerConfig opt;
  // per sweep seed: the trained single-task baselines and their metrics
  std::map<uint64_t, const std::vector<SingleTaskNet>*> stl;
  std::map<uint64_t, std::vector<double>> stl_metrics;
  std::vector<double> uniform_metrics;
  uint64_t uniform_flops = 0;
  // shared-branch initialization source (the trained uniform baseline)
  const GatedEncoder* shared_init = nullptr;
  // invoked after each finished cell (ordering not guaranteed)
  std::function<void(const SweepCell&)> on_cell;
  // invoked with the trained artifacts of each successful cell; writes must
  // go to per-cell locations (no serialization is provided)
  std::function<void(const SweepCell&, GatedEncoder&, const PrunedModel&,
                     const TrainResult&)>
      on_artifacts;
};

// Trains, collapses, verifies and scores every (lambda, tau, seed) cell;
// failures are recorded per cell and the sweep continues.
SweepReport run_sweep(const SweepPlan& plan, const SweepContext& ctx,
                      int jobs = 1);

}  // namespace interrogate
