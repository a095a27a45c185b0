#pragma once

#include <string>
#include <vector>

#include "interrogate/tensor.hpp"

namespace interrogate {

// Learnable binary gate logits, one row of channels per (task, gate site).
// Sites narrower than the widest one are padded; padded entries are masked
// out of every loss and statistic. Gate value 1 selects the task-specific
// feature, 0 the shared one; ties at sigmoid(alpha) == threshold fall to
// the shared side.
class GateBank {
 public:
  GateBank() = default;
  GateBank(int tasks, std::vector<int> site_widths, double init_logit);

  int tasks() const { return tasks_; }
  int sites() const { return static_cast<int>(widths_.size()); }
  int width(int site) const { return widths_[static_cast<size_t>(site)]; }
  int max_width() const { return max_width_; }
  const std::vector<int>& site_widths() const { return widths_; }
  double threshold() const { return 0.5; }

  Tensor& alpha() { return alpha_; }
  const Tensor& alpha() const { return alpha_; }
  const Tensor& validity() const { return validity_; }

  // Differentiable gate vector for one site: ste_threshold(sigmoid(alpha)).
  Tensor mask(int task, int site) const;

  // Discrete gate decision, bypassing the graph. Applies the same
  // sigmoid-then-compare as mask() so extraction can never disagree with
  // the forward pass.
  bool on(int task, int site, int channel) const;

  void set_trainable(bool v) { alpha_.set_requires_grad(v); }
  bool trainable() const { return alpha_.requires_grad(); }

  // Overwrites every valid logit (used by the frozen baseline modes).
  void fill_logits(double value);

 private:
  int tasks_ = 0;
  int max_width_ = 0;
  std::vector<int> widths_;
  Tensor alpha_;     // [T, S, Cmax]
  Tensor validity_;  // [S, Cmax], constant 0/1
};

// Learnable fusion logits beta, one row per mixing site (the sites feeding
// a downstream shared transform). softmax over the task axis yields the
// per-channel combination weights of the shared branch.
class SharedMixer {
 public:
  SharedMixer() = default;
  SharedMixer(int tasks, std::vector<int> site_widths);

  int tasks() const { return tasks_; }
  int sites() const { return static_cast<int>(widths_.size()); }
  int width(int site) const { return widths_[static_cast<size_t>(site)]; }
  int max_width() const { return max_width_; }
  const std::vector<int>& site_widths() const { return widths_; }

  Tensor& beta() { return beta_; }
  const Tensor& beta() const { return beta_; }

  // Softmaxed weights for one site: [C_site, T]; rows sum to 1.
  Tensor weights(int site) const;

  // Frozen weights without graph recording.
  std::vector<double> weights_frozen(int site) const;

  void set_trainable(bool v) { beta_.set_requires_grad(v); }
  bool trainable() const { return beta_.requires_grad(); }

 private:
  int tasks_ = 0;
  int max_width_ = 0;
  std::vector<int> widths_;
  Tensor beta_;  // [S, Cmax, T]
};

struct SparsityConfig {
  enum class Variant { kHinge, kL1, kNone };
  double lambda_s = 0.0;
  std::vector<double> tau;  // per-task hinge targets
  Variant variant = Variant::kHinge;
};

// Per-channel select of task vs shared features; mask broadcasts over all
// non-channel extents. Every output channel is a bitwise copy of exactly
// one input.
Tensor mix_task(const Tensor& mask, const Tensor& task_feat,
                const Tensor& shared_feat, int channel_axis);

// Convex per-channel combination of all tasks' features under the
// softmaxed mixer weights of `site`.
Tensor mix_shared(const SharedMixer& mixer, int site,
                  const std::vector<Tensor>& task_feats, int channel_axis);

// Gate usage regularizer. Hinge: mean over tasks of
// max(0, mean over sites of (mean over valid channels of sigmoid(alpha))
// - tau_t). L1: the same without target or clipping. Differentiates
// through sigmoid directly (no STE on this path).
Tensor sparsity_loss(const GateBank& bank, const SparsityConfig& cfg);

struct GateReport {
  struct TaskStats {
    std::string name;
    double selection_ratio = 0.0;        // fraction of gates that are on
    std::vector<double> per_site;        // same, per gate site
    double shared_contribution = 0.0;    // share of argmax mixer slots
  };
  std::vector<TaskStats> tasks;
};

// Read-only snapshot of the routing behavior: per-task selection ratios
// over the gate sites and arg-max contribution shares over the mixer
// slots (ties go to the lowest task index).
GateReport gate_statistics(const GateBank& bank, const SharedMixer& mixer);

}  // namespace interrogate
