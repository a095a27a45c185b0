#pragma once

#include <cstdint>
#include <vector>

#include "interrogate/model.hpp"

namespace interrogate {

// Frozen snapshot of the learned routing: thresholded gates plus the
// softmaxed mixer weights, with a checksum tying it to the source model's
// routing parameters.
struct GatePattern {
  int tasks = 0;
  std::vector<int> gate_widths;
  std::vector<int> mixer_widths;
  // masks[t][site][c] in {0,1}
  std::vector<std::vector<std::vector<uint8_t>>> masks;
  // weights[site][c * tasks + t], rows sum to 1
  std::vector<std::vector<double>> mixer_weights;
  uint64_t checksum = 0;
};

GatePattern extract_pattern(const GatedEncoder& enc);
uint64_t routing_checksum(const GatedEncoder& enc);

// Consumer slot source: the channel either comes from the task branch's
// compact output or from the shared branch's.
struct SlotRoute {
  bool from_task = true;
  int index = 0;  // row index into the compact branch output
};

struct PrunedConvLayer {
  std::vector<int> shared_kept;               // empty => transform removed
  std::vector<std::vector<int>> task_kept;    // per task
  Tensor shared_w, shared_b;                  // compact rows
  std::vector<Tensor> task_w, task_b;
  bool pool = false;
  bool mixer_live = false;
  std::vector<double> mixer_w;                // [c_out * tasks] when live
  std::vector<std::vector<SlotRoute>> route;  // [tasks][c_out]
};

struct PrunedProj {
  std::vector<int> shared_kept;
  Tensor shared_w, shared_b;
  std::vector<std::vector<int>> task_kept;
  std::vector<Tensor> task_w, task_b;
  std::vector<std::vector<SlotRoute>> route;  // [tasks][width]
};

struct PrunedAttnLayer {
  int heads = 1;
  PrunedProj q, k, v, out, ffn1, ffn2;
  // Demand flags for the shared stream inside this block.
  bool shared_ln1_live = false;  // any shared q/k/v row kept
  bool shared_attn_live = false; // full shared attention required
  bool shared_ffn_live = false;  // shared residual + norm + ffn1 input chain
  bool shared_ffn2_live = false; // relu(h_s) consumed by shared ffn2 rows
  // Task layer norms survive only while some consumer projection does.
  std::vector<uint8_t> ln1_task_live, ln2_task_live;
  Tensor ln1_shared_g, ln1_shared_b, ln2_shared_g, ln2_shared_b;
  std::vector<Tensor> ln1_task_g, ln1_task_b, ln2_task_g, ln2_task_b;
  bool mixer_live = false;
  std::vector<double> mixer_w;  // [embed * tasks]
};

// Static network produced by collapsing a trained encoder: unselected
// rows deleted, gate selects replaced by gather tables, mixer weights
// frozen. Immutable after construction and safe for concurrent inference.
class PrunedModel {
 public:
  ModelConfig cfg;
  std::vector<TaskSpec> specs;
  Tensor stem_w, stem_b, pos_embed;
  std::vector<PrunedConvLayer> conv_layers;
  std::vector<PrunedAttnLayer> attn_layers;
  std::vector<Tensor> head_w, head_b;

  int tasks() const { return static_cast<int>(specs.size()); }
  std::vector<Tensor> forward_logits(const Tensor& x) const;
};

// Deletes task rows the gates never select and shared rows no task ever
// falls back to; cascades removal through shared transforms and mixers
// with no surviving consumers. Fails on a checksum mismatch with the
// pattern's source.
PrunedModel collapse(const GatedEncoder& enc, const GatePattern& pattern);

struct EquivalenceReport {
  std::vector<double> max_abs;  // per task
  std::vector<double> max_rel;
  double tolerance = 1e-9;
  bool pass = false;
};

// Runs both models on the same inputs and reports per-task output
// deviation; failure is a report outcome, not an exception.
EquivalenceReport verify_equivalence(const GatedEncoder& enc,
                                     const PrunedModel& pm, const Tensor& x);

}  // namespace interrogate
