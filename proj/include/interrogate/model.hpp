#pragma once

#include <string>
#include <utility>
#include <vector>

#include "interrogate/layers.hpp"

namespace interrogate {

struct TaskSpec {
  enum class Kind { kClassification, kRegression };
  enum class Loss { kCrossEntropy, kL1, kSquaredError };
  enum class Metric { kAccuracy, kL1Error, kRmse };

  std::string name;
  Kind kind = Kind::kClassification;
  int classes = 2;  // classification
  int dim = 1;      // regression
  Loss loss = Loss::kCrossEntropy;
  double weight = 1.0;
  Metric metric = Metric::kAccuracy;

  int output_dim() const { return kind == Kind::kClassification ? classes : dim; }
  // Direction bit of the relative-drop metric: 1 when lower is better.
  bool lower_is_better() const { return metric != Metric::kAccuracy; }
  std::string metric_name() const;
};

struct ConvBlockSpec {
  int c_out = 8;
  bool pool = false;
};

struct ModelConfig {
  enum class Arch { kConv, kTransformer };
  Arch arch = Arch::kConv;
  int in_channels = 1, in_h = 16, in_w = 16;
  // conv arch
  int stem_channels = 8;
  std::vector<ConvBlockSpec> conv_blocks = {
      {8, false}, {8, true}, {16, false}, {16, true}};
  // transformer arch
  int patch = 4, embed = 16, heads = 2, depth = 2, ffn_mult = 4;
  double gate_init_logit = 0.4;

  int conv_feature_dim() const {
    return conv_blocks.empty() ? stem_channels : conv_blocks.back().c_out;
  }
  int tokens() const { return (in_h / patch) * (in_w / patch); }
  std::vector<int> gate_site_widths() const;
  std::vector<int> mixer_site_widths() const;
};

using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Input batch; exactly one of labels[t] / targets[t] is populated per task.
struct Batch {
  Tensor x;
  std::vector<std::vector<int>> labels;
  std::vector<Tensor> targets;
};

// Plain single-branch blocks used by the single-task baselines. Their
// forward passes run the exact op sequence of a gated block's task path so
// importing the weights reproduces the baseline bit for bit.
struct PlainConvBlock {
  Tensor w, b;
  bool pool = false;
};
struct PlainAttnBlock {
  int heads = 1;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

Tensor plain_attn_block_forward(const PlainAttnBlock& blk, const Tensor& x);

// Rearranges [B,C,H,W] into [B, tokens, patch*patch*C]; pure data movement.
Tensor patchify(const Tensor& x, int patch);

class SingleTaskNet {
 public:
  SingleTaskNet() = default;
  static SingleTaskNet build(const ModelConfig& cfg, const TaskSpec& spec,
                             uint64_t seed);
  Tensor features(const Tensor& x) const;
  Tensor logits(const Tensor& x) const;
  ParamList trainable_params();
  ParamList all_tensors();

  ModelConfig cfg;
  TaskSpec spec;
  Tensor stem_w, stem_b, pos_embed;  // frozen
  std::vector<PlainConvBlock> conv_blocks;
  std::vector<PlainAttnBlock> attn_blocks;
  Tensor head_w, head_b;
};

// The full gated multi-task encoder: one frozen stem, per-block shared and
// task transforms, the gate bank, the shared-branch mixer and one linear
// head per task.
class GatedEncoder {
 public:
  GatedEncoder() = default;
  static GatedEncoder build(const ModelConfig& cfg,
                            const std::vector<TaskSpec>& specs, uint64_t seed);

  int tasks() const { return static_cast<int>(specs.size()); }

  // Task-specific encoder representations (the gated features the heads
  // consume). Initial shared and task features are both the stem output.
  std::vector<Tensor> forward(const Tensor& x) const;
  Tensor head_logits(int task, const Tensor& features) const;
  std::vector<Tensor> forward_logits(const Tensor& x) const;

  // Copies single-task weights into task branch `task` (and its head).
  void init_task_branch_from(int task, const SingleTaskNet& stl);

  // Copies another encoder's shared transforms (the desk-scale stand-in
  // for starting the shared branch from pretrained weights).
  void init_shared_branch_from(const GatedEncoder& other);

  // Freezes the routing all-shared: hard-parameter-sharing baseline.
  void freeze_all_shared();

  ParamList main_params();   // transforms, norms, heads
  ParamList gate_params();   // alpha, beta
  ParamList all_tensors();   // everything incl. frozen stem

  ModelConfig cfg;
  std::vector<TaskSpec> specs;
  Tensor stem_w, stem_b, pos_embed;  // frozen
  std::vector<ConvBlockParams> conv_blocks;
  std::vector<AttnBlockParams> attn_blocks;
  GateBank bank;
  SharedMixer mixer;
  std::vector<Tensor> head_w, head_b;
  // Skip task transforms that a frozen all-zero gate row would discard.
  bool skip_dead_branches = false;
};

struct LossOut {
  std::vector<Tensor> per_task;
  Tensor weighted;
};

// Per-task losses and their weighted sum over a batch.
LossOut task_losses(const GatedEncoder& enc, const Batch& batch,
                    const std::vector<TaskSpec>& specs);

// weighted + lambda_s * sparsity_loss; returns `weighted` itself when the
// regularizer is disabled.
Tensor total_loss(const Tensor& weighted, const GateBank& bank,
                  const SparsityConfig& cfg);

// Metric value for one task given head outputs and ground truth.
double task_metric(const TaskSpec& spec, const Tensor& outputs,
                   const std::vector<int>& labels, const Tensor& targets);

}  // namespace interrogate
