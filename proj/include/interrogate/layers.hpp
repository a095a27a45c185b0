#pragma once

#include <vector>

#include "interrogate/gates.hpp"
#include "interrogate/tensor.hpp"

namespace interrogate {

// One gated convolutional stage: task and shared 3x3 conv transforms with
// identical shapes, relu, optional 2x average pooling, then the per-task
// gate select over the transform outputs and the softmax fusion feeding
// the next shared stage.
struct ConvBlockParams {
  Tensor shared_w, shared_b;             // [Cout,Cin,k,k], [Cout]
  std::vector<Tensor> task_w, task_b;    // one per task, same shapes
  bool pool = false;
};

// Gated transformer stage (pre-norm). Every linear projection exists in a
// shared and a per-task variant; the per-task output of each projection is
// gated against the shared stream's output at the same position. Layer
// norms are per stream. Gate sites per block, in order:
// q, k, v, out, ffn1 (width 4C), ffn2.
struct AttnBlockParams {
  struct Proj {
    Tensor shared_w, shared_b;           // [Cout,Cin], [Cout]
    std::vector<Tensor> task_w, task_b;
  };
  int heads = 1;
  Proj q, k, v, out;   // [C,C]
  Proj ffn1;           // [4C,C]
  Proj ffn2;           // [C,4C]
  Tensor ln1_shared_g, ln1_shared_b, ln2_shared_g, ln2_shared_b;
  std::vector<Tensor> ln1_task_g, ln1_task_b, ln2_task_g, ln2_task_b;
};

constexpr int kAttnGateSites = 6;  // q, k, v, out, ffn1, ffn2

struct BlockOut {
  Tensor shared;              // next shared features; undefined at the last
                              // block (no downstream shared consumer)
  std::vector<Tensor> tasks;  // per-task gated features
};

// x [B,N,Cin] @ w [Cout,Cin] (+ bias).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Scaled dot-product multi-head attention over [B,N,C] streams.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            int heads);

// shared_in/task_ins: [B,Cin,H,W]. `site` indexes the gate/mixer row owned
// by this block. With skip_dead_branches set and a frozen bank, task
// transforms whose gates are all zero are not evaluated (the select would
// discard them; values and gradients are unchanged).
BlockOut conv_block_forward(const ConvBlockParams& params,
                            const GateBank& bank, const SharedMixer& mixer,
                            int site, const Tensor& shared_in,
                            const std::vector<Tensor>& task_ins,
                            bool skip_dead_branches = false);

// shared_in/task_ins: [B,N,C]. Uses gate rows [block*6, block*6+6) and
// mixer row `block`.
BlockOut attn_block_forward(const AttnBlockParams& params,
                            const GateBank& bank, const SharedMixer& mixer,
                            int block, const Tensor& shared_in,
                            const std::vector<Tensor>& task_ins);

}  // namespace interrogate
