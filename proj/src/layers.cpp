#include "interrogate/layers.hpp"

#include <cmath>

namespace interrogate {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor out = matmul(x, transpose2(w));
  return bias.defined() ? add(out, bias) : out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            int heads) {
  const int c = q.shape().back();
  if (c % heads != 0)
    throw ShapeError("multi_head_attention: heads must divide embed dim");
  const int d = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice(q, 2, h * d, (h + 1) * d);
    Tensor kh = slice(k, 2, h * d, (h + 1) * d);
    Tensor vh = slice(v, 2, h * d, (h + 1) * d);
    Tensor scores = mul_scalar(matmul(qh, transpose2(kh)), scale);
    Tensor attn = softmax(scores, 2);
    outs.push_back(matmul(attn, vh));
  }
  return heads == 1 ? outs[0] : concat(outs, 2);
}

namespace {

Tensor conv_transform(const Tensor& x, const Tensor& w, const Tensor& b,
                      bool pool) {
  Tensor out = relu(conv2d(x, w, b));
  return pool ? avg_pool2(out) : out;
}

bool all_zero_mask(const GateBank& bank, int task, int site) {
  for (int c = 0; c < bank.width(site); ++c)
    if (bank.on(task, site, c)) return false;
  return true;
}

}  // namespace

BlockOut conv_block_forward(const ConvBlockParams& params,
                            const GateBank& bank, const SharedMixer& mixer,
                            int site, const Tensor& shared_in,
                            const std::vector<Tensor>& task_ins,
                            bool skip_dead_branches) {
  const int tasks = bank.tasks();
  if (static_cast<int>(task_ins.size()) != tasks)
    throw ContractError("conv_block_forward: task input count mismatch");
  Tensor s = conv_transform(shared_in, params.shared_w, params.shared_b,
                            params.pool);
  BlockOut out;
  out.tasks.resize(static_cast<size_t>(tasks));
  const bool may_skip = skip_dead_branches && !bank.trainable();
  for (int t = 0; t < tasks; ++t) {
    if (may_skip && all_zero_mask(bank, t, site)) {
      // Select would discard the task transform entirely.
      out.tasks[static_cast<size_t>(t)] = s;
      continue;
    }
    Tensor u = conv_transform(task_ins[static_cast<size_t>(t)],
                              params.task_w[static_cast<size_t>(t)],
                              params.task_b[static_cast<size_t>(t)],
                              params.pool);
    out.tasks[static_cast<size_t>(t)] = mix_task(bank.mask(t, site), u, s, 1);
  }
  if (site < mixer.sites()) out.shared = mix_shared(mixer, site, out.tasks, 1);
  return out;
}

BlockOut attn_block_forward(const AttnBlockParams& params,
                            const GateBank& bank, const SharedMixer& mixer,
                            int block, const Tensor& shared_in,
                            const std::vector<Tensor>& task_ins) {
  const int tasks = bank.tasks();
  if (static_cast<int>(task_ins.size()) != tasks)
    throw ContractError("attn_block_forward: task input count mismatch");
  const int sq = block * kAttnGateSites;

  // Self-contained shared stream; its intermediates are the shared
  // alternatives at each gated projection site.
  Tensor xs = layer_norm(shared_in, params.ln1_shared_g, params.ln1_shared_b);
  Tensor q_s = linear(xs, params.q.shared_w, params.q.shared_b);
  Tensor k_s = linear(xs, params.k.shared_w, params.k.shared_b);
  Tensor v_s = linear(xs, params.v.shared_w, params.v.shared_b);
  Tensor a_s = multi_head_attention(q_s, k_s, v_s, params.heads);
  Tensor o_s = linear(a_s, params.out.shared_w, params.out.shared_b);
  Tensor r_s = add(shared_in, o_s);
  Tensor ys = layer_norm(r_s, params.ln2_shared_g, params.ln2_shared_b);
  Tensor h_s = linear(ys, params.ffn1.shared_w, params.ffn1.shared_b);
  Tensor u_s = linear(relu(h_s), params.ffn2.shared_w, params.ffn2.shared_b);

  BlockOut out;
  out.tasks.resize(static_cast<size_t>(tasks));
  for (int t = 0; t < tasks; ++t) {
    const size_t ti = static_cast<size_t>(t);
    const Tensor& x = task_ins[ti];
    Tensor xt = layer_norm(x, params.ln1_task_g[ti], params.ln1_task_b[ti]);
    Tensor q_t = gate_mix(bank.mask(t, sq),
                          linear(xt, params.q.task_w[ti], params.q.task_b[ti]),
                          q_s, 2);
    Tensor k_t = gate_mix(bank.mask(t, sq + 1),
                          linear(xt, params.k.task_w[ti], params.k.task_b[ti]),
                          k_s, 2);
    Tensor v_t = gate_mix(bank.mask(t, sq + 2),
                          linear(xt, params.v.task_w[ti], params.v.task_b[ti]),
                          v_s, 2);
    Tensor a_t = multi_head_attention(q_t, k_t, v_t, params.heads);
    Tensor o_t = gate_mix(
        bank.mask(t, sq + 3),
        linear(a_t, params.out.task_w[ti], params.out.task_b[ti]), o_s, 2);
    Tensor r_t = add(x, o_t);
    Tensor yt = layer_norm(r_t, params.ln2_task_g[ti], params.ln2_task_b[ti]);
    Tensor h_t = gate_mix(
        bank.mask(t, sq + 4),
        linear(yt, params.ffn1.task_w[ti], params.ffn1.task_b[ti]), h_s, 2);
    Tensor u_t = gate_mix(
        bank.mask(t, sq + 5),
        linear(relu(h_t), params.ffn2.task_w[ti], params.ffn2.task_b[ti]),
        u_s, 2);
    out.tasks[ti] = add(r_t, u_t);
  }
  if (block < mixer.sites())
    out.shared = mix_shared(mixer, block, out.tasks, 2);
  return out;
}

}  // namespace interrogate
