#include "interrogate/model.hpp"

#include <cmath>
#include <stdexcept>

#include "interrogate/rng.hpp"

namespace interrogate {

namespace {
// One fixed stem projection shared by every model; single-task weights can
// then be imported into a multi-task encoder without a stem conflict.
constexpr uint64_t kStemSeed = 0x57e3;
}  // namespace

std::string TaskSpec::metric_name() const {
  switch (metric) {
    case Metric::kAccuracy: return "accuracy";
    case Metric::kL1Error: return "l1_error";
    case Metric::kRmse: return "rmse";
  }
  return "?";
}

std::vector<int> ModelConfig::gate_site_widths() const {
  std::vector<int> w;
  if (arch == Arch::kConv) {
    for (const auto& b : conv_blocks) w.push_back(b.c_out);
  } else {
    for (int l = 0; l < depth; ++l) {
      w.insert(w.end(), {embed, embed, embed, embed, embed * ffn_mult, embed});
    }
  }
  return w;
}

std::vector<int> ModelConfig::mixer_site_widths() const {
  std::vector<int> w;
  if (arch == Arch::kConv) {
    for (size_t i = 0; i + 1 < conv_blocks.size(); ++i)
      w.push_back(conv_blocks[i].c_out);
  } else {
    for (int l = 0; l + 1 < depth; ++l) w.push_back(embed);
  }
  return w;
}

namespace {

Tensor randn(Rng& rng, Shape shape, double stddev, bool requires_grad) {
  return Tensor::from_data(shape,
                           rng.normal_vec(static_cast<size_t>(shape_size(shape)),
                                          0.0, stddev),
                           requires_grad);
}

Tensor conv_weight(Rng& rng, int co, int ci, int k, bool rg) {
  return randn(rng, {co, ci, k, k}, std::sqrt(2.0 / (ci * k * k)), rg);
}

Tensor linear_weight(Rng& rng, int co, int ci, bool rg) {
  return randn(rng, {co, ci}, std::sqrt(1.0 / ci), rg);
}

Tensor sinusoidal_positions(int n, int c) {
  Tensor pos = Tensor::zeros({n, c});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; j += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(j) / c);
      pos.data()[static_cast<size_t>(i * c + j)] = std::sin(i * rate);
      if (j + 1 < c)
        pos.data()[static_cast<size_t>(i * c + j + 1)] = std::cos(i * rate);
    }
  return pos;
}

void build_stem(const ModelConfig& cfg, Tensor& w, Tensor& b, Tensor& pos) {
  Rng rng(kStemSeed);
  if (cfg.arch == ModelConfig::Arch::kConv) {
    w = conv_weight(rng, cfg.stem_channels, cfg.in_channels, 3, false);
    b = Tensor::zeros({cfg.stem_channels});
  } else {
    const int p = cfg.patch * cfg.patch * cfg.in_channels;
    w = linear_weight(rng, cfg.embed, p, false);
    b = Tensor::zeros({cfg.embed});
    pos = sinusoidal_positions(cfg.tokens(), cfg.embed);
  }
}

AttnBlockParams::Proj build_proj(Rng& rng, int co, int ci, int tasks) {
  AttnBlockParams::Proj p;
  p.shared_w = linear_weight(rng, co, ci, true);
  p.shared_b = Tensor::zeros({co}, true);
  for (int t = 0; t < tasks; ++t) {
    p.task_w.push_back(linear_weight(rng, co, ci, true));
    p.task_b.push_back(Tensor::zeros({co}, true));
  }
  return p;
}

AttnBlockParams build_attn_block(Rng& rng, const ModelConfig& cfg, int tasks) {
  AttnBlockParams blk;
  blk.heads = cfg.heads;
  const int c = cfg.embed, f = cfg.embed * cfg.ffn_mult;
  blk.q = build_proj(rng, c, c, tasks);
  blk.k = build_proj(rng, c, c, tasks);
  blk.v = build_proj(rng, c, c, tasks);
  blk.out = build_proj(rng, c, c, tasks);
  blk.ffn1 = build_proj(rng, f, c, tasks);
  blk.ffn2 = build_proj(rng, c, f, tasks);
  blk.ln1_shared_g = Tensor::full({c}, 1.0, true);
  blk.ln1_shared_b = Tensor::zeros({c}, true);
  blk.ln2_shared_g = Tensor::full({c}, 1.0, true);
  blk.ln2_shared_b = Tensor::zeros({c}, true);
  for (int t = 0; t < tasks; ++t) {
    blk.ln1_task_g.push_back(Tensor::full({c}, 1.0, true));
    blk.ln1_task_b.push_back(Tensor::zeros({c}, true));
    blk.ln2_task_g.push_back(Tensor::full({c}, 1.0, true));
    blk.ln2_task_b.push_back(Tensor::zeros({c}, true));
  }
  return blk;
}

Tensor pooled_features(const ModelConfig& cfg, const Tensor& feat) {
  if (cfg.arch == ModelConfig::Arch::kConv) {
    const int h = feat.dim(2), w = feat.dim(3);
    return mul_scalar(sum_axis(sum_axis(feat, 3), 2), 1.0 / (h * w));
  }
  return mul_scalar(sum_axis(feat, 1), 1.0 / feat.dim(1));
}

void push_proj(ParamList& out, const std::string& prefix,
               AttnBlockParams::Proj& p) {
  out.emplace_back(prefix + ".shared.w", p.shared_w);
  out.emplace_back(prefix + ".shared.b", p.shared_b);
  for (size_t t = 0; t < p.task_w.size(); ++t) {
    out.emplace_back(prefix + ".task" + std::to_string(t) + ".w", p.task_w[t]);
    out.emplace_back(prefix + ".task" + std::to_string(t) + ".b", p.task_b[t]);
  }
}

}  // namespace

Tensor patchify(const Tensor& x, int patch) {
  if (x.ndim() != 4) throw ShapeError("patchify: expects [B,C,H,W]");
  if (x.requires_grad())
    throw ContractError("patchify: input must not require grad");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % patch != 0 || w % patch != 0)
    throw ShapeError("patchify: patch must divide spatial dims");
  const int th = h / patch, tw = w / patch;
  const int n = th * tw, p = patch * patch * c;
  Tensor out = Tensor::zeros({b, n, p});
  for (int bi = 0; bi < b; ++bi)
    for (int ty = 0; ty < th; ++ty)
      for (int tx = 0; tx < tw; ++tx) {
        const int tok = ty * tw + tx;
        for (int ci = 0; ci < c; ++ci)
          for (int dy = 0; dy < patch; ++dy)
            for (int dx = 0; dx < patch; ++dx) {
              const int64_t src =
                  ((static_cast<int64_t>(bi) * c + ci) * h + ty * patch + dy) *
                      w +
                  tx * patch + dx;
              const int64_t dst =
                  (static_cast<int64_t>(bi) * n + tok) * p +
                  (ci * patch + dy) * patch + dx;
              out.data()[static_cast<size_t>(dst)] =
                  x.data()[static_cast<size_t>(src)];
            }
      }
  return out;
}

Tensor plain_attn_block_forward(const PlainAttnBlock& blk, const Tensor& x) {
  Tensor xn = layer_norm(x, blk.ln1_g, blk.ln1_b);
  Tensor q = linear(xn, blk.wq, blk.bq);
  Tensor k = linear(xn, blk.wk, blk.bk);
  Tensor v = linear(xn, blk.wv, blk.bv);
  Tensor a = multi_head_attention(q, k, v, blk.heads);
  Tensor r = add(x, linear(a, blk.wo, blk.bo));
  Tensor y = layer_norm(r, blk.ln2_g, blk.ln2_b);
  Tensor u = linear(relu(linear(y, blk.w1, blk.b1)), blk.w2, blk.b2);
  return add(r, u);
}

// ---- SingleTaskNet ----

SingleTaskNet SingleTaskNet::build(const ModelConfig& cfg_in,
                                   const TaskSpec& spec_in, uint64_t seed) {
  SingleTaskNet net;
  net.cfg = cfg_in;
  net.spec = spec_in;
  build_stem(net.cfg, net.stem_w, net.stem_b, net.pos_embed);
  Rng rng(seed);
  int feat = 0;
  if (net.cfg.arch == ModelConfig::Arch::kConv) {
    int ci = net.cfg.stem_channels;
    for (const auto& bs : net.cfg.conv_blocks) {
      PlainConvBlock blk;
      blk.w = conv_weight(rng, bs.c_out, ci, 3, true);
      blk.b = Tensor::zeros({bs.c_out}, true);
      blk.pool = bs.pool;
      net.conv_blocks.push_back(blk);
      ci = bs.c_out;
    }
    feat = net.cfg.conv_feature_dim();
  } else {
    for (int l = 0; l < net.cfg.depth; ++l) {
      PlainAttnBlock blk;
      blk.heads = net.cfg.heads;
      const int c = net.cfg.embed, f = c * net.cfg.ffn_mult;
      blk.wq = linear_weight(rng, c, c, true);
      blk.bq = Tensor::zeros({c}, true);
      blk.wk = linear_weight(rng, c, c, true);
      blk.bk = Tensor::zeros({c}, true);
      blk.wv = linear_weight(rng, c, c, true);
      blk.bv = Tensor::zeros({c}, true);
      blk.wo = linear_weight(rng, c, c, true);
      blk.bo = Tensor::zeros({c}, true);
      blk.w1 = linear_weight(rng, f, c, true);
      blk.b1 = Tensor::zeros({f}, true);
      blk.w2 = linear_weight(rng, c, f, true);
      blk.b2 = Tensor::zeros({c}, true);
      blk.ln1_g = Tensor::full({c}, 1.0, true);
      blk.ln1_b = Tensor::zeros({c}, true);
      blk.ln2_g = Tensor::full({c}, 1.0, true);
      blk.ln2_b = Tensor::zeros({c}, true);
      net.attn_blocks.push_back(blk);
    }
    feat = net.cfg.embed;
  }
  net.head_w = linear_weight(rng, net.spec.output_dim(), feat, true);
  net.head_b = Tensor::zeros({net.spec.output_dim()}, true);
  return net;
}

Tensor SingleTaskNet::features(const Tensor& x) const {
  if (cfg.arch == ModelConfig::Arch::kConv) {
    Tensor h = relu(conv2d(x, stem_w, stem_b));
    for (const auto& blk : conv_blocks) {
      h = relu(conv2d(h, blk.w, blk.b));
      if (blk.pool) h = avg_pool2(h);
    }
    return h;
  }
  Tensor h = add(add(matmul(patchify(x, cfg.patch), transpose2(stem_w)),
                     stem_b),
                 pos_embed);
  for (const auto& blk : attn_blocks) h = plain_attn_block_forward(blk, h);
  return h;
}

Tensor SingleTaskNet::logits(const Tensor& x) const {
  Tensor pooled = pooled_features(cfg, features(x));
  return add(matmul(pooled, transpose2(head_w)), head_b);
}

ParamList SingleTaskNet::trainable_params() {
  ParamList out;
  for (size_t l = 0; l < conv_blocks.size(); ++l) {
    out.emplace_back("block" + std::to_string(l) + ".w", conv_blocks[l].w);
    out.emplace_back("block" + std::to_string(l) + ".b", conv_blocks[l].b);
  }
  for (size_t l = 0; l < attn_blocks.size(); ++l) {
    auto& blk = attn_blocks[l];
    const std::string p = "block" + std::to_string(l);
    out.emplace_back(p + ".q.w", blk.wq);
    out.emplace_back(p + ".q.b", blk.bq);
    out.emplace_back(p + ".k.w", blk.wk);
    out.emplace_back(p + ".k.b", blk.bk);
    out.emplace_back(p + ".v.w", blk.wv);
    out.emplace_back(p + ".v.b", blk.bv);
    out.emplace_back(p + ".out.w", blk.wo);
    out.emplace_back(p + ".out.b", blk.bo);
    out.emplace_back(p + ".ffn1.w", blk.w1);
    out.emplace_back(p + ".ffn1.b", blk.b1);
    out.emplace_back(p + ".ffn2.w", blk.w2);
    out.emplace_back(p + ".ffn2.b", blk.b2);
    out.emplace_back(p + ".ln1.g", blk.ln1_g);
    out.emplace_back(p + ".ln1.b", blk.ln1_b);
    out.emplace_back(p + ".ln2.g", blk.ln2_g);
    out.emplace_back(p + ".ln2.b", blk.ln2_b);
  }
  out.emplace_back("head.w", head_w);
  out.emplace_back("head.b", head_b);
  return out;
}

ParamList SingleTaskNet::all_tensors() {
  ParamList out;
  out.emplace_back("stem.w", stem_w);
  out.emplace_back("stem.b", stem_b);
  if (pos_embed.defined()) out.emplace_back("stem.pos", pos_embed);
  for (auto& p : trainable_params()) out.push_back(p);
  return out;
}

// ---- GatedEncoder ----

GatedEncoder GatedEncoder::build(const ModelConfig& cfg_in,
                                 const std::vector<TaskSpec>& specs_in,
                                 uint64_t seed) {
  GatedEncoder enc;
  enc.cfg = cfg_in;
  enc.specs = specs_in;
  const int tasks = static_cast<int>(specs_in.size());
  build_stem(enc.cfg, enc.stem_w, enc.stem_b, enc.pos_embed);
  Rng rng(seed);
  int feat = 0;
  if (enc.cfg.arch == ModelConfig::Arch::kConv) {
    int ci = enc.cfg.stem_channels;
    for (const auto& bs : enc.cfg.conv_blocks) {
      ConvBlockParams blk;
      blk.shared_w = conv_weight(rng, bs.c_out, ci, 3, true);
      blk.shared_b = Tensor::zeros({bs.c_out}, true);
      for (int t = 0; t < tasks; ++t) {
        blk.task_w.push_back(conv_weight(rng, bs.c_out, ci, 3, true));
        blk.task_b.push_back(Tensor::zeros({bs.c_out}, true));
      }
      blk.pool = bs.pool;
      enc.conv_blocks.push_back(blk);
      ci = bs.c_out;
    }
    feat = enc.cfg.conv_feature_dim();
  } else {
    for (int l = 0; l < enc.cfg.depth; ++l)
      enc.attn_blocks.push_back(build_attn_block(rng, enc.cfg, tasks));
    feat = enc.cfg.embed;
  }
  for (int t = 0; t < tasks; ++t) {
    enc.head_w.push_back(
        linear_weight(rng, specs_in[static_cast<size_t>(t)].output_dim(), feat,
                      true));
    enc.head_b.push_back(
        Tensor::zeros({specs_in[static_cast<size_t>(t)].output_dim()}, true));
  }
  enc.bank = GateBank(tasks, enc.cfg.gate_site_widths(),
                      enc.cfg.gate_init_logit);
  enc.mixer = SharedMixer(tasks, enc.cfg.mixer_site_widths());
  return enc;
}

std::vector<Tensor> GatedEncoder::forward(const Tensor& x) const {
  Tensor h;
  if (cfg.arch == ModelConfig::Arch::kConv) {
    h = relu(conv2d(x, stem_w, stem_b));
  } else {
    h = add(add(matmul(patchify(x, cfg.patch), transpose2(stem_w)), stem_b),
            pos_embed);
  }
  std::vector<Tensor> phi(static_cast<size_t>(tasks()), h);
  Tensor psi = h;
  const int blocks = cfg.arch == ModelConfig::Arch::kConv
                         ? static_cast<int>(conv_blocks.size())
                         : cfg.depth;
  for (int l = 0; l < blocks; ++l) {
    BlockOut out =
        cfg.arch == ModelConfig::Arch::kConv
            ? conv_block_forward(conv_blocks[static_cast<size_t>(l)], bank,
                                 mixer, l, psi, phi, skip_dead_branches)
            : attn_block_forward(attn_blocks[static_cast<size_t>(l)], bank,
                                 mixer, l, psi, phi);
    phi = std::move(out.tasks);
    if (out.shared.defined()) psi = out.shared;
  }
  return phi;
}

Tensor GatedEncoder::head_logits(int task, const Tensor& features) const {
  Tensor pooled = pooled_features(cfg, features);
  return add(matmul(pooled, transpose2(head_w[static_cast<size_t>(task)])),
             head_b[static_cast<size_t>(task)]);
}

std::vector<Tensor> GatedEncoder::forward_logits(const Tensor& x) const {
  std::vector<Tensor> feats = forward(x);
  std::vector<Tensor> out;
  for (int t = 0; t < tasks(); ++t)
    out.push_back(head_logits(t, feats[static_cast<size_t>(t)]));
  return out;
}

void GatedEncoder::init_task_branch_from(int task, const SingleTaskNet& stl) {
  const size_t ti = static_cast<size_t>(task);
  if (cfg.arch == ModelConfig::Arch::kConv) {
    if (stl.conv_blocks.size() != conv_blocks.size())
      throw ContractError("init_task_branch_from: block count mismatch");
    for (size_t l = 0; l < conv_blocks.size(); ++l) {
      if (stl.conv_blocks[l].w.shape() != conv_blocks[l].task_w[ti].shape())
        throw ContractError("init_task_branch_from: shape mismatch");
      conv_blocks[l].task_w[ti].data() = stl.conv_blocks[l].w.data();
      conv_blocks[l].task_b[ti].data() = stl.conv_blocks[l].b.data();
    }
  } else {
    if (stl.attn_blocks.size() != attn_blocks.size())
      throw ContractError("init_task_branch_from: block count mismatch");
    for (size_t l = 0; l < attn_blocks.size(); ++l) {
      auto& dst = attn_blocks[l];
      const auto& src = stl.attn_blocks[l];
      if (src.wq.shape() != dst.q.task_w[ti].shape())
        throw ContractError("init_task_branch_from: shape mismatch");
      dst.q.task_w[ti].data() = src.wq.data();
      dst.q.task_b[ti].data() = src.bq.data();
      dst.k.task_w[ti].data() = src.wk.data();
      dst.k.task_b[ti].data() = src.bk.data();
      dst.v.task_w[ti].data() = src.wv.data();
      dst.v.task_b[ti].data() = src.bv.data();
      dst.out.task_w[ti].data() = src.wo.data();
      dst.out.task_b[ti].data() = src.bo.data();
      dst.ffn1.task_w[ti].data() = src.w1.data();
      dst.ffn1.task_b[ti].data() = src.b1.data();
      dst.ffn2.task_w[ti].data() = src.w2.data();
      dst.ffn2.task_b[ti].data() = src.b2.data();
      dst.ln1_task_g[ti].data() = src.ln1_g.data();
      dst.ln1_task_b[ti].data() = src.ln1_b.data();
      dst.ln2_task_g[ti].data() = src.ln2_g.data();
      dst.ln2_task_b[ti].data() = src.ln2_b.data();
    }
  }
  if (stl.head_w.shape() != head_w[ti].shape())
    throw ContractError("init_task_branch_from: head shape mismatch");
  head_w[ti].data() = stl.head_w.data();
  head_b[ti].data() = stl.head_b.data();
}

void GatedEncoder::init_shared_branch_from(const GatedEncoder& other) {
  if (cfg.arch != other.cfg.arch)
    throw ContractError("init_shared_branch_from: arch mismatch");
  if (cfg.arch == ModelConfig::Arch::kConv) {
    if (other.conv_blocks.size() != conv_blocks.size())
      throw ContractError("init_shared_branch_from: block count mismatch");
    for (size_t l = 0; l < conv_blocks.size(); ++l) {
      if (other.conv_blocks[l].shared_w.shape() !=
          conv_blocks[l].shared_w.shape())
        throw ContractError("init_shared_branch_from: shape mismatch");
      conv_blocks[l].shared_w.data() = other.conv_blocks[l].shared_w.data();
      conv_blocks[l].shared_b.data() = other.conv_blocks[l].shared_b.data();
    }
  } else {
    if (other.attn_blocks.size() != attn_blocks.size())
      throw ContractError("init_shared_branch_from: block count mismatch");
    for (size_t l = 0; l < attn_blocks.size(); ++l) {
      auto& dst = attn_blocks[l];
      const auto& src = other.attn_blocks[l];
      if (src.q.shared_w.shape() != dst.q.shared_w.shape())
        throw ContractError("init_shared_branch_from: shape mismatch");
      auto copy_proj = [](AttnBlockParams::Proj& d,
                          const AttnBlockParams::Proj& s) {
        d.shared_w.data() = s.shared_w.data();
        d.shared_b.data() = s.shared_b.data();
      };
      copy_proj(dst.q, src.q);
      copy_proj(dst.k, src.k);
      copy_proj(dst.v, src.v);
      copy_proj(dst.out, src.out);
      copy_proj(dst.ffn1, src.ffn1);
      copy_proj(dst.ffn2, src.ffn2);
      dst.ln1_shared_g.data() = src.ln1_shared_g.data();
      dst.ln1_shared_b.data() = src.ln1_shared_b.data();
      dst.ln2_shared_g.data() = src.ln2_shared_g.data();
      dst.ln2_shared_b.data() = src.ln2_shared_b.data();
    }
  }
}

void GatedEncoder::freeze_all_shared() {
  bank.fill_logits(-16.0);
  bank.set_trainable(false);
  mixer.set_trainable(false);
  skip_dead_branches = true;
}

ParamList GatedEncoder::main_params() {
  ParamList out;
  for (size_t l = 0; l < conv_blocks.size(); ++l) {
    auto& blk = conv_blocks[l];
    const std::string p = "block" + std::to_string(l);
    out.emplace_back(p + ".shared.w", blk.shared_w);
    out.emplace_back(p + ".shared.b", blk.shared_b);
    for (size_t t = 0; t < blk.task_w.size(); ++t) {
      out.emplace_back(p + ".task" + std::to_string(t) + ".w", blk.task_w[t]);
      out.emplace_back(p + ".task" + std::to_string(t) + ".b", blk.task_b[t]);
    }
  }
  for (size_t l = 0; l < attn_blocks.size(); ++l) {
    auto& blk = attn_blocks[l];
    const std::string p = "block" + std::to_string(l);
    push_proj(out, p + ".q", blk.q);
    push_proj(out, p + ".k", blk.k);
    push_proj(out, p + ".v", blk.v);
    push_proj(out, p + ".out", blk.out);
    push_proj(out, p + ".ffn1", blk.ffn1);
    push_proj(out, p + ".ffn2", blk.ffn2);
    out.emplace_back(p + ".ln1.shared.g", blk.ln1_shared_g);
    out.emplace_back(p + ".ln1.shared.b", blk.ln1_shared_b);
    out.emplace_back(p + ".ln2.shared.g", blk.ln2_shared_g);
    out.emplace_back(p + ".ln2.shared.b", blk.ln2_shared_b);
    for (size_t t = 0; t < blk.ln1_task_g.size(); ++t) {
      const std::string ts = std::to_string(t);
      out.emplace_back(p + ".ln1.task" + ts + ".g", blk.ln1_task_g[t]);
      out.emplace_back(p + ".ln1.task" + ts + ".b", blk.ln1_task_b[t]);
      out.emplace_back(p + ".ln2.task" + ts + ".g", blk.ln2_task_g[t]);
      out.emplace_back(p + ".ln2.task" + ts + ".b", blk.ln2_task_b[t]);
    }
  }
  for (size_t t = 0; t < head_w.size(); ++t) {
    out.emplace_back("head" + std::to_string(t) + ".w", head_w[t]);
    out.emplace_back("head" + std::to_string(t) + ".b", head_b[t]);
  }
  return out;
}

ParamList GatedEncoder::gate_params() {
  return {{"gates.alpha", bank.alpha()}, {"mixer.beta", mixer.beta()}};
}

ParamList GatedEncoder::all_tensors() {
  ParamList out;
  out.emplace_back("stem.w", stem_w);
  out.emplace_back("stem.b", stem_b);
  if (pos_embed.defined()) out.emplace_back("stem.pos", pos_embed);
  for (auto& p : main_params()) out.push_back(p);
  for (auto& p : gate_params()) out.push_back(p);
  return out;
}

// ---- losses & metrics ----

LossOut task_losses(const GatedEncoder& enc, const Batch& batch,
                    const std::vector<TaskSpec>& specs) {
  std::vector<Tensor> feats = enc.forward(batch.x);
  LossOut out;
  for (size_t t = 0; t < specs.size(); ++t) {
    const TaskSpec& spec = specs[t];
    Tensor outputs = enc.head_logits(static_cast<int>(t), feats[t]);
    Tensor lt;
    switch (spec.loss) {
      case TaskSpec::Loss::kCrossEntropy:
        if (t >= batch.labels.size() || batch.labels[t].empty())
          throw ContractError("task_losses: missing labels for task " +
                              spec.name);
        lt = cross_entropy_logits(outputs, batch.labels[t]);
        break;
      case TaskSpec::Loss::kL1:
        if (t >= batch.targets.size() || !batch.targets[t].defined())
          throw ContractError("task_losses: missing targets for task " +
                              spec.name);
        lt = l1_loss(outputs, batch.targets[t]);
        break;
      case TaskSpec::Loss::kSquaredError:
        if (t >= batch.targets.size() || !batch.targets[t].defined())
          throw ContractError("task_losses: missing targets for task " +
                              spec.name);
        lt = mse_loss(outputs, batch.targets[t]);
        break;
    }
    out.per_task.push_back(lt);
    Tensor term = mul_scalar(lt, spec.weight);
    out.weighted = t == 0 ? term : add(out.weighted, term);
  }
  return out;
}

Tensor total_loss(const Tensor& weighted, const GateBank& bank,
                  const SparsityConfig& cfg) {
  if (cfg.variant == SparsityConfig::Variant::kNone || cfg.lambda_s == 0.0)
    return weighted;
  return add(weighted, mul_scalar(sparsity_loss(bank, cfg), cfg.lambda_s));
}

double task_metric(const TaskSpec& spec, const Tensor& outputs,
                   const std::vector<int>& labels, const Tensor& targets) {
  if (spec.metric == TaskSpec::Metric::kAccuracy) {
    const int bs = outputs.dim(0), k = outputs.dim(1);
    int hits = 0;
    for (int b = 0; b < bs; ++b) {
      int best = 0;
      for (int i = 1; i < k; ++i)
        if (outputs.data()[static_cast<size_t>(b * k + i)] >
            outputs.data()[static_cast<size_t>(b * k + best)])
          best = i;
      if (best == labels[static_cast<size_t>(b)]) ++hits;
    }
    return static_cast<double>(hits) / bs;
  }
  double acc = 0.0;
  for (size_t i = 0; i < outputs.data().size(); ++i) {
    const double d = outputs.data()[i] - targets.data()[i];
    acc += spec.metric == TaskSpec::Metric::kRmse ? d * d : std::fabs(d);
  }
  acc /= static_cast<double>(outputs.size());
  return spec.metric == TaskSpec::Metric::kRmse ? std::sqrt(acc) : acc;
}

}  // namespace interrogate
