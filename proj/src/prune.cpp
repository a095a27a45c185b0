#include "interrogate/prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace interrogate {

namespace {

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t hash_tensor(uint64_t h, const Tensor& t) {
  return fnv1a(h, t.data().data(), t.data().size() * sizeof(double));
}

// Gathers rows of a conv/linear weight into a compact tensor.
Tensor gather_rows(const Tensor& w, const std::vector<int>& rows) {
  Shape s = w.shape();
  const int64_t row_size = shape_size(s) / s[0];
  s[0] = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros(s);
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy_n(w.data().begin() + rows[r] * row_size, row_size,
                out.data().begin() + static_cast<int64_t>(r) * row_size);
  return out;
}

Tensor gather_vec(const Tensor& v, const std::vector<int>& rows) {
  Tensor out = Tensor::zeros({static_cast<int>(rows.size())});
  for (size_t r = 0; r < rows.size(); ++r)
    out.data()[r] = v.data()[static_cast<size_t>(rows[r])];
  return out;
}

std::vector<int> index_of(const std::vector<int>& kept, int width) {
  std::vector<int> pos(static_cast<size_t>(width), -1);
  for (size_t i = 0; i < kept.size(); ++i)
    pos[static_cast<size_t>(kept[i])] = static_cast<int>(i);
  return pos;
}

// Full-width buffer assembled from the two compact branch outputs along
// the channel axis.
Tensor assemble(const std::vector<SlotRoute>& route, const Tensor& task_out,
                const Tensor& shared_out, int axis, Shape full_shape) {
  Tensor out = Tensor::zeros(full_shape);
  const int width = full_shape[static_cast<size_t>(axis)];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= full_shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < full_shape.size(); ++i)
    inner *= full_shape[i];
  for (int c = 0; c < width; ++c) {
    const SlotRoute r = route[static_cast<size_t>(c)];
    const Tensor& src = r.from_task ? task_out : shared_out;
    const int src_width = src.shape()[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(src.data().begin() + (o * src_width + r.index) * inner,
                  inner,
                  out.data().begin() + (o * width + c) * inner);
  }
  return out;
}

// Frozen mixer fusion. Reuses the training kernels with the frozen weight
// columns so the summation order (and the MAC meter) match exactly.
Tensor frozen_mix(const std::vector<double>& w, int tasks,
                  const std::vector<Tensor>& feats, int axis) {
  const int width = feats[0].shape()[static_cast<size_t>(axis)];
  Tensor out;
  for (int t = 0; t < tasks; ++t) {
    std::vector<double> col(static_cast<size_t>(width));
    for (int c = 0; c < width; ++c)
      col[static_cast<size_t>(c)] = w[static_cast<size_t>(c * tasks + t)];
    Tensor term = scale_axis(feats[static_cast<size_t>(t)],
                             Tensor::from_data({width}, std::move(col)), axis);
    out = t == 0 ? term : add(out, term);
  }
  return out;
}

}  // namespace

uint64_t routing_checksum(const GatedEncoder& enc) {
  uint64_t h = 1469598103934665603ULL;
  h = hash_tensor(h, enc.bank.alpha());
  h = hash_tensor(h, enc.mixer.beta());
  return h;
}

GatePattern extract_pattern(const GatedEncoder& enc) {
  GatePattern p;
  p.tasks = enc.tasks();
  p.gate_widths = enc.bank.site_widths();
  p.mixer_widths = enc.mixer.site_widths();
  p.masks.resize(static_cast<size_t>(p.tasks));
  for (int t = 0; t < p.tasks; ++t) {
    p.masks[static_cast<size_t>(t)].resize(p.gate_widths.size());
    for (int s = 0; s < enc.bank.sites(); ++s) {
      auto& row = p.masks[static_cast<size_t>(t)][static_cast<size_t>(s)];
      row.resize(static_cast<size_t>(enc.bank.width(s)));
      for (int c = 0; c < enc.bank.width(s); ++c)
        row[static_cast<size_t>(c)] = enc.bank.on(t, s, c) ? 1 : 0;
    }
  }
  for (int s = 0; s < enc.mixer.sites(); ++s)
    p.mixer_weights.push_back(enc.mixer.weights_frozen(s));
  p.checksum = routing_checksum(enc);
  return p;
}

namespace {

PrunedConvLayer collapse_conv_layer(const GatedEncoder& enc,
                                    const GatePattern& pat, int l) {
  const auto& blk = enc.conv_blocks[static_cast<size_t>(l)];
  const int tasks = pat.tasks;
  const int co = blk.shared_w.dim(0);
  PrunedConvLayer out;
  out.pool = blk.pool;
  out.task_kept.resize(static_cast<size_t>(tasks));
  out.route.resize(static_cast<size_t>(tasks));
  for (int c = 0; c < co; ++c) {
    bool any_shared = false;
    for (int t = 0; t < tasks; ++t)
      if (!pat.masks[static_cast<size_t>(t)][static_cast<size_t>(l)]
                    [static_cast<size_t>(c)])
        any_shared = true;
    if (any_shared) out.shared_kept.push_back(c);
  }
  for (int t = 0; t < tasks; ++t)
    for (int c = 0; c < co; ++c)
      if (pat.masks[static_cast<size_t>(t)][static_cast<size_t>(l)]
                   [static_cast<size_t>(c)])
        out.task_kept[static_cast<size_t>(t)].push_back(c);

  const std::vector<int> shared_pos = index_of(out.shared_kept, co);
  if (!out.shared_kept.empty()) {
    out.shared_w = gather_rows(blk.shared_w, out.shared_kept);
    out.shared_b = gather_vec(blk.shared_b, out.shared_kept);
  }
  for (int t = 0; t < tasks; ++t) {
    const auto& kept = out.task_kept[static_cast<size_t>(t)];
    if (!kept.empty()) {
      out.task_w.push_back(gather_rows(blk.task_w[static_cast<size_t>(t)],
                                       kept));
      out.task_b.push_back(gather_vec(blk.task_b[static_cast<size_t>(t)],
                                      kept));
    } else {
      out.task_w.push_back(Tensor());
      out.task_b.push_back(Tensor());
    }
    const std::vector<int> task_pos = index_of(kept, co);
    auto& route = out.route[static_cast<size_t>(t)];
    route.resize(static_cast<size_t>(co));
    for (int c = 0; c < co; ++c) {
      if (pat.masks[static_cast<size_t>(t)][static_cast<size_t>(l)]
                   [static_cast<size_t>(c)]) {
        route[static_cast<size_t>(c)] = {true, task_pos[static_cast<size_t>(c)]};
      } else {
        route[static_cast<size_t>(c)] = {false,
                                         shared_pos[static_cast<size_t>(c)]};
      }
    }
  }
  return out;
}

PrunedProj collapse_proj(const AttnBlockParams::Proj& proj,
                         const GatePattern& pat, int site, int width,
                         bool shared_force_all) {
  const int tasks = pat.tasks;
  PrunedProj out;
  out.task_kept.resize(static_cast<size_t>(tasks));
  out.route.resize(static_cast<size_t>(tasks));
  for (int c = 0; c < width; ++c) {
    bool any_shared = shared_force_all;
    for (int t = 0; t < tasks && !any_shared; ++t)
      if (!pat.masks[static_cast<size_t>(t)][static_cast<size_t>(site)]
                    [static_cast<size_t>(c)])
        any_shared = true;
    if (any_shared) out.shared_kept.push_back(c);
  }
  for (int t = 0; t < tasks; ++t)
    for (int c = 0; c < width; ++c)
      if (pat.masks[static_cast<size_t>(t)][static_cast<size_t>(site)]
                   [static_cast<size_t>(c)])
        out.task_kept[static_cast<size_t>(t)].push_back(c);
  if (!out.shared_kept.empty()) {
    out.shared_w = gather_rows(proj.shared_w, out.shared_kept);
    out.shared_b = gather_vec(proj.shared_b, out.shared_kept);
  }
  const std::vector<int> shared_pos = index_of(out.shared_kept, width);
  for (int t = 0; t < tasks; ++t) {
    const auto& kept = out.task_kept[static_cast<size_t>(t)];
    if (!kept.empty()) {
      out.task_w.push_back(gather_rows(proj.task_w[static_cast<size_t>(t)],
                                       kept));
      out.task_b.push_back(gather_vec(proj.task_b[static_cast<size_t>(t)],
                                      kept));
    } else {
      out.task_w.push_back(Tensor());
      out.task_b.push_back(Tensor());
    }
    const std::vector<int> task_pos = index_of(kept, width);
    auto& route = out.route[static_cast<size_t>(t)];
    route.resize(static_cast<size_t>(width));
    for (int c = 0; c < width; ++c) {
      if (pat.masks[static_cast<size_t>(t)][static_cast<size_t>(site)]
                   [static_cast<size_t>(c)]) {
        route[static_cast<size_t>(c)] = {true, task_pos[static_cast<size_t>(c)]};
      } else {
        route[static_cast<size_t>(c)] = {false,
                                         shared_pos[static_cast<size_t>(c)]};
      }
    }
  }
  return out;
}

bool any_fallback(const GatePattern& pat, int site, int width) {
  for (int t = 0; t < pat.tasks; ++t)
    for (int c = 0; c < width; ++c)
      if (!pat.masks[static_cast<size_t>(t)][static_cast<size_t>(site)]
                    [static_cast<size_t>(c)])
        return true;
  return false;
}

PrunedAttnLayer collapse_attn_layer(const GatedEncoder& enc,
                                    const GatePattern& pat, int l,
                                    bool next_needs_shared) {
  const auto& blk = enc.attn_blocks[static_cast<size_t>(l)];
  const int tasks = pat.tasks;
  const int c = enc.cfg.embed;
  const int f = c * enc.cfg.ffn_mult;
  const int base = l * kAttnGateSites;
  PrunedAttnLayer out;
  out.heads = blk.heads;

  // Demand propagation through the shared stream, back from the ffn.
  const bool need_us = any_fallback(pat, base + 5, c);
  const bool need_hs_full = need_us;
  const bool need_hs_rows = any_fallback(pat, base + 4, f);
  const bool need_rs = need_hs_full || need_hs_rows;
  const bool need_os_rows = any_fallback(pat, base + 3, c);
  const bool need_as = need_os_rows || need_rs;
  out.shared_ffn_live = need_rs;
  out.shared_ffn2_live = need_us;
  out.shared_attn_live = need_as;

  out.q = collapse_proj(blk.q, pat, base + 0, c, need_as);
  out.k = collapse_proj(blk.k, pat, base + 1, c, need_as);
  out.v = collapse_proj(blk.v, pat, base + 2, c, need_as);
  out.out = collapse_proj(blk.out, pat, base + 3, c, need_rs);
  out.ffn1 = collapse_proj(blk.ffn1, pat, base + 4, f, need_hs_full);
  out.ffn2 = collapse_proj(blk.ffn2, pat, base + 5, c, false);

  out.shared_ln1_live = !out.q.shared_kept.empty() ||
                        !out.k.shared_kept.empty() ||
                        !out.v.shared_kept.empty();
  if (out.shared_ln1_live) {
    out.ln1_shared_g = blk.ln1_shared_g;
    out.ln1_shared_b = blk.ln1_shared_b;
  }
  if (out.shared_ffn_live) {
    out.ln2_shared_g = blk.ln2_shared_g;
    out.ln2_shared_b = blk.ln2_shared_b;
  }
  out.ln1_task_live.resize(static_cast<size_t>(tasks));
  out.ln2_task_live.resize(static_cast<size_t>(tasks));
  for (int t = 0; t < tasks; ++t) {
    const size_t ti = static_cast<size_t>(t);
    const bool ln1 = !out.q.task_kept[ti].empty() ||
                     !out.k.task_kept[ti].empty() ||
                     !out.v.task_kept[ti].empty();
    const bool ln2 = !out.ffn1.task_kept[ti].empty();
    out.ln1_task_live[ti] = ln1 ? 1 : 0;
    out.ln2_task_live[ti] = ln2 ? 1 : 0;
    out.ln1_task_g.push_back(ln1 ? blk.ln1_task_g[ti] : Tensor());
    out.ln1_task_b.push_back(ln1 ? blk.ln1_task_b[ti] : Tensor());
    out.ln2_task_g.push_back(ln2 ? blk.ln2_task_g[ti] : Tensor());
    out.ln2_task_b.push_back(ln2 ? blk.ln2_task_b[ti] : Tensor());
  }
  out.mixer_live = next_needs_shared;
  if (out.mixer_live)
    out.mixer_w = pat.mixer_weights[static_cast<size_t>(l)];
  return out;
}

// Whether an attention block's collapsed form reads its shared input.
bool attn_layer_needs_shared_input(const PrunedAttnLayer& layer) {
  return layer.shared_ln1_live || layer.shared_ffn_live;
}

}  // namespace

PrunedModel collapse(const GatedEncoder& enc, const GatePattern& pattern) {
  if (pattern.checksum != routing_checksum(enc))
    throw ContractError("collapse: stale gate pattern (checksum mismatch)");
  PrunedModel pm;
  pm.cfg = enc.cfg;
  pm.specs = enc.specs;
  pm.stem_w = enc.stem_w;
  pm.stem_b = enc.stem_b;
  pm.pos_embed = enc.pos_embed;
  pm.head_w = enc.head_w;
  pm.head_b = enc.head_b;
  if (enc.cfg.arch == ModelConfig::Arch::kConv) {
    const int blocks = static_cast<int>(enc.conv_blocks.size());
    for (int l = 0; l < blocks; ++l)
      pm.conv_layers.push_back(collapse_conv_layer(enc, pattern, l));
    // Mixer at site l feeds the shared transform of block l+1; it lives
    // only while that transform kept any row.
    for (int l = 0; l < blocks; ++l) {
      auto& layer = pm.conv_layers[static_cast<size_t>(l)];
      const bool next_shared_live =
          l + 1 < blocks &&
          !pm.conv_layers[static_cast<size_t>(l + 1)].shared_kept.empty();
      layer.mixer_live = next_shared_live;
      if (layer.mixer_live)
        layer.mixer_w = pattern.mixer_weights[static_cast<size_t>(l)];
    }
  } else {
    const int blocks = enc.cfg.depth;
    std::vector<PrunedAttnLayer> layers(static_cast<size_t>(blocks));
    // Collapse back to front so each block knows whether its successor
    // still reads the shared stream.
    for (int l = blocks - 1; l >= 0; --l) {
      const bool next_needs =
          l + 1 < blocks &&
          attn_layer_needs_shared_input(layers[static_cast<size_t>(l + 1)]);
      layers[static_cast<size_t>(l)] =
          collapse_attn_layer(enc, pattern, l, next_needs);
    }
    pm.attn_layers = std::move(layers);
  }
  return pm;
}

namespace {

Tensor compact_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                    bool pool) {
  Tensor out = relu(conv2d(x, w, b));
  return pool ? avg_pool2(out) : out;
}

}  // namespace

std::vector<Tensor> PrunedModel::forward_logits(const Tensor& x) const {
  const int t_count = tasks();
  Tensor h;
  if (cfg.arch == ModelConfig::Arch::kConv) {
    h = relu(conv2d(x, stem_w, stem_b));
  } else {
    h = add(add(matmul(patchify(x, cfg.patch), transpose2(stem_w)), stem_b),
            pos_embed);
  }
  std::vector<Tensor> phi(static_cast<size_t>(t_count), h);
  Tensor psi = h;

  if (cfg.arch == ModelConfig::Arch::kConv) {
    for (const auto& layer : conv_layers) {
      Tensor s;
      if (!layer.shared_kept.empty())
        s = compact_conv(psi, layer.shared_w, layer.shared_b, layer.pool);
      std::vector<Tensor> next(static_cast<size_t>(t_count));
      const int co = static_cast<int>(layer.route[0].size());
      for (int t = 0; t < t_count; ++t) {
        const size_t ti = static_cast<size_t>(t);
        Tensor u;
        if (!layer.task_kept[ti].empty())
          u = compact_conv(phi[ti], layer.task_w[ti], layer.task_b[ti],
                           layer.pool);
        const Tensor& probe = u.defined() ? u : s;
        Shape full = probe.shape();
        full[1] = co;
        next[ti] = assemble(layer.route[ti], u, s, 1, full);
      }
      phi = std::move(next);
      if (layer.mixer_live) psi = frozen_mix(layer.mixer_w, t_count, phi, 1);
    }
  } else {
    for (const auto& layer : attn_layers) {
      const int c = cfg.embed;
      // shared stream pieces on demand
      Tensor xs, q_s, k_s, v_s, a_s, o_s, r_s, h_s, u_s;
      if (layer.shared_ln1_live)
        xs = layer_norm(psi, layer.ln1_shared_g, layer.ln1_shared_b);
      if (!layer.q.shared_kept.empty())
        q_s = linear(xs, layer.q.shared_w, layer.q.shared_b);
      if (!layer.k.shared_kept.empty())
        k_s = linear(xs, layer.k.shared_w, layer.k.shared_b);
      if (!layer.v.shared_kept.empty())
        v_s = linear(xs, layer.v.shared_w, layer.v.shared_b);
      if (layer.shared_attn_live) {
        a_s = multi_head_attention(q_s, k_s, v_s, layer.heads);
        o_s = linear(a_s, layer.out.shared_w, layer.out.shared_b);
      } else if (!layer.out.shared_kept.empty()) {
        throw ContractError("pruned forward: shared out rows without attn");
      }
      if (layer.shared_ffn_live) {
        r_s = add(psi, o_s);
        Tensor ys = layer_norm(r_s, layer.ln2_shared_g, layer.ln2_shared_b);
        h_s = linear(ys, layer.ffn1.shared_w, layer.ffn1.shared_b);
        if (layer.shared_ffn2_live)
          u_s = linear(relu(h_s), layer.ffn2.shared_w, layer.ffn2.shared_b);
      }
      std::vector<Tensor> next(static_cast<size_t>(t_count));
      for (int t = 0; t < t_count; ++t) {
        const size_t ti = static_cast<size_t>(t);
        const Tensor& x_t = phi[ti];
        Tensor xt;
        if (layer.ln1_task_live[ti])
          xt = layer_norm(x_t, layer.ln1_task_g[ti], layer.ln1_task_b[ti]);
        auto proj_branch = [&](const PrunedProj& p, const Tensor& task_in,
                               const Tensor& shared_vals,
                               int width) -> Tensor {
          Tensor tv;
          if (!p.task_kept[ti].empty())
            tv = linear(task_in, p.task_w[ti], p.task_b[ti]);
          Shape full = task_in.defined() ? task_in.shape() : shared_vals.shape();
          full[2] = width;
          return assemble(p.route[ti], tv, shared_vals, 2, full);
        };
        Tensor q_t = proj_branch(layer.q, xt, q_s, c);
        Tensor k_t = proj_branch(layer.k, xt, k_s, c);
        Tensor v_t = proj_branch(layer.v, xt, v_s, c);
        Tensor a_t = multi_head_attention(q_t, k_t, v_t, layer.heads);
        Tensor o_t = proj_branch(layer.out, a_t, o_s, c);
        Tensor r_t = add(x_t, o_t);
        Tensor yt;
        if (layer.ln2_task_live[ti])
          yt = layer_norm(r_t, layer.ln2_task_g[ti], layer.ln2_task_b[ti]);
        Tensor h_t = proj_branch(layer.ffn1, yt, h_s, c * cfg.ffn_mult);
        Tensor u_t = proj_branch(layer.ffn2, relu(h_t), u_s, c);
        next[ti] = add(r_t, u_t);
      }
      phi = std::move(next);
      if (layer.mixer_live) psi = frozen_mix(layer.mixer_w, t_count, phi, 2);
    }
  }

  std::vector<Tensor> out;
  for (int t = 0; t < t_count; ++t) {
    const size_t ti = static_cast<size_t>(t);
    Tensor pooled;
    if (cfg.arch == ModelConfig::Arch::kConv) {
      const int hh = phi[ti].dim(2), ww = phi[ti].dim(3);
      pooled = mul_scalar(sum_axis(sum_axis(phi[ti], 3), 2), 1.0 / (hh * ww));
    } else {
      pooled = mul_scalar(sum_axis(phi[ti], 1), 1.0 / phi[ti].dim(1));
    }
    out.push_back(add(matmul(pooled, transpose2(head_w[ti])), head_b[ti]));
  }
  return out;
}

EquivalenceReport verify_equivalence(const GatedEncoder& enc,
                                     const PrunedModel& pm, const Tensor& x) {
  EquivalenceReport rep;
  std::vector<Tensor> a = enc.forward_logits(x);
  std::vector<Tensor> b = pm.forward_logits(x);
  rep.pass = true;
  for (size_t t = 0; t < a.size(); ++t) {
    double mabs = 0.0, mrel = 0.0;
    for (size_t i = 0; i < a[t].data().size(); ++i) {
      const double av = a[t].data()[i], bv = b[t].data()[i];
      const double abs_dev = std::fabs(av - bv);
      mabs = std::max(mabs, abs_dev);
      mrel = std::max(mrel, abs_dev / std::max({1e-12, std::fabs(av),
                                                std::fabs(bv)}));
    }
    rep.max_abs.push_back(mabs);
    rep.max_rel.push_back(mrel);
    if (mrel >= rep.tolerance) rep.pass = false;
  }
  return rep;
}

}  // namespace interrogate
