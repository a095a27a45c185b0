#include "interrogate/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace interrogate {

void ScoreTable::add_row(const std::string& method,
                         std::vector<double> values) {
  if (values.size() != task_names.size())
    throw ContractError("ScoreTable: row width mismatch for " + method);
  rows[method] = std::move(values);
}

double delta_mtl(const ScoreTable& table, const std::string& method) {
  auto bit = table.rows.find(table.baseline);
  if (bit == table.rows.end())
    throw ContractError("delta_mtl: baseline row missing");
  auto mit = table.rows.find(method);
  if (mit == table.rows.end())
    throw ContractError("delta_mtl: method row missing: " + method);
  const auto& base = bit->second;
  const auto& vals = mit->second;
  const size_t t_count = table.task_names.size();
  double acc = 0.0;
  for (size_t i = 0; i < t_count; ++i) {
    if (base[i] == 0.0)
      throw ContractError("delta_mtl: zero baseline metric for task " +
                          table.task_names[i]);
    const double sign = table.lower_better[i] ? -1.0 : 1.0;
    acc += sign * (vals[i] - base[i]) / base[i];
  }
  return 100.0 * acc / static_cast<double>(t_count);
}

std::map<std::string, double> mean_rank(const ScoreTable& table) {
  if (table.rows.size() < 2)
    throw ContractError("mean_rank: need at least two methods");
  std::map<std::string, double> acc;
  for (const auto& [name, _] : table.rows) acc[name] = 0.0;
  const size_t t_count = table.task_names.size();
  for (size_t i = 0; i < t_count; ++i) {
    // best-to-worst scores for this task
    std::vector<std::pair<double, std::string>> order;
    for (const auto& [name, vals] : table.rows)
      order.emplace_back(table.lower_better[i] ? vals[i] : -vals[i], name);
    std::sort(order.begin(), order.end());
    // average ranks over tied stretches
    size_t j = 0;
    while (j < order.size()) {
      size_t k = j;
      while (k + 1 < order.size() && order[k + 1].first == order[j].first) ++k;
      const double rank = (static_cast<double>(j + 1) +
                           static_cast<double>(k + 1)) /
                          2.0;
      for (size_t m = j; m <= k; ++m) acc[order[m].second] += rank;
      j = k + 1;
    }
  }
  for (auto& [_, v] : acc) v /= static_cast<double>(t_count);
  return acc;
}

uint64_t FlopLedger::total_macs() const {
  uint64_t n = 0;
  for (const auto& e : entries) n += e.macs;
  return n;
}

uint64_t FlopLedger::total_params() const {
  uint64_t n = 0;
  for (const auto& e : entries) n += e.params;
  return n;
}

uint64_t FlopLedger::encoder_macs() const {
  uint64_t n = 0;
  for (const auto& e : entries)
    if (e.layer.rfind("head", 0) != 0) n += e.macs;
  return n;
}

uint64_t FlopLedger::branch_macs(const std::string& branch) const {
  uint64_t n = 0;
  for (const auto& e : entries)
    if (e.branch == branch) n += e.macs;
  return n;
}

uint64_t FlopLedger::branch_params(const std::string& branch) const {
  uint64_t n = 0;
  for (const auto& e : entries)
    if (e.branch == branch) n += e.params;
  return n;
}

namespace {

std::string task_branch(int t) { return "task" + std::to_string(t); }

uint64_t u64(int64_t v) { return static_cast<uint64_t>(v); }

void head_entries(FlopLedger& ledger, const std::vector<TaskSpec>& specs,
                  int feat) {
  for (size_t t = 0; t < specs.size(); ++t) {
    const int k = specs[t].output_dim();
    ledger.entries.push_back({"head" + std::to_string(t),
                              task_branch(static_cast<int>(t)),
                              u64(static_cast<int64_t>(k) * feat),
                              u64(static_cast<int64_t>(k) * (feat + 1))});
  }
}

}  // namespace

FlopLedger count_flops(const GatedEncoder& enc) {
  FlopLedger ledger;
  const ModelConfig& cfg = enc.cfg;
  const int tasks = enc.tasks();
  if (cfg.arch == ModelConfig::Arch::kConv) {
    int ci = cfg.stem_channels;
    int64_t h = cfg.in_h, w = cfg.in_w;
    ledger.entries.push_back(
        {"stem", "shared",
         u64(static_cast<int64_t>(cfg.stem_channels) * cfg.in_channels * 9 *
             h * w),
         u64(static_cast<int64_t>(cfg.stem_channels) *
             (cfg.in_channels * 9 + 1))});
    for (size_t l = 0; l < enc.conv_blocks.size(); ++l) {
      const auto& bs = cfg.conv_blocks[l];
      const std::string layer = "block" + std::to_string(l);
      const int co = bs.c_out;
      const uint64_t conv_macs = u64(static_cast<int64_t>(co) * ci * 9 * h * w);
      const uint64_t conv_params =
          u64(static_cast<int64_t>(co) * (ci * 9 + 1));
      ledger.entries.push_back({layer, "shared", conv_macs, conv_params});
      for (int t = 0; t < tasks; ++t)
        ledger.entries.push_back({layer, task_branch(t), conv_macs,
                                  conv_params});
      const int64_t oh = bs.pool ? h / 2 : h;
      const int64_t ow = bs.pool ? w / 2 : w;
      if (static_cast<int>(l) < enc.mixer.sites())
        ledger.entries.push_back({layer, "mixer",
                                  u64(static_cast<int64_t>(co) * tasks * oh *
                                      ow),
                                  u64(static_cast<int64_t>(co) * tasks)});
      ledger.entries.push_back({layer, "gate", 0,
                                u64(static_cast<int64_t>(co) * tasks)});
      ci = co;
      h = oh;
      w = ow;
    }
    head_entries(ledger, enc.specs, cfg.conv_feature_dim());
  } else {
    const int64_t n = cfg.tokens(), c = cfg.embed;
    const int64_t f = c * cfg.ffn_mult;
    const int64_t p = static_cast<int64_t>(cfg.patch) * cfg.patch *
                      cfg.in_channels;
    ledger.entries.push_back(
        {"stem", "shared", u64(n * c * p), u64(c * (p + 1))});
    for (int l = 0; l < cfg.depth; ++l) {
      const std::string layer = "block" + std::to_string(l);
      auto stream = [&](const std::string& branch) {
        ledger.entries.push_back({layer + ".q", branch, u64(n * c * c),
                                  u64(c * (c + 1))});
        ledger.entries.push_back({layer + ".k", branch, u64(n * c * c),
                                  u64(c * (c + 1))});
        ledger.entries.push_back({layer + ".v", branch, u64(n * c * c),
                                  u64(c * (c + 1))});
        ledger.entries.push_back({layer + ".attn", branch, u64(2 * n * n * c),
                                  0});
        ledger.entries.push_back({layer + ".out", branch, u64(n * c * c),
                                  u64(c * (c + 1))});
        ledger.entries.push_back({layer + ".ffn1", branch, u64(n * f * c),
                                  u64(f * (c + 1))});
        ledger.entries.push_back({layer + ".ffn2", branch, u64(n * c * f),
                                  u64(c * (f + 1))});
        ledger.entries.push_back({layer + ".ln", branch, 0, u64(4 * c)});
      };
      stream("shared");
      for (int t = 0; t < tasks; ++t) stream(task_branch(t));
      if (l < enc.mixer.sites())
        ledger.entries.push_back({layer, "mixer", u64(c * tasks * n),
                                  u64(c * tasks)});
      ledger.entries.push_back(
          {layer, "gate", 0, u64(static_cast<int64_t>(tasks) * (5 * c + f))});
    }
    head_entries(ledger, enc.specs, cfg.embed);
  }
  return ledger;
}

FlopLedger count_flops(const SingleTaskNet& net) {
  FlopLedger ledger;
  const ModelConfig& cfg = net.cfg;
  if (cfg.arch == ModelConfig::Arch::kConv) {
    int ci = cfg.stem_channels;
    int64_t h = cfg.in_h, w = cfg.in_w;
    ledger.entries.push_back(
        {"stem", "task0",
         u64(static_cast<int64_t>(cfg.stem_channels) * cfg.in_channels * 9 *
             h * w),
         u64(static_cast<int64_t>(cfg.stem_channels) *
             (cfg.in_channels * 9 + 1))});
    for (size_t l = 0; l < cfg.conv_blocks.size(); ++l) {
      const auto& bs = cfg.conv_blocks[l];
      ledger.entries.push_back(
          {"block" + std::to_string(l), "task0",
           u64(static_cast<int64_t>(bs.c_out) * ci * 9 * h * w),
           u64(static_cast<int64_t>(bs.c_out) * (ci * 9 + 1))});
      ci = bs.c_out;
      if (bs.pool) {
        h /= 2;
        w /= 2;
      }
    }
    head_entries(ledger, {net.spec}, cfg.conv_feature_dim());
  } else {
    const int64_t n = cfg.tokens(), c = cfg.embed;
    const int64_t f = c * cfg.ffn_mult;
    const int64_t p = static_cast<int64_t>(cfg.patch) * cfg.patch *
                      cfg.in_channels;
    ledger.entries.push_back(
        {"stem", "task0", u64(n * c * p), u64(c * (p + 1))});
    for (int l = 0; l < cfg.depth; ++l) {
      const std::string layer = "block" + std::to_string(l);
      ledger.entries.push_back({layer + ".q", "task0", u64(n * c * c),
                                u64(c * (c + 1))});
      ledger.entries.push_back({layer + ".k", "task0", u64(n * c * c),
                                u64(c * (c + 1))});
      ledger.entries.push_back({layer + ".v", "task0", u64(n * c * c),
                                u64(c * (c + 1))});
      ledger.entries.push_back({layer + ".attn", "task0", u64(2 * n * n * c),
                                0});
      ledger.entries.push_back({layer + ".out", "task0", u64(n * c * c),
                                u64(c * (c + 1))});
      ledger.entries.push_back({layer + ".ffn1", "task0", u64(n * f * c),
                                u64(f * (c + 1))});
      ledger.entries.push_back({layer + ".ffn2", "task0", u64(n * c * f),
                                u64(c * (f + 1))});
      ledger.entries.push_back({layer + ".ln", "task0", 0, u64(4 * c)});
    }
    head_entries(ledger, {net.spec}, cfg.embed);
  }
  return ledger;
}

FlopLedger count_flops(const PrunedModel& pm) {
  FlopLedger ledger;
  const ModelConfig& cfg = pm.cfg;
  const int tasks = pm.tasks();
  if (cfg.arch == ModelConfig::Arch::kConv) {
    int ci = cfg.stem_channels;
    int64_t h = cfg.in_h, w = cfg.in_w;
    ledger.entries.push_back(
        {"stem", "shared",
         u64(static_cast<int64_t>(cfg.stem_channels) * cfg.in_channels * 9 *
             h * w),
         u64(static_cast<int64_t>(cfg.stem_channels) *
             (cfg.in_channels * 9 + 1))});
    for (size_t l = 0; l < pm.conv_layers.size(); ++l) {
      const auto& layer = pm.conv_layers[l];
      const std::string name = "block" + std::to_string(l);
      const int co = static_cast<int>(layer.route[0].size());
      const int64_t row_macs = static_cast<int64_t>(ci) * 9 * h * w;
      const int64_t row_params = static_cast<int64_t>(ci) * 9 + 1;
      if (!layer.shared_kept.empty())
        ledger.entries.push_back(
            {name, "shared", u64(row_macs * layer.shared_kept.size()),
             u64(row_params * layer.shared_kept.size())});
      for (int t = 0; t < tasks; ++t) {
        const auto& kept = layer.task_kept[static_cast<size_t>(t)];
        if (!kept.empty())
          ledger.entries.push_back({name, task_branch(t),
                                    u64(row_macs * kept.size()),
                                    u64(row_params * kept.size())});
      }
      const int64_t oh = layer.pool ? h / 2 : h;
      const int64_t ow = layer.pool ? w / 2 : w;
      if (layer.mixer_live)
        ledger.entries.push_back({name, "mixer",
                                  u64(static_cast<int64_t>(co) * tasks * oh *
                                      ow),
                                  u64(static_cast<int64_t>(co) * tasks)});
      ledger.entries.push_back({name, "gate", 0, 0});
      ci = co;
      h = oh;
      w = ow;
    }
    head_entries(ledger, pm.specs, cfg.conv_feature_dim());
  } else {
    const int64_t n = cfg.tokens(), c = cfg.embed;
    const int64_t f = c * cfg.ffn_mult;
    const int64_t p = static_cast<int64_t>(cfg.patch) * cfg.patch *
                      cfg.in_channels;
    ledger.entries.push_back(
        {"stem", "shared", u64(n * c * p), u64(c * (p + 1))});
    for (size_t l = 0; l < pm.attn_layers.size(); ++l) {
      const auto& layer = pm.attn_layers[l];
      const std::string name = "block" + std::to_string(l);
      auto proj_entry = [&](const char* tag, const PrunedProj& proj,
                            int64_t cin) {
        if (!proj.shared_kept.empty())
          ledger.entries.push_back(
              {name + "." + tag, "shared",
               u64(n * cin * proj.shared_kept.size()),
               u64((cin + 1) * proj.shared_kept.size())});
        for (int t = 0; t < tasks; ++t) {
          const auto& kept = proj.task_kept[static_cast<size_t>(t)];
          if (!kept.empty())
            ledger.entries.push_back({name + "." + tag, task_branch(t),
                                      u64(n * cin * kept.size()),
                                      u64((cin + 1) * kept.size())});
        }
      };
      proj_entry("q", layer.q, c);
      proj_entry("k", layer.k, c);
      proj_entry("v", layer.v, c);
      if (layer.shared_attn_live)
        ledger.entries.push_back({name + ".attn", "shared", u64(2 * n * n * c),
                                  0});
      for (int t = 0; t < tasks; ++t)
        ledger.entries.push_back({name + ".attn", task_branch(t),
                                  u64(2 * n * n * c), 0});
      proj_entry("out", layer.out, c);
      proj_entry("ffn1", layer.ffn1, c);
      proj_entry("ffn2", layer.ffn2, f);
      if (layer.shared_ln1_live)
        ledger.entries.push_back({name + ".ln1", "shared", 0, u64(2 * c)});
      if (layer.shared_ffn_live)
        ledger.entries.push_back({name + ".ln2", "shared", 0, u64(2 * c)});
      for (int t = 0; t < tasks; ++t) {
        if (layer.ln1_task_live[static_cast<size_t>(t)])
          ledger.entries.push_back({name + ".ln1", task_branch(t), 0,
                                    u64(2 * c)});
        if (layer.ln2_task_live[static_cast<size_t>(t)])
          ledger.entries.push_back({name + ".ln2", task_branch(t), 0,
                                    u64(2 * c)});
      }
      if (layer.mixer_live)
        ledger.entries.push_back({name, "mixer", u64(c * tasks * n),
                                  u64(c * tasks)});
      ledger.entries.push_back({name, "gate", 0, 0});
    }
    head_entries(ledger, pm.specs, cfg.embed);
  }
  return ledger;
}

}  // namespace interrogate
