#include "interrogate/checkpoint.hpp"

#include <fstream>

namespace interrogate {

using nlohmann::json;

namespace {

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.data()}};
}

void tensor_from_json(const json& j, Tensor& t, const std::string& name) {
  const Shape shape = j.at("shape").get<Shape>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  if (!t.defined())
    throw ContractError("checkpoint: unexpected tensor " + name);
  if (shape != t.shape())
    throw ContractError("checkpoint: shape mismatch for " + name + ": file " +
                        shape_str(shape) + " vs model " + shape_str(t.shape()));
  t.data() = std::move(data);
}

json params_to_json(const ParamList& params) {
  json out = json::object();
  for (const auto& [name, t] : params) out[name] = tensor_to_json(t);
  return out;
}

void params_from_json(const json& j, const ParamList& params) {
  size_t used = 0;
  for (const auto& [name, t] : params) {
    auto it = j.find(name);
    if (it == j.end())
      throw ContractError("checkpoint: missing tensor " + name);
    Tensor tt = t;
    tensor_from_json(*it, tt, name);
    ++used;
  }
  if (used != j.size())
    throw ContractError("checkpoint: file carries extra tensors");
}

std::string loss_name(TaskSpec::Loss l) {
  switch (l) {
    case TaskSpec::Loss::kCrossEntropy: return "cross_entropy";
    case TaskSpec::Loss::kL1: return "l1";
    case TaskSpec::Loss::kSquaredError: return "squared_error";
  }
  return "?";
}

TaskSpec::Loss loss_from(const std::string& s) {
  if (s == "cross_entropy") return TaskSpec::Loss::kCrossEntropy;
  if (s == "l1") return TaskSpec::Loss::kL1;
  if (s == "squared_error") return TaskSpec::Loss::kSquaredError;
  throw ContractError("unknown loss: " + s);
}

TaskSpec::Metric metric_from(const std::string& s) {
  if (s == "accuracy") return TaskSpec::Metric::kAccuracy;
  if (s == "l1_error") return TaskSpec::Metric::kL1Error;
  if (s == "rmse") return TaskSpec::Metric::kRmse;
  throw ContractError("unknown metric: " + s);
}

json meta_to_json(const CheckpointMeta& meta) {
  return json{{"mode", meta.mode},
              {"seed", meta.seed},
              {"task_index", meta.task_index}};
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta meta;
  meta.mode = j.at("mode").get<std::string>();
  meta.seed = j.at("seed").get<uint64_t>();
  meta.task_index = j.at("task_index").get<int>();
  return meta;
}

}  // namespace

json arch_to_json(const ModelConfig& cfg) {
  json j;
  j["type"] = cfg.arch == ModelConfig::Arch::kConv ? "conv" : "transformer";
  j["in_channels"] = cfg.in_channels;
  j["in_h"] = cfg.in_h;
  j["in_w"] = cfg.in_w;
  j["gate_init_logit"] = cfg.gate_init_logit;
  if (cfg.arch == ModelConfig::Arch::kConv) {
    j["stem_channels"] = cfg.stem_channels;
    json blocks = json::array();
    for (const auto& b : cfg.conv_blocks)
      blocks.push_back(json{{"c_out", b.c_out}, {"pool", b.pool}});
    j["blocks"] = blocks;
  } else {
    j["patch"] = cfg.patch;
    j["embed"] = cfg.embed;
    j["heads"] = cfg.heads;
    j["depth"] = cfg.depth;
    j["ffn_mult"] = cfg.ffn_mult;
  }
  return j;
}

ModelConfig arch_from_json(const json& j) {
  ModelConfig cfg;
  const std::string type = j.at("type").get<std::string>();
  cfg.arch = type == "conv" ? ModelConfig::Arch::kConv
                            : ModelConfig::Arch::kTransformer;
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.in_h = j.at("in_h").get<int>();
  cfg.in_w = j.at("in_w").get<int>();
  cfg.gate_init_logit = j.at("gate_init_logit").get<double>();
  if (cfg.arch == ModelConfig::Arch::kConv) {
    cfg.stem_channels = j.at("stem_channels").get<int>();
    cfg.conv_blocks.clear();
    for (const auto& b : j.at("blocks"))
      cfg.conv_blocks.push_back(
          {b.at("c_out").get<int>(), b.at("pool").get<bool>()});
  } else {
    cfg.patch = j.at("patch").get<int>();
    cfg.embed = j.at("embed").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.depth = j.at("depth").get<int>();
    cfg.ffn_mult = j.at("ffn_mult").get<int>();
  }
  return cfg;
}

json tasks_to_json(const std::vector<TaskSpec>& specs) {
  json out = json::array();
  for (const auto& s : specs) {
    json t;
    t["name"] = s.name;
    t["kind"] = s.kind == TaskSpec::Kind::kClassification ? "classification"
                                                          : "regression";
    if (s.kind == TaskSpec::Kind::kClassification)
      t["classes"] = s.classes;
    else
      t["dim"] = s.dim;
    t["loss"] = loss_name(s.loss);
    t["weight"] = s.weight;
    t["metric"] = s.metric_name();
    out.push_back(t);
  }
  return out;
}

std::vector<TaskSpec> tasks_from_json(const json& j) {
  std::vector<TaskSpec> out;
  for (const auto& t : j) {
    TaskSpec s;
    s.name = t.at("name").get<std::string>();
    const std::string kind = t.at("kind").get<std::string>();
    s.kind = kind == "classification" ? TaskSpec::Kind::kClassification
                                      : TaskSpec::Kind::kRegression;
    if (s.kind == TaskSpec::Kind::kClassification)
      s.classes = t.at("classes").get<int>();
    else
      s.dim = t.at("dim").get<int>();
    s.loss = loss_from(t.at("loss").get<std::string>());
    s.weight = t.at("weight").get<double>();
    s.metric = metric_from(t.at("metric").get<std::string>());
    if (s.weight <= 0.0) throw ContractError("task weight must be positive");
    out.push_back(s);
  }
  return out;
}

json encoder_checkpoint(GatedEncoder& enc, const CheckpointMeta& meta) {
  json j;
  j["version"] = kCheckpointVersion;
  j["kind"] = "gated";
  j["meta"] = meta_to_json(meta);
  j["arch"] = arch_to_json(enc.cfg);
  j["tasks"] = tasks_to_json(enc.specs);
  j["tensors"] = params_to_json(enc.all_tensors());
  return j;
}

GatedEncoder load_encoder(const json& j, CheckpointMeta* meta) {
  if (j.at("version").get<std::string>() != kCheckpointVersion)
    throw ContractError("checkpoint: unsupported version");
  if (j.at("kind").get<std::string>() != "gated")
    throw ContractError("checkpoint: not a gated model checkpoint");
  ModelConfig cfg = arch_from_json(j.at("arch"));
  std::vector<TaskSpec> specs = tasks_from_json(j.at("tasks"));
  GatedEncoder enc = GatedEncoder::build(cfg, specs, /*seed=*/0);
  params_from_json(j.at("tensors"), enc.all_tensors());
  if (meta) *meta = meta_from_json(j.at("meta"));
  return enc;
}

json single_task_checkpoint(SingleTaskNet& net, const CheckpointMeta& meta) {
  json j;
  j["version"] = kCheckpointVersion;
  j["kind"] = "single-task";
  j["meta"] = meta_to_json(meta);
  j["arch"] = arch_to_json(net.cfg);
  j["tasks"] = tasks_to_json({net.spec});
  j["tensors"] = params_to_json(net.all_tensors());
  return j;
}

SingleTaskNet load_single_task(const json& j, CheckpointMeta* meta) {
  if (j.at("version").get<std::string>() != kCheckpointVersion)
    throw ContractError("checkpoint: unsupported version");
  if (j.at("kind").get<std::string>() != "single-task")
    throw ContractError("checkpoint: not a single-task checkpoint");
  ModelConfig cfg = arch_from_json(j.at("arch"));
  std::vector<TaskSpec> specs = tasks_from_json(j.at("tasks"));
  if (specs.size() != 1)
    throw ContractError("checkpoint: single-task file with multiple tasks");
  SingleTaskNet net = SingleTaskNet::build(cfg, specs[0], /*seed=*/0);
  params_from_json(j.at("tensors"), net.all_tensors());
  if (meta) *meta = meta_from_json(j.at("meta"));
  return net;
}

namespace {

json routes_to_json(const std::vector<std::vector<SlotRoute>>& routes) {
  // slot source encoding: task rows as +index, shared rows as -(index+1)
  json out = json::array();
  for (const auto& task_route : routes) {
    json row = json::array();
    for (const auto& r : task_route)
      row.push_back(r.from_task ? r.index : -(r.index + 1));
    out.push_back(row);
  }
  return out;
}

std::vector<std::vector<SlotRoute>> routes_from_json(const json& j) {
  std::vector<std::vector<SlotRoute>> out;
  for (const auto& row : j) {
    std::vector<SlotRoute> task_route;
    for (const auto& v : row) {
      const int code = v.get<int>();
      task_route.push_back(code >= 0 ? SlotRoute{true, code}
                                     : SlotRoute{false, -code - 1});
    }
    out.push_back(task_route);
  }
  return out;
}

json kept_to_json(const std::vector<int>& kept) { return json(kept); }

void put_tensor(json& tensors, const std::string& name, const Tensor& t) {
  if (t.defined()) tensors[name] = tensor_to_json(t);
}

Tensor take_tensor(const json& tensors, const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) return Tensor();
  const Shape shape = it->at("shape").get<Shape>();
  std::vector<double> data = it->at("data").get<std::vector<double>>();
  return Tensor::from_data(shape, std::move(data));
}

json proj_to_json(const PrunedProj& p, const std::string& prefix,
                  json& tensors) {
  json j;
  j["shared_kept"] = kept_to_json(p.shared_kept);
  j["task_kept"] = p.task_kept;
  j["route"] = routes_to_json(p.route);
  put_tensor(tensors, prefix + ".shared.w", p.shared_w);
  put_tensor(tensors, prefix + ".shared.b", p.shared_b);
  for (size_t t = 0; t < p.task_w.size(); ++t) {
    put_tensor(tensors, prefix + ".task" + std::to_string(t) + ".w",
               p.task_w[t]);
    put_tensor(tensors, prefix + ".task" + std::to_string(t) + ".b",
               p.task_b[t]);
  }
  return j;
}

PrunedProj proj_from_json(const json& j, const std::string& prefix,
                          const json& tensors, int tasks) {
  PrunedProj p;
  p.shared_kept = j.at("shared_kept").get<std::vector<int>>();
  p.task_kept = j.at("task_kept").get<std::vector<std::vector<int>>>();
  p.route = routes_from_json(j.at("route"));
  p.shared_w = take_tensor(tensors, prefix + ".shared.w");
  p.shared_b = take_tensor(tensors, prefix + ".shared.b");
  for (int t = 0; t < tasks; ++t) {
    p.task_w.push_back(take_tensor(tensors,
                                   prefix + ".task" + std::to_string(t) +
                                       ".w"));
    p.task_b.push_back(take_tensor(tensors,
                                   prefix + ".task" + std::to_string(t) +
                                       ".b"));
  }
  return p;
}

}  // namespace

json pruned_checkpoint(const PrunedModel& pm) {
  json j;
  j["version"] = kPrunedVersion;
  j["arch"] = arch_to_json(pm.cfg);
  j["tasks"] = tasks_to_json(pm.specs);
  json tensors = json::object();
  put_tensor(tensors, "stem.w", pm.stem_w);
  put_tensor(tensors, "stem.b", pm.stem_b);
  put_tensor(tensors, "stem.pos", pm.pos_embed);
  for (size_t t = 0; t < pm.head_w.size(); ++t) {
    put_tensor(tensors, "head" + std::to_string(t) + ".w", pm.head_w[t]);
    put_tensor(tensors, "head" + std::to_string(t) + ".b", pm.head_b[t]);
  }
  json layers = json::array();
  for (size_t l = 0; l < pm.conv_layers.size(); ++l) {
    const auto& layer = pm.conv_layers[l];
    const std::string prefix = "block" + std::to_string(l);
    json jl;
    jl["shared_kept"] = kept_to_json(layer.shared_kept);
    jl["task_kept"] = layer.task_kept;
    jl["route"] = routes_to_json(layer.route);
    jl["pool"] = layer.pool;
    jl["mixer_live"] = layer.mixer_live;
    if (layer.mixer_live) jl["mixer_w"] = layer.mixer_w;
    put_tensor(tensors, prefix + ".shared.w", layer.shared_w);
    put_tensor(tensors, prefix + ".shared.b", layer.shared_b);
    for (size_t t = 0; t < layer.task_w.size(); ++t) {
      put_tensor(tensors, prefix + ".task" + std::to_string(t) + ".w",
                 layer.task_w[t]);
      put_tensor(tensors, prefix + ".task" + std::to_string(t) + ".b",
                 layer.task_b[t]);
    }
    layers.push_back(jl);
  }
  for (size_t l = 0; l < pm.attn_layers.size(); ++l) {
    const auto& layer = pm.attn_layers[l];
    const std::string prefix = "block" + std::to_string(l);
    json jl;
    jl["heads"] = layer.heads;
    jl["q"] = proj_to_json(layer.q, prefix + ".q", tensors);
    jl["k"] = proj_to_json(layer.k, prefix + ".k", tensors);
    jl["v"] = proj_to_json(layer.v, prefix + ".v", tensors);
    jl["out"] = proj_to_json(layer.out, prefix + ".out", tensors);
    jl["ffn1"] = proj_to_json(layer.ffn1, prefix + ".ffn1", tensors);
    jl["ffn2"] = proj_to_json(layer.ffn2, prefix + ".ffn2", tensors);
    jl["shared_ln1_live"] = layer.shared_ln1_live;
    jl["shared_attn_live"] = layer.shared_attn_live;
    jl["shared_ffn_live"] = layer.shared_ffn_live;
    jl["shared_ffn2_live"] = layer.shared_ffn2_live;
    jl["ln1_task_live"] = layer.ln1_task_live;
    jl["ln2_task_live"] = layer.ln2_task_live;
    jl["mixer_live"] = layer.mixer_live;
    if (layer.mixer_live) jl["mixer_w"] = layer.mixer_w;
    put_tensor(tensors, prefix + ".ln1.shared.g", layer.ln1_shared_g);
    put_tensor(tensors, prefix + ".ln1.shared.b", layer.ln1_shared_b);
    put_tensor(tensors, prefix + ".ln2.shared.g", layer.ln2_shared_g);
    put_tensor(tensors, prefix + ".ln2.shared.b", layer.ln2_shared_b);
    for (size_t t = 0; t < layer.ln1_task_g.size(); ++t) {
      const std::string ts = std::to_string(t);
      put_tensor(tensors, prefix + ".ln1.task" + ts + ".g",
                 layer.ln1_task_g[t]);
      put_tensor(tensors, prefix + ".ln1.task" + ts + ".b",
                 layer.ln1_task_b[t]);
      put_tensor(tensors, prefix + ".ln2.task" + ts + ".g",
                 layer.ln2_task_g[t]);
      put_tensor(tensors, prefix + ".ln2.task" + ts + ".b",
                 layer.ln2_task_b[t]);
    }
    layers.push_back(jl);
  }
  j["layers"] = layers;
  j["tensors"] = tensors;
  return j;
}

PrunedModel load_pruned(const json& j) {
  if (j.at("version").get<std::string>() != kPrunedVersion)
    throw ContractError("pruned checkpoint: unsupported version");
  PrunedModel pm;
  pm.cfg = arch_from_json(j.at("arch"));
  pm.specs = tasks_from_json(j.at("tasks"));
  const json& tensors = j.at("tensors");
  const int tasks = pm.tasks();
  pm.stem_w = take_tensor(tensors, "stem.w");
  pm.stem_b = take_tensor(tensors, "stem.b");
  pm.pos_embed = take_tensor(tensors, "stem.pos");
  for (int t = 0; t < tasks; ++t) {
    pm.head_w.push_back(take_tensor(tensors,
                                    "head" + std::to_string(t) + ".w"));
    pm.head_b.push_back(take_tensor(tensors,
                                    "head" + std::to_string(t) + ".b"));
  }
  const json& layers = j.at("layers");
  for (size_t l = 0; l < layers.size(); ++l) {
    const json& jl = layers[l];
    const std::string prefix = "block" + std::to_string(l);
    if (pm.cfg.arch == ModelConfig::Arch::kConv) {
      PrunedConvLayer layer;
      layer.shared_kept = jl.at("shared_kept").get<std::vector<int>>();
      layer.task_kept =
          jl.at("task_kept").get<std::vector<std::vector<int>>>();
      layer.route = routes_from_json(jl.at("route"));
      layer.pool = jl.at("pool").get<bool>();
      layer.mixer_live = jl.at("mixer_live").get<bool>();
      if (layer.mixer_live)
        layer.mixer_w = jl.at("mixer_w").get<std::vector<double>>();
      layer.shared_w = take_tensor(tensors, prefix + ".shared.w");
      layer.shared_b = take_tensor(tensors, prefix + ".shared.b");
      for (int t = 0; t < tasks; ++t) {
        layer.task_w.push_back(
            take_tensor(tensors, prefix + ".task" + std::to_string(t) + ".w"));
        layer.task_b.push_back(
            take_tensor(tensors, prefix + ".task" + std::to_string(t) + ".b"));
      }
      pm.conv_layers.push_back(std::move(layer));
    } else {
      PrunedAttnLayer layer;
      layer.heads = jl.at("heads").get<int>();
      layer.q = proj_from_json(jl.at("q"), prefix + ".q", tensors, tasks);
      layer.k = proj_from_json(jl.at("k"), prefix + ".k", tensors, tasks);
      layer.v = proj_from_json(jl.at("v"), prefix + ".v", tensors, tasks);
      layer.out = proj_from_json(jl.at("out"), prefix + ".out", tensors,
                                 tasks);
      layer.ffn1 = proj_from_json(jl.at("ffn1"), prefix + ".ffn1", tensors,
                                  tasks);
      layer.ffn2 = proj_from_json(jl.at("ffn2"), prefix + ".ffn2", tensors,
                                  tasks);
      layer.shared_ln1_live = jl.at("shared_ln1_live").get<bool>();
      layer.shared_attn_live = jl.at("shared_attn_live").get<bool>();
      layer.shared_ffn_live = jl.at("shared_ffn_live").get<bool>();
      layer.shared_ffn2_live = jl.at("shared_ffn2_live").get<bool>();
      layer.ln1_task_live =
          jl.at("ln1_task_live").get<std::vector<uint8_t>>();
      layer.ln2_task_live =
          jl.at("ln2_task_live").get<std::vector<uint8_t>>();
      layer.mixer_live = jl.at("mixer_live").get<bool>();
      if (layer.mixer_live)
        layer.mixer_w = jl.at("mixer_w").get<std::vector<double>>();
      layer.ln1_shared_g = take_tensor(tensors, prefix + ".ln1.shared.g");
      layer.ln1_shared_b = take_tensor(tensors, prefix + ".ln1.shared.b");
      layer.ln2_shared_g = take_tensor(tensors, prefix + ".ln2.shared.g");
      layer.ln2_shared_b = take_tensor(tensors, prefix + ".ln2.shared.b");
      for (int t = 0; t < tasks; ++t) {
        const std::string ts = std::to_string(t);
        layer.ln1_task_g.push_back(
            take_tensor(tensors, prefix + ".ln1.task" + ts + ".g"));
        layer.ln1_task_b.push_back(
            take_tensor(tensors, prefix + ".ln1.task" + ts + ".b"));
        layer.ln2_task_g.push_back(
            take_tensor(tensors, prefix + ".ln2.task" + ts + ".g"));
        layer.ln2_task_b.push_back(
            take_tensor(tensors, prefix + ".ln2.task" + ts + ".b"));
      }
      pm.attn_layers.push_back(std::move(layer));
    }
  }
  return pm;
}

json pattern_to_json(const GatePattern& pattern) {
  json j;
  j["tasks"] = pattern.tasks;
  j["gate_widths"] = pattern.gate_widths;
  j["mixer_widths"] = pattern.mixer_widths;
  json masks = json::array();
  for (const auto& task : pattern.masks) {
    json sites = json::array();
    for (const auto& site : task) {
      json row = json::array();
      for (uint8_t m : site) row.push_back(m != 0);
      sites.push_back(row);
    }
    masks.push_back(sites);
  }
  j["masks"] = masks;
  j["mixer_weights"] = pattern.mixer_weights;
  j["checksum"] = pattern.checksum;
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write " + path);
  out << j.dump(1, '\t') << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot read " + path);
  return json::parse(in);
}

}  // namespace interrogate
