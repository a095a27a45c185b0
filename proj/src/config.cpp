#include "interrogate/config.hpp"

#include "interrogate/checkpoint.hpp"

namespace interrogate {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it != j.end()) out = it->get<T>();
}

SyntheticSpec parse_dataset(const json& j) {
  reject_unknown(j, "dataset",
                 {"generator", "train_size", "test_size", "rho", "seed",
                  "image_size"});
  SyntheticSpec spec;
  maybe(j, "generator", spec.generator);
  maybe(j, "train_size", spec.train_size);
  maybe(j, "test_size", spec.test_size);
  maybe(j, "rho", spec.rho);
  maybe(j, "seed", spec.seed);
  maybe(j, "image_size", spec.image_size);
  if (spec.rho < 0.0 || spec.rho > 1.0)
    throw ConfigError("dataset.rho must lie in [0,1]");
  if (spec.train_size <= 0 || spec.test_size <= 0)
    throw ConfigError("dataset sizes must be positive");
  return spec;
}

ModelConfig parse_model(const json& j, const SyntheticSpec& ds) {
  reject_unknown(j, "model",
                 {"arch", "stem_channels", "blocks", "patch", "embed", "heads",
                  "depth", "ffn_mult", "gate_init_logit"});
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.in_h = cfg.in_w = ds.image_size;
  std::string arch = "conv";
  maybe(j, "arch", arch);
  if (arch == "conv") {
    cfg.arch = ModelConfig::Arch::kConv;
  } else if (arch == "transformer") {
    cfg.arch = ModelConfig::Arch::kTransformer;
  } else {
    throw ConfigError("model.arch must be \"conv\" or \"transformer\"");
  }
  maybe(j, "stem_channels", cfg.stem_channels);
  if (j.contains("blocks")) {
    cfg.conv_blocks.clear();
    for (const auto& b : j.at("blocks")) {
      reject_unknown(b, "model.blocks[]", {"c_out", "pool"});
      ConvBlockSpec bs;
      maybe(b, "c_out", bs.c_out);
      maybe(b, "pool", bs.pool);
      if (bs.c_out <= 0) throw ConfigError("model.blocks[].c_out must be > 0");
      cfg.conv_blocks.push_back(bs);
    }
  }
  maybe(j, "patch", cfg.patch);
  maybe(j, "embed", cfg.embed);
  maybe(j, "heads", cfg.heads);
  maybe(j, "depth", cfg.depth);
  maybe(j, "ffn_mult", cfg.ffn_mult);
  maybe(j, "gate_init_logit", cfg.gate_init_logit);
  if (cfg.arch == ModelConfig::Arch::kTransformer) {
    if (cfg.embed % cfg.heads != 0)
      throw ConfigError("model.heads must divide model.embed");
    if (ds.image_size % cfg.patch != 0)
      throw ConfigError("model.patch must divide the image size");
  }
  return cfg;
}

OptimizerConfig parse_optimizer(const json& j) {
  reject_unknown(j, "optimizer",
                 {"main_lr", "weight_decay", "gate_kind", "gate_lr",
                  "gate_clamp", "gate_grad_clip", "epochs", "batch_size",
                  "seed", "lr_schedule"});
  OptimizerConfig cfg;
  maybe(j, "main_lr", cfg.main_lr);
  maybe(j, "weight_decay", cfg.weight_decay);
  std::string gate_kind = "sgd";
  maybe(j, "gate_kind", gate_kind);
  if (gate_kind == "adam") {
    cfg.gate_kind = OptimizerConfig::GateKind::kAdam;
  } else if (gate_kind == "sgd") {
    cfg.gate_kind = OptimizerConfig::GateKind::kSgd;
  } else {
    throw ConfigError("optimizer.gate_kind must be sgd or adam");
  }
  maybe(j, "gate_lr", cfg.gate_lr);
  maybe(j, "gate_clamp", cfg.gate_clamp);
  maybe(j, "gate_grad_clip", cfg.gate_grad_clip);
  maybe(j, "epochs", cfg.epochs);
  maybe(j, "batch_size", cfg.batch_size);
  maybe(j, "seed", cfg.seed);
  if (cfg.main_lr <= 0.0 || cfg.gate_lr <= 0.0)
    throw ConfigError("optimizer learning rates must be positive");
  if (cfg.gate_clamp < 0.0)
    throw ConfigError("optimizer.gate_clamp must be >= 0 (0 disables)");
  if (cfg.epochs < 0) throw ConfigError("optimizer.epochs must be >= 0");
  if (cfg.batch_size <= 0)
    throw ConfigError("optimizer.batch_size must be positive");
  if (j.contains("lr_schedule")) {
    const json& s = j.at("lr_schedule");
    reject_unknown(s, "optimizer.lr_schedule",
                   {"kind", "step_size", "factor", "power"});
    std::string kind = "none";
    maybe(s, "kind", kind);
    if (kind == "none") {
      cfg.schedule = OptimizerConfig::Schedule::kNone;
    } else if (kind == "step") {
      cfg.schedule = OptimizerConfig::Schedule::kStep;
    } else if (kind == "polynomial") {
      cfg.schedule = OptimizerConfig::Schedule::kPolynomial;
    } else {
      throw ConfigError("lr_schedule.kind must be none|step|polynomial");
    }
    maybe(s, "step_size", cfg.step_size);
    maybe(s, "factor", cfg.step_factor);
    maybe(s, "power", cfg.poly_power);
    if (cfg.step_size <= 0)
      throw ConfigError("lr_schedule.step_size must be positive");
  }
  return cfg;
}

SparsityConfig::Variant variant_from(const std::string& s) {
  if (s == "hinge") return SparsityConfig::Variant::kHinge;
  if (s == "l1") return SparsityConfig::Variant::kL1;
  if (s == "none") return SparsityConfig::Variant::kNone;
  throw ConfigError("sparsity.variant must be hinge|l1|none");
}

std::string variant_name(SparsityConfig::Variant v) {
  switch (v) {
    case SparsityConfig::Variant::kHinge: return "hinge";
    case SparsityConfig::Variant::kL1: return "l1";
    case SparsityConfig::Variant::kNone: return "none";
  }
  return "?";
}

SparsityConfig parse_sparsity(const json& j, size_t tasks) {
  reject_unknown(j, "sparsity", {"lambda_s", "tau", "variant"});
  SparsityConfig cfg;
  cfg.tau.assign(tasks, 0.25);
  maybe(j, "lambda_s", cfg.lambda_s);
  maybe(j, "tau", cfg.tau);
  std::string variant = "hinge";
  maybe(j, "variant", variant);
  cfg.variant = variant_from(variant);
  if (cfg.lambda_s < 0.0) throw ConfigError("sparsity.lambda_s must be >= 0");
  if (cfg.variant == SparsityConfig::Variant::kHinge) {
    if (cfg.tau.size() != tasks)
      throw ConfigError("sparsity.tau needs one entry per task");
    for (double t : cfg.tau)
      if (t < 0.0 || t > 1.0) throw ConfigError("sparsity.tau in [0,1]");
  }
  return cfg;
}

SweepPlan parse_sweep(const json& j, size_t tasks) {
  reject_unknown(j, "sweep",
                 {"lambda_grid", "tau_grid", "seeds", "epochs", "variant"});
  SweepPlan plan;
  plan.tau_grid = {std::vector<double>(tasks, 0.0),
                   std::vector<double>(tasks, 1.0)};
  maybe(j, "lambda_grid", plan.lambda_grid);
  if (j.contains("tau_grid"))
    plan.tau_grid = j.at("tau_grid").get<std::vector<std::vector<double>>>();
  maybe(j, "seeds", plan.seeds);
  maybe(j, "epochs", plan.epochs);
  std::string variant = "hinge";
  maybe(j, "variant", variant);
  plan.variant = variant_from(variant);
  if (plan.lambda_grid.empty() || plan.tau_grid.empty() || plan.seeds.empty())
    throw ConfigError("sweep grid must be nonempty");
  for (const auto& tau : plan.tau_grid)
    if (tau.size() != tasks)
      throw ConfigError("sweep.tau_grid rows need one entry per task");
  if (plan.epochs <= 0) throw ConfigError("sweep.epochs must be positive");
  return plan;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  reject_unknown(j, "config",
                 {"dataset", "model", "tasks", "optimizer", "sparsity",
                  "sweep", "output_dir"});
  RunConfig cfg;
  if (j.contains("dataset")) cfg.dataset = parse_dataset(j.at("dataset"));
  cfg.model = parse_model(j.contains("model") ? j.at("model") : json::object(),
                          cfg.dataset);
  cfg.tasks = synthetic_task_specs();
  if (j.contains("tasks")) {
    std::vector<TaskSpec> tasks = tasks_from_json(j.at("tasks"));
    if (tasks.size() != cfg.tasks.size())
      throw ConfigError("tasks: the blobs-v1 generator carries 3 tasks");
    for (size_t t = 0; t < tasks.size(); ++t) {
      if (tasks[t].kind != cfg.tasks[t].kind)
        throw ConfigError("tasks[" + std::to_string(t) +
                          "]: kind must match the generator");
      cfg.tasks[t] = tasks[t];
    }
  }
  cfg.optimizer = parse_optimizer(
      j.contains("optimizer") ? j.at("optimizer") : json::object());
  cfg.sparsity = parse_sparsity(
      j.contains("sparsity") ? j.at("sparsity") : json::object(),
      cfg.tasks.size());
  if (j.contains("sweep")) {
    cfg.sweep = parse_sweep(j.at("sweep"), cfg.tasks.size());
  } else {
    cfg.sweep.tau_grid = {std::vector<double>(cfg.tasks.size(), 0.0),
                          std::vector<double>(cfg.tasks.size(), 1.0)};
  }
  if (j.contains("output_dir"))
    cfg.output_dir = j.at("output_dir").get<std::string>();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_json_file(path));
}

json resolved_config(const RunConfig& cfg) {
  json j;
  j["dataset"] = {{"generator", cfg.dataset.generator},
                  {"train_size", cfg.dataset.train_size},
                  {"test_size", cfg.dataset.test_size},
                  {"rho", cfg.dataset.rho},
                  {"seed", cfg.dataset.seed},
                  {"image_size", cfg.dataset.image_size}};
  json model = arch_to_json(cfg.model);
  // the arch document doubles as the model section, keyed consistently
  model["arch"] = model.at("type");
  model.erase("type");
  model.erase("in_channels");
  model.erase("in_h");
  model.erase("in_w");
  j["model"] = model;
  j["tasks"] = tasks_to_json(cfg.tasks);
  json sched;
  switch (cfg.optimizer.schedule) {
    case OptimizerConfig::Schedule::kNone: sched["kind"] = "none"; break;
    case OptimizerConfig::Schedule::kStep:
      sched["kind"] = "step";
      sched["step_size"] = cfg.optimizer.step_size;
      sched["factor"] = cfg.optimizer.step_factor;
      break;
    case OptimizerConfig::Schedule::kPolynomial:
      sched["kind"] = "polynomial";
      sched["power"] = cfg.optimizer.poly_power;
      break;
  }
  j["optimizer"] = {{"main_lr", cfg.optimizer.main_lr},
                    {"weight_decay", cfg.optimizer.weight_decay},
                    {"gate_kind",
                     cfg.optimizer.gate_kind ==
                             OptimizerConfig::GateKind::kAdam
                         ? "adam"
                         : "sgd"},
                    {"gate_lr", cfg.optimizer.gate_lr},
                    {"gate_clamp", cfg.optimizer.gate_clamp},
                    {"gate_grad_clip", cfg.optimizer.gate_grad_clip},
                    {"epochs", cfg.optimizer.epochs},
                    {"batch_size", cfg.optimizer.batch_size},
                    {"seed", cfg.optimizer.seed},
                    {"lr_schedule", sched}};
  j["sparsity"] = {{"lambda_s", cfg.sparsity.lambda_s},
                   {"tau", cfg.sparsity.tau},
                   {"variant", variant_name(cfg.sparsity.variant)}};
  j["sweep"] = {{"lambda_grid", cfg.sweep.lambda_grid},
                {"tau_grid", cfg.sweep.tau_grid},
                {"seeds", cfg.sweep.seeds},
                {"epochs", cfg.sweep.epochs},
                {"variant", variant_name(cfg.sweep.variant)}};
  j["output_dir"] = cfg.output_dir;
  return j;
}

}  // namespace interrogate
