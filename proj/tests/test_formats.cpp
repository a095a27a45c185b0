#include <fstream>

#include "doctest.h"
#include "interrogate/checkpoint.hpp"
#include "interrogate/config.hpp"
#include "interrogate/report.hpp"
#include "interrogate/schema.hpp"
#include "support/testutil.hpp"

using namespace interrogate;
using nlohmann::json;
using testutil::random_tensor;

namespace {

std::vector<TaskSpec> specs3() { return synthetic_task_specs(); }

ModelConfig conv_cfg() {
  ModelConfig cfg;
  cfg.arch = ModelConfig::Arch::kConv;
  cfg.in_h = cfg.in_w = 8;
  cfg.stem_channels = 4;
  cfg.conv_blocks = {{4, false}, {6, true}};
  return cfg;
}

ModelConfig vit_cfg() {
  ModelConfig cfg;
  cfg.arch = ModelConfig::Arch::kTransformer;
  cfg.in_h = cfg.in_w = 8;
  cfg.patch = 4;
  cfg.embed = 8;
  cfg.heads = 2;
  cfg.depth = 2;
  return cfg;
}

json repo_schema(const std::string& name) {
  return read_json_file(std::string(TEST_SOURCE_DIR) + "/../schemas/" + name);
}

}  // namespace

TEST_CASE("gated checkpoint round-trips bitwise") {
  for (int arch = 0; arch < 2; ++arch) {
    GatedEncoder enc = GatedEncoder::build(arch == 0 ? conv_cfg() : vit_cfg(),
                                           specs3(), 42);
    Rng rng(1);
    for (auto& v : enc.bank.alpha().data()) v = rng.normal();
    for (auto& v : enc.mixer.beta().data()) v = rng.normal();
    // scramble a weight so the round trip is not trivially the seed state
    for (auto& v : enc.head_w[1].data()) v += rng.normal(0, 0.3);
    CheckpointMeta meta{"interrogate", 42, -1};
    json saved = encoder_checkpoint(enc, meta);
    // through text, as the CLI writes it
    const std::string text = saved.dump(1, '\t');
    json reloaded_json = json::parse(text);
    CheckpointMeta meta2;
    GatedEncoder twin = load_encoder(reloaded_json, &meta2);
    CHECK(meta2.mode == "interrogate");
    CHECK(meta2.seed == 42);
    ParamList a = enc.all_tensors();
    ParamList b = twin.all_tensors();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(a[i].second.data() == b[i].second.data());  // bitwise
    }
    // and the frozen routing pattern is preserved exactly
    GatePattern pa = extract_pattern(enc);
    GatePattern pb = extract_pattern(twin);
    CHECK(pa.masks == pb.masks);
    CHECK(pa.mixer_weights == pb.mixer_weights);
    CHECK(pa.checksum == pb.checksum);
  }
}

TEST_CASE("single-task checkpoint round-trips bitwise") {
  SingleTaskNet net = SingleTaskNet::build(conv_cfg(), specs3()[0], 7);
  CheckpointMeta meta{"stl", 7, 0};
  json saved = single_task_checkpoint(net, meta);
  SingleTaskNet twin = load_single_task(json::parse(saved.dump()), nullptr);
  ParamList a = net.all_tensors();
  ParamList b = twin.all_tensors();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].second.data() == b[i].second.data());
}

TEST_CASE("pruned checkpoint round-trips and stays equivalent") {
  for (int arch = 0; arch < 2; ++arch) {
    GatedEncoder enc = GatedEncoder::build(arch == 0 ? conv_cfg() : vit_cfg(),
                                           specs3(), 13);
    Rng rng(13);
    for (auto& v : enc.bank.alpha().data()) v = rng.normal();
    PrunedModel pm = collapse(enc, extract_pattern(enc));
    json saved = pruned_checkpoint(pm);
    PrunedModel twin = load_pruned(json::parse(saved.dump(1, '\t')));
    Tensor x = random_tensor(rng, {2, 1, 8, 8}, false);
    std::vector<Tensor> a = pm.forward_logits(x);
    std::vector<Tensor> b = twin.forward_logits(x);
    for (size_t t = 0; t < a.size(); ++t)
      CHECK(a[t].data() == b[t].data());  // bitwise
    // second serialization is byte-identical (deterministic collapse)
    PrunedModel pm2 = collapse(enc, extract_pattern(enc));
    CHECK(pruned_checkpoint(pm2).dump(1, '\t') == saved.dump(1, '\t'));
  }
}

TEST_CASE("checkpoint errors") {
  GatedEncoder enc = GatedEncoder::build(conv_cfg(), specs3(), 1);
  CheckpointMeta meta{"interrogate", 1, -1};
  json saved = encoder_checkpoint(enc, meta);
  SUBCASE("bad version") {
    saved["version"] = "interrogate-ckpt-v0";
    CHECK_THROWS_AS(load_encoder(saved, nullptr), ContractError);
  }
  SUBCASE("missing tensor") {
    saved["tensors"].erase("head0.w");
    CHECK_THROWS_AS(load_encoder(saved, nullptr), ContractError);
  }
  SUBCASE("extra tensor") {
    saved["tensors"]["bogus"] = json{{"shape", {1}}, {"data", {0.0}}};
    CHECK_THROWS_AS(load_encoder(saved, nullptr), ContractError);
  }
  SUBCASE("shape mismatch") {
    saved["tensors"]["head0.w"]["shape"] = {2, 2};
    saved["tensors"]["head0.w"]["data"] = {1.0, 2.0, 3.0, 4.0};
    CHECK_THROWS_AS(load_encoder(saved, nullptr), ContractError);
  }
}

TEST_CASE("run config validation") {
  SUBCASE("defaults materialize and echo round-trips") {
    RunConfig cfg = parse_run_config(json::object());
    json echoed = resolved_config(cfg);
    CHECK(echoed.contains("dataset"));
    CHECK(echoed.contains("optimizer"));
    CHECK(echoed.at("sweep").at("lambda_grid") ==
          json::array({0.01, 0.03, 0.05, 0.07, 0.1}));
    RunConfig again = parse_run_config(echoed);
    CHECK(resolved_config(again).dump() == echoed.dump());
  }
  SUBCASE("unknown keys rejected at every level") {
    CHECK_THROWS_AS(parse_run_config(json{{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"dataset", {{"bogus", 1}}}}),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"optimizer", {{"lr", 0.1}}}}),
                    ConfigError);
    CHECK_THROWS_AS(
        parse_run_config(json{{"optimizer",
                               {{"lr_schedule", {{"kindd", "none"}}}}}}),
        ConfigError);
  }
  SUBCASE("domain checks") {
    CHECK_THROWS_AS(parse_run_config(json{{"dataset", {{"rho", 1.5}}}}),
                    ConfigError);
    CHECK_THROWS_AS(
        parse_run_config(json{{"sparsity", {{"lambda_s", -0.1}}}}),
        ConfigError);
    CHECK_THROWS_AS(
        parse_run_config(json{{"sparsity", {{"tau", {0.2, 0.2}}}}}),
        ConfigError);
    CHECK_THROWS_AS(
        parse_run_config(json{{"model", {{"arch", "mlp"}}}}), ConfigError);
  }
}

TEST_CASE("sweep csv header is the frozen contract") {
  CHECK(sweep_csv_header(specs3()) ==
        "lambda_s,tau,seed,flops,params,delta_mtl,quadrant_accuracy,"
        "mass_l1_error,parity_accuracy");
}

TEST_CASE("sweep csv and pareto emission") {
  SweepReport report;
  SweepCell a;
  a.index = 0;
  a.lambda_s = 0.01;
  a.tau = {0, 0, 0};
  a.seed = 1;
  a.ok = true;
  a.flops = 2000;
  a.params = 300;
  a.delta_mtl = 1.5;
  a.metrics = {0.9, 0.2, 0.8};
  SweepCell b = a;
  b.index = 1;
  b.lambda_s = 0.1;
  b.flops = 1000;
  b.delta_mtl = -2.0;
  SweepCell failed = a;
  failed.index = 2;
  failed.ok = false;
  failed.error = "boom";
  report.cells = {a, b, failed};
  report.pareto = {0, 1};
  std::string csv = sweep_csv(report, specs3());
  CHECK(csv ==
        "lambda_s,tau,seed,flops,params,delta_mtl,quadrant_accuracy,"
        "mass_l1_error,parity_accuracy\n"
        "0.01,0|0|0,1,2000,300,1.5,0.9,0.2,0.8\n"
        "0.1,0|0|0,1,1000,300,-2,0.9,0.2,0.8\n");
  std::string front = pareto_csv(report, specs3());
  CHECK(front.find("1000") < front.find("2000"));  // sorted by flops

  json sj = sweep_json(report, specs3());
  CHECK(schema_validate(sj, repo_schema("sweep.schema.json")).empty());

  std::string svg = pareto_svg(report);
  CHECK(svg.rfind("<?xml version=\"1.0\"", 0) == 0);
  CHECK(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\"")
        != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("circle") != std::string::npos);
}

TEST_CASE("emitted documents validate against the shipped schemas") {
  GatedEncoder enc = GatedEncoder::build(conv_cfg(), specs3(), 3);
  SUBCASE("gate pattern") {
    json doc = pattern_to_json(extract_pattern(enc));
    CHECK(schema_validate(doc, repo_schema("gate_pattern.schema.json"))
              .empty());
  }
  SUBCASE("gate stats") {
    GateReport rep = gate_statistics(enc.bank, enc.mixer);
    json doc = gate_stats_json(rep, {"quadrant", "mass", "parity"});
    CHECK(schema_validate(doc, repo_schema("gate_stats.schema.json")).empty());
  }
  SUBCASE("metrics") {
    RunMetrics m;
    m.method = "interrogate";
    m.seed = 1;
    m.task_names = {"quadrant"};
    m.metric_names = {"accuracy"};
    m.lower_better = {false};
    m.values = {0.9};
    m.flops = 100;
    m.encoder_flops = 90;
    m.params = 10;
    json doc = metrics_to_json(m);
    CHECK(schema_validate(doc, repo_schema("metrics.schema.json")).empty());
    RunMetrics back = metrics_from_json(doc);
    CHECK(back.method == m.method);
    CHECK(back.values == m.values);
  }
  SUBCASE("history") {
    EpochStats stats;
    stats.epoch = 2;
    stats.task_losses = {0.1, 0.2};
    stats.selection_ratios = {0.5, 0.6};
    json doc = history_json(stats);
    CHECK(schema_validate(doc, repo_schema("history.schema.json")).empty());
  }
  SUBCASE("schema validator flags violations") {
    json doc = pattern_to_json(extract_pattern(enc));
    doc.erase("checksum");
    CHECK(!schema_validate(doc, repo_schema("gate_pattern.schema.json"))
               .empty());
    json doc2 = pattern_to_json(extract_pattern(enc));
    doc2["surprise"] = 1;
    CHECK(!schema_validate(doc2, repo_schema("gate_pattern.schema.json"))
               .empty());
  }
}

TEST_CASE("report assembly from run metrics") {
  std::vector<RunMetrics> runs;
  auto add = [&](const std::string& method, uint64_t seed,
                 std::vector<std::string> names, std::vector<double> values,
                 bool baseline) {
    RunMetrics m;
    m.method = method;
    m.seed = seed;
    m.task_names = names;
    for (const auto& n : names) {
      m.metric_names.push_back(n == "depth" || n == "normals" ? "l1_error"
                                                              : "accuracy");
      m.lower_better.push_back(n == "depth" || n == "normals");
    }
    m.values = values;
    m.baseline = baseline;
    m.flops = 100;
    m.params = 10;
    m.encoder_flops = 90;
    runs.push_back(m);
  };
  // baseline fragments, one per task
  add("stl-task0", 1, {"semseg"}, {41.70}, true);
  add("stl-task1", 1, {"depth"}, {0.582}, true);
  add("stl-task2", 1, {"normals"}, {18.89}, true);
  add("mtl-uniform", 1, {"semseg", "depth", "normals"}, {41.83, 0.582, 22.84},
      false);
  add("gated", 1, {"semseg", "depth", "normals"}, {43.58, 0.559, 19.32},
      false);
  Report report = build_report(runs);
  REQUIRE(report.methods.size() == 3);
  CHECK(report.methods[0].method == "stl");
  CHECK(report.methods[0].delta_mtl == 0.0);
  double uni = 0.0, gated = 0.0;
  for (const auto& m : report.methods) {
    if (m.method == "mtl-uniform") uni = m.delta_mtl;
    if (m.method == "gated") gated = m.delta_mtl;
  }
  CHECK(std::fabs(uni - (-6.86)) < 0.05);
  CHECK(std::fabs(gated - 2.06) < 0.05);

  // permutation invariance
  std::vector<RunMetrics> shuffled = {runs[4], runs[1], runs[3], runs[0],
                                      runs[2]};
  Report again = build_report(shuffled);
  CHECK(report_csv(again) == report_csv(report));

  // csv and text shapes
  std::string csv = report_csv(report);
  CHECK(csv.rfind("method,semseg_accuracy,depth_l1_error,normals_l1_error,"
                  "delta_mtl,mr,flops,params\n", 0) == 0);
  std::string text = report_text(report);
  CHECK(text.find("stl") != std::string::npos);
}
