#include <cmath>

#include "doctest.h"
#include "interrogate/metrics.hpp"
#include "support/testutil.hpp"

using namespace interrogate;
using testutil::random_tensor;

namespace {

ScoreTable nyud_table() {
  ScoreTable t;
  t.task_names = {"semseg", "depth", "normals"};
  t.lower_better = {false, true, true};
  t.baseline = "stl";
  t.add_row("stl", {41.70, 0.582, 18.89});
  t.add_row("mtl-uniform", {41.83, 0.582, 22.84});
  t.add_row("gated", {43.58, 0.559, 19.32});
  return t;
}

std::vector<TaskSpec> toy_specs() {
  TaskSpec cls4{"quadrant", TaskSpec::Kind::kClassification, 4, 1,
                TaskSpec::Loss::kCrossEntropy, 1.0, TaskSpec::Metric::kAccuracy};
  TaskSpec reg{"mass", TaskSpec::Kind::kRegression, 0, 1, TaskSpec::Loss::kL1,
               1.0, TaskSpec::Metric::kL1Error};
  TaskSpec cls2{"parity", TaskSpec::Kind::kClassification, 2, 1,
                TaskSpec::Loss::kCrossEntropy, 1.0, TaskSpec::Metric::kAccuracy};
  return {cls4, reg, cls2};
}

}  // namespace

TEST_CASE("delta_mtl reproduces the published relative drops") {
  ScoreTable t = nyud_table();
  CHECK(std::fabs(delta_mtl(t, "mtl-uniform") - (-6.86)) < 0.05);
  CHECK(std::fabs(delta_mtl(t, "gated") - 2.06) < 0.05);
  CHECK(delta_mtl(t, "stl") == 0.0);
}

TEST_CASE("delta_mtl contract errors") {
  ScoreTable t = nyud_table();
  CHECK_THROWS_AS(delta_mtl(t, "nope"), ContractError);
  t.add_row("zero-base", {1, 1, 1});
  t.baseline = "zero-base";
  t.rows["zero-base"][1] = 0.0;
  CHECK_THROWS_AS(delta_mtl(t, "gated"), ContractError);
}

TEST_CASE("delta_mtl is scale invariant per task") {
  ScoreTable t = nyud_table();
  const double before = delta_mtl(t, "gated");
  for (auto& [name, row] : t.rows) row[1] *= 1000.0;
  CHECK(delta_mtl(t, "gated") == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("mean rank basics") {
  ScoreTable t;
  t.task_names = {"a", "b"};
  t.lower_better = {false, false};
  t.baseline = "m1";
  t.add_row("m1", {2.0, 2.0});
  t.add_row("m2", {1.0, 1.0});
  auto mr = mean_rank(t);
  CHECK(mr["m1"] == 1.0);
  CHECK(mr["m2"] == 2.0);

  SUBCASE("ties get the average of the tied positions") {
    ScoreTable t3;
    t3.task_names = {"a"};
    t3.lower_better = {true};
    t3.add_row("x", {1.0});
    t3.add_row("y", {1.0});
    t3.add_row("z", {5.0});
    auto mr3 = mean_rank(t3);
    CHECK(mr3["x"] == 1.5);
    CHECK(mr3["y"] == 1.5);
    CHECK(mr3["z"] == 3.0);
  }
  SUBCASE("needs two methods") {
    ScoreTable t1;
    t1.task_names = {"a"};
    t1.lower_better = {false};
    t1.add_row("only", {1.0});
    CHECK_THROWS_AS(mean_rank(t1), ContractError);
  }
}

TEST_CASE("mean rank equals a brute-force midrank recount") {
  Rng rng(77);
  ScoreTable t;
  t.task_names = {"a", "b", "c"};
  t.lower_better = {false, true, false};
  const std::vector<std::string> methods = {"m0", "m1", "m2", "m3", "m4"};
  for (const auto& m : methods) {
    std::vector<double> row = {rng.uniform(), rng.uniform(), rng.uniform()};
    if (m == "m2") row[2] = 0.5;  // force some ties
    if (m == "m3") row[2] = 0.5;
    t.add_row(m, row);
  }
  auto mr = mean_rank(t);
  for (const auto& m : methods) {
    double acc = 0.0;
    for (size_t i = 0; i < 3; ++i) {
      int better = 0, tied = 0;
      for (const auto& o : methods) {
        const double mv = t.rows[m][i], ov = t.rows[o][i];
        if (t.lower_better[i] ? ov < mv : ov > mv) ++better;
        if (ov == mv) ++tied;  // includes self
      }
      acc += 1.0 + better + (tied - 1) / 2.0;
    }
    CHECK(mr[m] == doctest::Approx(acc / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("mean rank is invariant to monotone transforms") {
  Rng rng(78);
  ScoreTable t;
  t.task_names = {"a", "b"};
  t.lower_better = {false, true};
  for (int m = 0; m < 4; ++m)
    t.add_row("m" + std::to_string(m), {rng.uniform(), rng.uniform()});
  auto before = mean_rank(t);
  for (auto& [name, row] : t.rows) {
    row[0] = std::exp(3.0 * row[0]);
    row[1] = std::atan(row[1]) * 7.0 + 2.0;
  }
  auto after = mean_rank(t);
  for (const auto& [name, v] : before) CHECK(after[name] == v);
}

TEST_CASE("conv flop entry matches the hand formula") {
  ModelConfig cfg;
  cfg.arch = ModelConfig::Arch::kConv;
  cfg.in_h = cfg.in_w = 8;
  cfg.in_channels = 1;
  cfg.stem_channels = 4;
  cfg.conv_blocks = {{4, false}};
  GatedEncoder enc = GatedEncoder::build(cfg, toy_specs(), 1);
  FlopLedger ledger = count_flops(enc);
  bool found = false;
  for (const auto& e : ledger.entries)
    if (e.layer == "block0" && e.branch == "shared") {
      CHECK(e.macs == 4ull * 4 * 9 * 64);  // 9216
      found = true;
    }
  CHECK(found);
}

TEST_CASE("ledger equals the instrumented multiply counter") {
  std::vector<TaskSpec> specs = toy_specs();
  SUBCASE("conv") {
    ModelConfig cfg;
    cfg.arch = ModelConfig::Arch::kConv;
    cfg.in_h = cfg.in_w = 16;
    cfg.stem_channels = 8;
    cfg.conv_blocks = {{8, false}, {8, true}, {16, false}, {16, true}};
    GatedEncoder enc = GatedEncoder::build(cfg, specs, 2);
    Rng rng(3);
    for (auto& v : enc.bank.alpha().data()) v = rng.normal();
    Tensor x = random_tensor(rng, {1, 1, 16, 16}, false);
    macmeter::reset();
    macmeter::enable();
    (void)enc.forward_logits(x);
    macmeter::disable();
    CHECK(macmeter::count() == count_flops(enc).total_macs());
  }
  SUBCASE("transformer") {
    ModelConfig cfg;
    cfg.arch = ModelConfig::Arch::kTransformer;
    cfg.in_h = cfg.in_w = 16;
    cfg.patch = 4;
    cfg.embed = 16;
    cfg.heads = 2;
    cfg.depth = 2;
    GatedEncoder enc = GatedEncoder::build(cfg, specs, 4);
    Rng rng(5);
    for (auto& v : enc.bank.alpha().data()) v = rng.normal();
    Tensor x = random_tensor(rng, {1, 1, 16, 16}, false);
    macmeter::reset();
    macmeter::enable();
    (void)enc.forward_logits(x);
    macmeter::disable();
    CHECK(macmeter::count() == count_flops(enc).total_macs());
  }
}

TEST_CASE("pruning a row removes exactly its share of macs") {
  ModelConfig cfg;
  cfg.arch = ModelConfig::Arch::kConv;
  cfg.in_h = cfg.in_w = 8;
  cfg.stem_channels = 4;
  cfg.conv_blocks = {{4, false}, {4, false}};
  std::vector<TaskSpec> specs = toy_specs();
  GatedEncoder enc = GatedEncoder::build(cfg, specs, 6);
  // task 0 drops half its channels at site 0, everything else specialized
  enc.bank.fill_logits(8.0);
  enc.bank.alpha().data()[0] = -8.0;
  enc.bank.alpha().data()[1] = -8.0;
  GatePattern pat = extract_pattern(enc);
  PrunedModel pm = collapse(enc, pat);
  FlopLedger full = count_flops(enc);
  FlopLedger pruned = count_flops(pm);
  CHECK(pruned.total_macs() < full.total_macs());
  // also exact on the pruned model's own meter
  Rng rng(7);
  Tensor x = random_tensor(rng, {1, 1, 8, 8}, false);
  macmeter::reset();
  macmeter::enable();
  (void)pm.forward_logits(x);
  macmeter::disable();
  CHECK(macmeter::count() == pruned.total_macs());
}
