#include <cmath>

#include "doctest.h"
#include "interrogate/metrics.hpp"
#include "interrogate/prune.hpp"
#include "support/testutil.hpp"

using namespace interrogate;
using testutil::random_tensor;

namespace {

std::vector<TaskSpec> toy_specs() {
  TaskSpec cls4{"quadrant", TaskSpec::Kind::kClassification, 4, 1,
                TaskSpec::Loss::kCrossEntropy, 1.0, TaskSpec::Metric::kAccuracy};
  TaskSpec reg{"mass", TaskSpec::Kind::kRegression, 0, 1, TaskSpec::Loss::kL1,
               1.0, TaskSpec::Metric::kL1Error};
  TaskSpec cls2{"parity", TaskSpec::Kind::kClassification, 2, 1,
                TaskSpec::Loss::kCrossEntropy, 1.0, TaskSpec::Metric::kAccuracy};
  return {cls4, reg, cls2};
}

ModelConfig conv_cfg() {
  ModelConfig cfg;
  cfg.arch = ModelConfig::Arch::kConv;
  cfg.in_h = cfg.in_w = 8;
  cfg.stem_channels = 4;
  cfg.conv_blocks = {{4, false}, {6, true}, {6, false}};
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

}  // namespace

TEST_CASE("extract_pattern basics") {
  GatedEncoder enc = GatedEncoder::build(conv_cfg(), toy_specs(), 1);
  enc.bank.fill_logits(-3.0);
  GatePattern p = extract_pattern(enc);
  for (const auto& task : p.masks)
    for (const auto& site : task)
      for (uint8_t m : site) CHECK(m == 0);

  SUBCASE("idempotent") {
    GatePattern q = extract_pattern(enc);
    CHECK(p.masks == q.masks);
    CHECK(p.mixer_weights == q.mixer_weights);
    CHECK(p.checksum == q.checksum);
  }
  SUBCASE("stale pattern rejected after routing change") {
    enc.bank.alpha().data()[0] = 9.0;
    CHECK_THROWS_AS(collapse(enc, p), ContractError);
  }
}

TEST_CASE("all-shared collapse removes every task branch") {
  GatedEncoder enc = GatedEncoder::build(conv_cfg(), toy_specs(), 2);
  enc.bank.fill_logits(-6.0);
  PrunedModel pm = collapse(enc, extract_pattern(enc));
  for (const auto& layer : pm.conv_layers) {
    for (const auto& kept : layer.task_kept) CHECK(kept.empty());
    CHECK(layer.shared_kept.size() == layer.route[0].size());
  }
  FlopLedger ledger = count_flops(pm);
  for (int t = 0; t < 3; ++t) {
    // only the heads remain on the task branches
    const std::string b = "task" + std::to_string(t);
    uint64_t macs = 0;
    for (const auto& e : ledger.entries)
      if (e.branch == b && e.layer.rfind("head", 0) != 0) macs += e.macs;
    CHECK(macs == 0);
  }
  // parameter count = shared + mixer + heads
  uint64_t heads = 0;
  for (const auto& e : ledger.entries)
    if (e.layer.rfind("head", 0) == 0) heads += e.params;
  CHECK(ledger.total_params() == ledger.branch_params("shared") +
                                     ledger.branch_params("mixer") + heads);

  Rng rng(3);
  Tensor x = random_tensor(rng, {4, 1, 8, 8}, false);
  EquivalenceReport rep = verify_equivalence(enc, pm, x);
  CHECK(rep.pass);
  for (double d : rep.max_abs) CHECK(d == 0.0);
}

TEST_CASE("all-task-specific collapse removes the shared branch") {
  GatedEncoder enc = GatedEncoder::build(conv_cfg(), toy_specs(), 4);
  enc.bank.fill_logits(6.0);
  PrunedModel pm = collapse(enc, extract_pattern(enc));
  for (const auto& layer : pm.conv_layers) {
    CHECK(layer.shared_kept.empty());
    CHECK(!layer.mixer_live);
    for (const auto& kept : layer.task_kept)
      CHECK(kept.size() == layer.route[0].size());
  }
  FlopLedger ledger = count_flops(pm);
  CHECK(ledger.branch_macs("mixer") == 0);
  // the stem is the only remaining shared compute
  FlopLedger full = count_flops(enc);
  bool stem_only = true;
  for (const auto& e : ledger.entries)
    if (e.branch == "shared" && e.layer != "stem" && e.macs > 0)
      stem_only = false;
  CHECK(stem_only);
  CHECK(ledger.total_macs() < full.total_macs());

  Rng rng(5);
  Tensor x = random_tensor(rng, {4, 1, 8, 8}, false);
  EquivalenceReport rep = verify_equivalence(enc, pm, x);
  CHECK(rep.pass);
  for (double d : rep.max_abs) CHECK(d == 0.0);
}

TEST_CASE("pruned parameter count drops by exactly the deleted rows") {
  Rng rng(6);
  GatedEncoder enc = GatedEncoder::build(conv_cfg(), toy_specs(), 6);
  for (auto& v : enc.bank.alpha().data()) v = rng.normal();
  PrunedModel pm = collapse(enc, extract_pattern(enc));
  FlopLedger full = count_flops(enc);
  FlopLedger pruned = count_flops(pm);
  // recount deleted rows per conv layer
  uint64_t deleted = 0;
  int ci = enc.cfg.stem_channels;
  for (size_t l = 0; l < pm.conv_layers.size(); ++l) {
    const auto& layer = pm.conv_layers[l];
    const uint64_t row = static_cast<uint64_t>(ci) * 9 + 1;
    const size_t co = layer.route[0].size();
    deleted += row * (co - layer.shared_kept.size());
    for (const auto& kept : layer.task_kept)
      deleted += row * (co - kept.size());
    ci = static_cast<int>(co);
  }
  auto weights_only = [](const FlopLedger& ledger) {
    uint64_t n = 0;
    for (const auto& e : ledger.entries)
      if (e.branch != "gate" && e.branch != "mixer") n += e.params;
    return n;
  };
  CHECK(weights_only(pruned) == weights_only(full) - deleted);
}

TEST_CASE("random conv patterns collapse to an exactly equivalent model") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(100 + seed);
    GatedEncoder enc = GatedEncoder::build(conv_cfg(), toy_specs(), 50 + seed);
    for (auto& v : enc.bank.alpha().data()) v = rng.normal();
    for (auto& v : enc.mixer.beta().data()) v = rng.normal();
    PrunedModel pm = collapse(enc, extract_pattern(enc));
    Tensor x = random_tensor(rng, {3, 1, 8, 8}, false);
    EquivalenceReport rep = verify_equivalence(enc, pm, x);
    CHECK(rep.pass);
    for (double d : rep.max_rel) CHECK(d < 1e-9);
    CHECK(count_flops(pm).total_macs() <= count_flops(enc).total_macs());
  }
}

TEST_CASE("random transformer patterns collapse exactly") {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(200 + seed);
    GatedEncoder enc = GatedEncoder::build(vit_cfg(), toy_specs(), 70 + seed);
    for (auto& v : enc.bank.alpha().data()) v = rng.normal();
    for (auto& v : enc.mixer.beta().data()) v = rng.normal();
    PrunedModel pm = collapse(enc, extract_pattern(enc));
    Tensor x = random_tensor(rng, {2, 1, 8, 8}, false);
    EquivalenceReport rep = verify_equivalence(enc, pm, x);
    CHECK(rep.pass);
    for (double d : rep.max_abs) CHECK(d == 0.0);
    CHECK(count_flops(pm).total_macs() <= count_flops(enc).total_macs());
  }
}

TEST_CASE("transformer all-shared and all-task degenerate collapses") {
  SUBCASE("all shared") {
    GatedEncoder enc = GatedEncoder::build(vit_cfg(), toy_specs(), 8);
    enc.bank.fill_logits(-7.0);
    PrunedModel pm = collapse(enc, extract_pattern(enc));
    FlopLedger ledger = count_flops(pm);
    for (int t = 0; t < 3; ++t) {
      uint64_t macs = 0;
      for (const auto& e : ledger.entries)
        if (e.branch == "task" + std::to_string(t) &&
            e.layer.rfind("head", 0) != 0 && e.layer.find("attn") ==
                std::string::npos)
          macs += e.macs;
      CHECK(macs == 0);  // projections gone; attention runs on routed values
    }
    Rng rng(9);
    Tensor x = random_tensor(rng, {2, 1, 8, 8}, false);
    CHECK(verify_equivalence(enc, pm, x).pass);
  }
  SUBCASE("all task-specific kills the shared stream") {
    GatedEncoder enc = GatedEncoder::build(vit_cfg(), toy_specs(), 10);
    enc.bank.fill_logits(7.0);
    PrunedModel pm = collapse(enc, extract_pattern(enc));
    FlopLedger ledger = count_flops(pm);
    uint64_t shared_macs = 0;
    for (const auto& e : ledger.entries)
      if (e.branch == "shared" && e.layer != "stem") shared_macs += e.macs;
    CHECK(shared_macs == 0);
    for (const auto& layer : pm.attn_layers) {
      CHECK(!layer.shared_attn_live);
      CHECK(!layer.mixer_live);
    }
    Rng rng(11);
    Tensor x = random_tensor(rng, {2, 1, 8, 8}, false);
    EquivalenceReport rep = verify_equivalence(enc, pm, x);
    CHECK(rep.pass);
    for (double d : rep.max_abs) CHECK(d == 0.0);
  }
}

TEST_CASE("transformer with a dead shared attention chain but live q rows") {
  // Everything task-specific except two query channels of task 0: the
  // shared stream must keep exactly those projection rows while its
  // attention, out projection and ffn disappear.
  GatedEncoder enc = GatedEncoder::build(vit_cfg(), toy_specs(), 21);
  enc.bank.fill_logits(7.0);
  const int cmax = enc.bank.max_width();
  for (int block = 0; block < 2; ++block) {
    const int q_site = block * kAttnGateSites;
    enc.bank.alpha().data()[static_cast<size_t>((0 * enc.bank.sites() +
                                                 q_site) * cmax + 1)] = -7.0;
    enc.bank.alpha().data()[static_cast<size_t>((0 * enc.bank.sites() +
                                                 q_site) * cmax + 3)] = -7.0;
  }
  PrunedModel pm = collapse(enc, extract_pattern(enc));
  for (const auto& layer : pm.attn_layers) {
    CHECK(layer.q.shared_kept == std::vector<int>{1, 3});
    CHECK(layer.k.shared_kept.empty());
    CHECK(!layer.shared_attn_live);
    CHECK(!layer.shared_ffn_live);
    CHECK(layer.shared_ln1_live);
    CHECK(layer.out.shared_kept.empty());
  }
  Rng rng(22);
  Tensor x = random_tensor(rng, {3, 1, 8, 8}, false);
  EquivalenceReport rep = verify_equivalence(enc, pm, x);
  CHECK(rep.pass);
  for (double d : rep.max_abs) CHECK(d == 0.0);
}

TEST_CASE("collapse is deterministic") {
  Rng rng(12);
  GatedEncoder enc = GatedEncoder::build(conv_cfg(), toy_specs(), 13);
  for (auto& v : enc.bank.alpha().data()) v = rng.normal();
  PrunedModel a = collapse(enc, extract_pattern(enc));
  PrunedModel b = collapse(enc, extract_pattern(enc));
  REQUIRE(a.conv_layers.size() == b.conv_layers.size());
  for (size_t l = 0; l < a.conv_layers.size(); ++l) {
    CHECK(a.conv_layers[l].shared_kept == b.conv_layers[l].shared_kept);
    CHECK(a.conv_layers[l].task_kept == b.conv_layers[l].task_kept);
    CHECK(a.conv_layers[l].mixer_w == b.conv_layers[l].mixer_w);
    if (a.conv_layers[l].shared_w.defined())
      CHECK(a.conv_layers[l].shared_w.data() ==
            b.conv_layers[l].shared_w.data());
  }
}
