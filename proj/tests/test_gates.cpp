#include <cmath>

#include "doctest.h"
#include "interrogate/gates.hpp"
#include "support/testutil.hpp"

using namespace interrogate;
using testutil::random_tensor;

namespace {
double logit(double p) { return std::log(p / (1.0 - p)); }
}  // namespace

TEST_CASE("gate mask follows the sign of alpha with ties to shared") {
  GateBank bank(1, {3}, 0.0);
  bank.alpha().data() = {-2, 0, 3};
  Tensor m = bank.mask(0, 0);
  CHECK(m.data() == std::vector<double>{0, 0, 1});

  bank.fill_logits(10.0);
  CHECK(bank.mask(0, 0).data() == std::vector<double>(3, 1.0));
  bank.fill_logits(-10.0);
  CHECK(bank.mask(0, 0).data() == std::vector<double>(3, 0.0));
}

TEST_CASE("gate mask index checks") {
  GateBank bank(2, {3, 4}, 0.0);
  CHECK_THROWS_AS(bank.mask(2, 0), ContractError);
  CHECK_THROWS_AS(bank.mask(0, 2), ContractError);
}

TEST_CASE("mix_task per-channel select") {
  Tensor mask = Tensor::from_data({2}, {1, 0});
  Tensor task = Tensor::from_data({2, 1}, {5.0, 6.0});
  Tensor shared = Tensor::from_data({2, 1}, {7.0, 8.0});
  CHECK(mix_task(mask, task, shared, 0).data() ==
        std::vector<double>{5.0, 8.0});

  Rng rng(3);
  Tensor tf = random_tensor(rng, {4, 6, 5}, false);
  Tensor sf = random_tensor(rng, {4, 6, 5}, false);
  CHECK(mix_task(Tensor::zeros({6}), tf, sf, 1).data() == sf.data());
  CHECK(mix_task(Tensor::full({6}, 1.0), tf, sf, 1).data() == tf.data());
}

TEST_CASE("mix_shared softmax weighting") {
  SUBCASE("uniform weights average the tasks") {
    SharedMixer mixer(2, {3});
    Tensor a = Tensor::full({3, 2}, 1.0);
    Tensor b = Tensor::full({3, 2}, 3.0);
    Tensor out = mix_shared(mixer, 0, {a, b}, 0);
    for (double v : out.data()) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("log-odds weights") {
    SharedMixer mixer(2, {1});
    mixer.beta().data() = {std::log(3.0), 0.0};
    Tensor a = Tensor::full({1, 1}, 1.0);
    Tensor b = Tensor::full({1, 1}, 0.0);
    CHECK(mix_shared(mixer, 0, {a, b}, 0).item() ==
          doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("saturated weight picks one task") {
    SharedMixer mixer(3, {2});
    Rng rng(5);
    for (auto& v : mixer.beta().data()) v = rng.normal();
    mixer.beta().data()[0 * 3 + 1] = 40.0;  // channel 0 -> task 1
    Tensor f0 = random_tensor(rng, {2, 4}, false);
    Tensor f1 = random_tensor(rng, {2, 4}, false);
    Tensor f2 = random_tensor(rng, {2, 4}, false);
    Tensor out = mix_shared(mixer, 0, {f0, f1, f2}, 0);
    for (int i = 0; i < 4; ++i)
      CHECK(std::fabs(out.data()[static_cast<size_t>(i)] -
                      f1.data()[static_cast<size_t>(i)]) < 1e-12);
  }
  SUBCASE("weights rows sum to one") {
    SharedMixer mixer(4, {5});
    Rng rng(6);
    for (auto& v : mixer.beta().data()) v = rng.normal(0, 4.0);
    Tensor w = mixer.weights(0);
    for (int c = 0; c < 5; ++c) {
      double acc = 0.0;
      for (int t = 0; t < 4; ++t) acc += w.data()[static_cast<size_t>(c * 4 + t)];
      CHECK(std::fabs(acc - 1.0) < 1e-12);
    }
  }
  SUBCASE("convexity bounds") {
    SharedMixer mixer(3, {4});
    Rng rng(7);
    for (auto& v : mixer.beta().data()) v = rng.normal(0, 2.0);
    std::vector<Tensor> feats;
    for (int t = 0; t < 3; ++t) feats.push_back(random_tensor(rng, {4, 5}, false));
    Tensor out = mix_shared(mixer, 0, feats, 0);
    for (size_t i = 0; i < out.data().size(); ++i) {
      double lo = feats[0].data()[i], hi = feats[0].data()[i];
      for (int t = 1; t < 3; ++t) {
        lo = std::min(lo, feats[static_cast<size_t>(t)].data()[i]);
        hi = std::max(hi, feats[static_cast<size_t>(t)].data()[i]);
      }
      CHECK(out.data()[i] > lo - 1e-12);
      CHECK(out.data()[i] < hi + 1e-12);
    }
  }
}

TEST_CASE("sparsity loss hinge cases") {
  SUBCASE("inactive hinge") {
    GateBank bank(1, {1}, logit(0.3));
    SparsityConfig cfg{0.05, {0.5}, SparsityConfig::Variant::kHinge};
    CHECK(sparsity_loss(bank, cfg).item() == 0.0);
  }
  SUBCASE("active hinge") {
    GateBank bank(1, {1}, logit(0.8));
    SparsityConfig cfg{0.05, {0.5}, SparsityConfig::Variant::kHinge};
    CHECK(sparsity_loss(bank, cfg).item() ==
          doctest::Approx(0.3).epsilon(1e-12));
  }
  SUBCASE("two tasks two sites") {
    GateBank bank(2, {4, 4}, logit(0.6));
    SparsityConfig cfg{0.05, {0.5, 1.0}, SparsityConfig::Variant::kHinge};
    CHECK(sparsity_loss(bank, cfg).item() ==
          doctest::Approx(0.05).epsilon(1e-12));
  }
  SUBCASE("variant none is a caller bug") {
    GateBank bank(1, {1}, 0.0);
    SparsityConfig cfg{0.0, {}, SparsityConfig::Variant::kNone};
    CHECK_THROWS_AS(sparsity_loss(bank, cfg), ContractError);
  }
}

TEST_CASE("hinge is exactly zero with zero alpha gradient under target") {
  GateBank bank(2, {3, 5}, logit(0.2));
  SparsityConfig cfg{0.1, {0.5, 0.25}, SparsityConfig::Variant::kHinge};
  Tape tape;
  Tensor loss = sparsity_loss(bank, cfg);
  CHECK(loss.item() == 0.0);
  tape.backward(loss);
  if (bank.alpha().has_grad()) {
    for (double g : bank.alpha().grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("hinge gradient at the boundary mean == tau is zero") {
  GateBank bank(1, {2}, 0.0);  // sigma(0) = 0.5 exactly
  SparsityConfig cfg{1.0, {0.5}, SparsityConfig::Variant::kHinge};
  Tape tape;
  Tensor loss = sparsity_loss(bank, cfg);
  CHECK(loss.item() == 0.0);
  tape.backward(loss);
  if (bank.alpha().has_grad())
    for (double g : bank.alpha().grad()) CHECK(g == 0.0);
}

TEST_CASE("sparsity loss gradients match finite differences") {
  Rng rng(17), probe(19);
  GateBank bank(3, {4, 6, 5}, 0.0);
  for (auto& v : bank.alpha().data()) v = rng.normal();
  SUBCASE("hinge") {
    SparsityConfig cfg{0.05, {0.2, 0.4, 0.6}, SparsityConfig::Variant::kHinge};
    testutil::check_grads([&] { return sparsity_loss(bank, cfg); },
                          {bank.alpha()}, probe, 10);
  }
  SUBCASE("l1") {
    SparsityConfig cfg{0.05, {}, SparsityConfig::Variant::kL1};
    testutil::check_grads([&] { return sparsity_loss(bank, cfg); },
                          {bank.alpha()}, probe, 10);
  }
}

TEST_CASE("hinge bounded by l1 plus max tau") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    GateBank bank(2, {3, 4}, 0.0);
    for (auto& v : bank.alpha().data()) v = rng.normal(0, 3.0);
    std::vector<double> tau = {rng.uniform(), rng.uniform()};
    SparsityConfig hinge{1.0, tau, SparsityConfig::Variant::kHinge};
    SparsityConfig l1{1.0, {}, SparsityConfig::Variant::kL1};
    const double max_tau = std::max(tau[0], tau[1]);
    CHECK(sparsity_loss(bank, hinge).item() <=
          sparsity_loss(bank, l1).item() + max_tau + 1e-12);
  }
}

TEST_CASE("padded gate entries contribute nothing") {
  GateBank bank(2, {2, 6}, 0.0);
  Rng rng(23);
  for (auto& v : bank.alpha().data()) v = rng.normal();
  // Mangle padded entries of the narrow site; nothing downstream may move.
  SparsityConfig cfg{0.1, {0.1, 0.2}, SparsityConfig::Variant::kHinge};
  const double before = sparsity_loss(bank, cfg).item();
  for (int t = 0; t < 2; ++t)
    for (int c = 2; c < 6; ++c)
      bank.alpha().data()[static_cast<size_t>((t * 2 + 0) * 6 + c)] = 50.0;
  CHECK(sparsity_loss(bank, cfg).item() == before);

  bank.alpha().zero_grad();
  Tape tape;
  Tensor loss = sparsity_loss(bank, cfg);
  tape.backward(loss);
  if (bank.alpha().has_grad())
    for (int t = 0; t < 2; ++t)
      for (int c = 2; c < 6; ++c)
        CHECK(bank.alpha().grad()[static_cast<size_t>((t * 2 + 0) * 6 + c)] ==
              0.0);
}

TEST_CASE("gate statistics") {
  SUBCASE("all negative alpha means zero selection") {
    GateBank bank(3, {4, 4}, -2.0);
    SharedMixer mixer(3, {4});
    GateReport rep = gate_statistics(bank, mixer);
    for (const auto& t : rep.tasks) CHECK(t.selection_ratio == 0.0);
  }
  SUBCASE("uniform beta gives the tie to task zero") {
    GateBank bank(2, {4}, 0.0);
    SharedMixer mixer(2, {4});
    GateReport rep = gate_statistics(bank, mixer);
    CHECK(rep.tasks[0].shared_contribution == 1.0);
    CHECK(rep.tasks[1].shared_contribution == 0.0);
  }
  SUBCASE("random bank matches a brute-force recount") {
    Rng rng(31);
    GateBank bank(3, {5, 7, 2}, 0.0);
    SharedMixer mixer(3, {5, 7});
    for (auto& v : bank.alpha().data()) v = rng.normal();
    for (auto& v : mixer.beta().data()) v = rng.normal();
    GateReport rep = gate_statistics(bank, mixer);
    const std::vector<int> widths = {5, 7, 2};
    for (int t = 0; t < 3; ++t) {
      int on = 0, slots = 0;
      for (int s = 0; s < 3; ++s) {
        int site_on = 0;
        for (int c = 0; c < widths[static_cast<size_t>(s)]; ++c) {
          const double a =
              bank.alpha().data()[static_cast<size_t>((t * 3 + s) * 7 + c)];
          if (1.0 / (1.0 + std::exp(-a)) > 0.5) ++site_on;
        }
        CHECK(rep.tasks[static_cast<size_t>(t)].per_site[static_cast<size_t>(
                  s)] ==
              doctest::Approx(static_cast<double>(site_on) /
                              widths[static_cast<size_t>(s)]));
        on += site_on;
        slots += widths[static_cast<size_t>(s)];
      }
      CHECK(rep.tasks[static_cast<size_t>(t)].selection_ratio ==
            doctest::Approx(static_cast<double>(on) / slots));
    }
    // contribution recount
    std::vector<int> wins(3, 0);
    int total = 0;
    const std::vector<int> mwidths = {5, 7};
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < mwidths[static_cast<size_t>(s)]; ++c) {
        int best = 0;
        for (int t = 1; t < 3; ++t)
          if (mixer.beta().data()[static_cast<size_t>((s * 7 + c) * 3 + t)] >
              mixer.beta().data()[static_cast<size_t>((s * 7 + c) * 3 + best)])
            best = t;
        ++wins[static_cast<size_t>(best)];
        ++total;
      }
    for (int t = 0; t < 3; ++t)
      CHECK(rep.tasks[static_cast<size_t>(t)].shared_contribution ==
            doctest::Approx(static_cast<double>(wins[static_cast<size_t>(t)]) /
                            total));
  }
}
