#include "interrogate/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>

#include "interrogate/prune.hpp"
#include "interrogate/rng.hpp"

namespace interrogate {

double OptimizerConfig::lr_at(int epoch) const {
  switch (schedule) {
    case Schedule::kNone:
      return main_lr;
    case Schedule::kStep:
      return main_lr * std::pow(step_factor, epoch / step_size);
    case Schedule::kPolynomial: {
      const double frac = epochs > 0 ? static_cast<double>(epoch) / epochs : 0.0;
      return main_lr * std::pow(1.0 - frac, poly_power);
    }
  }
  return main_lr;
}

Adam::Adam(ParamList params, double weight_decay)
    : params_(std::move(params)), weight_decay_(weight_decay) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.data().size(), 0.0);
    v_.emplace_back(t.data().size(), 0.0);
  }
}

void Adam::step(double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p].second;
    if (!t.has_grad()) continue;
    auto& data = t.data();
    const auto& g = t.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (size_t i = 0; i < data.size(); ++i) {
      const double gi = g[i] + weight_decay_ * data[i];
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
      data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Sgd::Sgd(ParamList params, double grad_clip)
    : params_(std::move(params)), grad_clip_(grad_clip) {}

void Sgd::step(double lr) {
  for (auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    auto& data = t.data();
    const auto& g = t.grad();
    if (grad_clip_ > 0.0) {
      for (size_t i = 0; i < data.size(); ++i)
        data[i] -= lr * std::clamp(g[i], -grad_clip_, grad_clip_);
    } else {
      for (size_t i = 0; i < data.size(); ++i) data[i] -= lr * g[i];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

namespace {

ParamList trainable_only(const ParamList& in) {
  ParamList out;
  for (const auto& p : in)
    if (p.second.requires_grad()) out.push_back(p);
  return out;
}

void assert_disjoint(const ParamList& a, const ParamList& b) {
  std::set<const detail::TensorImpl*> seen;
  for (const auto& p : a) seen.insert(p.second.impl());
  for (const auto& p : b)
    if (seen.count(p.second.impl()))
      throw ContractError("optimizers share parameter " + p.first);
}

std::vector<std::vector<int>> epoch_batches(Rng& rng, int n, int batch_size) {
  std::vector<int> order = rng.permutation(n);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int stop = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + stop);
  }
  return batches;
}

void check_finite_loss(double v) {
  if (!std::isfinite(v))
    throw NumericError("training diverged: non-finite loss");
}

}  // namespace

std::vector<double> evaluate(const GatedEncoder& enc, const Dataset& test,
                             const std::vector<TaskSpec>& specs,
                             int batch_size) {
  const int n = test.size();
  std::vector<double> hits(specs.size(), 0.0);
  std::vector<double> err(specs.size(), 0.0);
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i)
      idx.push_back(i);
    Batch batch = make_batch(test, idx, specs);
    std::vector<Tensor> outs = enc.forward_logits(batch.x);
    for (size_t t = 0; t < specs.size(); ++t) {
      const int b = static_cast<int>(idx.size());
      if (specs[t].kind == TaskSpec::Kind::kClassification) {
        const int k = outs[t].dim(1);
        for (int i = 0; i < b; ++i) {
          int best = 0;
          for (int j = 1; j < k; ++j)
            if (outs[t].data()[static_cast<size_t>(i * k + j)] >
                outs[t].data()[static_cast<size_t>(i * k + best)])
              best = j;
          if (best == batch.labels[t][static_cast<size_t>(i)]) hits[t] += 1.0;
        }
      } else {
        for (int i = 0; i < b; ++i) {
          const double d = outs[t].data()[static_cast<size_t>(i)] -
                           batch.targets[t].data()[static_cast<size_t>(i)];
          err[t] += specs[t].metric == TaskSpec::Metric::kRmse ? d * d
                                                               : std::fabs(d);
        }
      }
    }
  }
  std::vector<double> metrics(specs.size());
  for (size_t t = 0; t < specs.size(); ++t) {
    if (specs[t].kind == TaskSpec::Kind::kClassification) {
      metrics[t] = hits[t] / n;
    } else {
      metrics[t] = err[t] / n;
      if (specs[t].metric == TaskSpec::Metric::kRmse)
        metrics[t] = std::sqrt(metrics[t]);
    }
  }
  return metrics;
}

double evaluate_single(const SingleTaskNet& net, const Dataset& test,
                       int task_index, int batch_size) {
  const int n = test.size();
  const TaskSpec& spec = net.spec;
  double acc = 0.0;
  std::vector<TaskSpec> all = synthetic_task_specs();
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i)
      idx.push_back(i);
    Batch batch = make_batch(test, idx, all);
    Tensor out = net.logits(batch.x);
    const int b = static_cast<int>(idx.size());
    if (spec.kind == TaskSpec::Kind::kClassification) {
      const int k = out.dim(1);
      for (int i = 0; i < b; ++i) {
        int best = 0;
        for (int j = 1; j < k; ++j)
          if (out.data()[static_cast<size_t>(i * k + j)] >
              out.data()[static_cast<size_t>(i * k + best)])
            best = j;
        if (best ==
            batch.labels[static_cast<size_t>(task_index)][static_cast<size_t>(
                i)])
          acc += 1.0;
      }
    } else {
      for (int i = 0; i < b; ++i) {
        const double d =
            out.data()[static_cast<size_t>(i)] -
            batch.targets[static_cast<size_t>(task_index)]
                .data()[static_cast<size_t>(i)];
        acc += spec.metric == TaskSpec::Metric::kRmse ? d * d : std::fabs(d);
      }
    }
  }
  if (spec.kind == TaskSpec::Kind::kClassification) return acc / n;
  acc /= n;
  return spec.metric == TaskSpec::Metric::kRmse ? std::sqrt(acc) : acc;
}

TrainResult train_single_task(SingleTaskNet& net, const Dataset& train,
                              const Dataset& test, int task_index,
                              const OptimizerConfig& cfg) {
  const std::vector<TaskSpec> all = synthetic_task_specs();
  Adam opt(trainable_only(net.trainable_params()), cfg.weight_decay);
  Rng order(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    double loss_acc = 0.0;
    int batches = 0;
    for (const auto& idx : epoch_batches(order, train.size(),
                                         cfg.batch_size)) {
      Batch batch = make_batch(train, idx, all);
      Tape tape;
      Tensor out = net.logits(batch.x);
      Tensor loss;
      switch (net.spec.loss) {
        case TaskSpec::Loss::kCrossEntropy:
          loss = cross_entropy_logits(
              out, batch.labels[static_cast<size_t>(task_index)]);
          break;
        case TaskSpec::Loss::kL1:
          loss = l1_loss(out, batch.targets[static_cast<size_t>(task_index)]);
          break;
        case TaskSpec::Loss::kSquaredError:
          loss = mse_loss(out, batch.targets[static_cast<size_t>(task_index)]);
          break;
      }
      check_finite_loss(loss.item());
      tape.backward(loss);
      opt.step(lr);
      opt.zero_grad();
      loss_acc += loss.item();
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.task_losses = {loss_acc / std::max(1, batches)};
    stats.weighted = stats.task_losses[0];
    stats.main_lr = lr;
    result.history.push_back(stats);
  }
  result.test_metrics = {evaluate_single(net, test, task_index,
                                         cfg.batch_size)};
  return result;
}

TrainResult train_interrogate(GatedEncoder& enc, const Dataset& train,
                              const Dataset& test,
                              const std::vector<TaskSpec>& specs,
                              const OptimizerConfig& ocfg,
                              const SparsityConfig& scfg) {
  Adam main_opt(trainable_only(enc.main_params()), ocfg.weight_decay);
  // routing parameters never receive weight decay
  Adam gate_adam(trainable_only(enc.gate_params()), 0.0);
  Sgd gate_sgd(trainable_only(enc.gate_params()), ocfg.gate_grad_clip);
  Sgd gate_pressure(trainable_only(enc.gate_params()));
  const bool gate_is_adam = ocfg.gate_kind == OptimizerConfig::GateKind::kAdam;
  assert_disjoint(main_opt.params(), gate_adam.params());

  Rng order(ocfg.seed ^ 0x9e3779b97f4a7c15ULL);
  TrainResult result;
  for (int epoch = 0; epoch < ocfg.epochs; ++epoch) {
    const double lr = ocfg.lr_at(epoch);
    std::vector<double> task_acc(specs.size(), 0.0);
    double weighted_acc = 0.0;
    int batches = 0;
    for (const auto& idx : epoch_batches(order, train.size(),
                                         ocfg.batch_size)) {
      Batch batch = make_batch(train, idx, specs);
      const bool regularized =
          scfg.variant != SparsityConfig::Variant::kNone &&
          scfg.lambda_s > 0.0;
      const bool decouple = regularized && !gate_is_adam &&
                            ocfg.gate_grad_clip > 0.0 &&
                            enc.bank.trainable();
      {
        Tape tape;
        LossOut losses = task_losses(enc, batch, specs);
        // with a decoupled gate step the tape carries the task term only
        Tensor objective = decouple ? losses.weighted
                                    : total_loss(losses.weighted, enc.bank,
                                                 scfg);
        check_finite_loss(objective.item());
        tape.backward(objective);
        for (size_t t = 0; t < specs.size(); ++t)
          task_acc[t] += losses.per_task[t].item();
        weighted_acc += losses.weighted.item();
      }
      main_opt.step(lr);
      if (gate_is_adam) {
        gate_adam.step(ocfg.gate_lr);
      } else {
        gate_sgd.step(ocfg.gate_lr);
      }
      if (decouple) {
        // sparsity pressure, applied unclipped; its graph touches only
        // the gate logits
        gate_sgd.zero_grad();
        Tape tape;
        Tensor pressure = mul_scalar(sparsity_loss(enc.bank, scfg),
                                     scfg.lambda_s);
        check_finite_loss(pressure.item());
        tape.backward(pressure);
        gate_pressure.step(ocfg.gate_lr);
      }
      if (ocfg.gate_clamp > 0.0 && enc.bank.trainable()) {
        for (auto& v : enc.bank.alpha().data())
          v = std::clamp(v, -ocfg.gate_clamp, ocfg.gate_clamp);
      }
      main_opt.zero_grad();
      gate_adam.zero_grad();
      gate_sgd.zero_grad();
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    for (double v : task_acc)
      stats.task_losses.push_back(v / std::max(1, batches));
    stats.weighted = weighted_acc / std::max(1, batches);
    stats.sparsity = scfg.variant != SparsityConfig::Variant::kNone
                         ? sparsity_loss(enc.bank, scfg).item()
                         : 0.0;
    GateReport report = gate_statistics(enc.bank, enc.mixer);
    for (const auto& t : report.tasks)
      stats.selection_ratios.push_back(t.selection_ratio);
    stats.main_lr = lr;
    stats.gate_lr = ocfg.gate_lr;
    result.history.push_back(stats);
  }
  result.test_metrics = evaluate(enc, test, specs, ocfg.batch_size);
  return result;
}

namespace {

double delta_vs_baseline(const std::vector<TaskSpec>& specs,
                         const std::vector<double>& method,
                         const std::vector<double>& baseline) {
  ScoreTable table;
  for (const auto& s : specs) {
    table.task_names.push_back(s.name);
    table.lower_better.push_back(s.lower_is_better());
  }
  table.baseline = "stl";
  table.add_row("stl", baseline);
  table.add_row("method", method);
  return delta_mtl(table, "method");
}

}  // namespace

SweepReport run_sweep(const SweepPlan& plan, const SweepContext& ctx,
                      int jobs) {
  if (plan.lambda_grid.empty() || plan.tau_grid.empty() || plan.seeds.empty())
    throw ContractError("run_sweep: empty grid");
  struct CellSpec {
    double lambda;
    std::vector<double> tau;
    uint64_t seed;
  };
  std::vector<CellSpec> grid;
  for (uint64_t seed : plan.seeds)
    for (double l : plan.lambda_grid)
      for (const auto& tau : plan.tau_grid) grid.push_back({l, tau, seed});

  SweepReport report;
  report.cells.resize(grid.size());
  report.uniform_metrics = ctx.uniform_metrics;
  report.uniform_flops = ctx.uniform_flops;

  std::atomic<size_t> next{0};
  std::mutex cb_mutex;
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= grid.size()) return;
      const CellSpec& cs = grid[i];
      SweepCell cell;
      cell.index = i;
      cell.lambda_s = cs.lambda;
      cell.tau = cs.tau;
      cell.seed = cs.seed;
      cell.variant = plan.variant;
      try {
        GatedEncoder enc = GatedEncoder::build(ctx.model, ctx.specs, cs.seed);
        const auto* stl = ctx.stl.at(cs.seed);
        for (int t = 0; t < enc.tasks(); ++t)
          enc.init_task_branch_from(t, (*stl)[static_cast<size_t>(t)]);
        if (ctx.shared_init) enc.init_shared_branch_from(*ctx.shared_init);
        OptimizerConfig ocfg = ctx.opt;
        ocfg.epochs = plan.epochs;
        ocfg.seed = cs.seed;
        SparsityConfig scfg{cs.lambda, cs.tau, plan.variant};
        TrainResult tr = train_interrogate(enc, *ctx.train, *ctx.test,
                                           ctx.specs, ocfg, scfg);
        GatePattern pattern = extract_pattern(enc);
        PrunedModel pm = collapse(enc, pattern);
        // verification batch drawn from the test set
        std::vector<int> idx;
        for (int k = 0; k < std::min(32, ctx.test->size()); ++k)
          idx.push_back(k);
        Batch vb = make_batch(*ctx.test, idx, ctx.specs);
        EquivalenceReport eq = verify_equivalence(enc, pm, vb.x);
        cell.max_rel_deviation =
            *std::max_element(eq.max_rel.begin(), eq.max_rel.end());
        if (!eq.pass) throw ContractError("pruning equivalence failed");
        FlopLedger ledger = count_flops(pm);
        cell.flops = ledger.total_flops();
        cell.encoder_flops = ledger.encoder_flops();
        cell.params = ledger.total_params();
        cell.metrics = tr.test_metrics;
        cell.delta_mtl = delta_vs_baseline(ctx.specs, cell.metrics,
                                           ctx.stl_metrics.at(cs.seed));
        cell.selection_ratios = tr.history.back().selection_ratios;
        cell.ok = true;
        if (ctx.on_artifacts) ctx.on_artifacts(cell, enc, pm, tr);
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      report.cells[i] = cell;
      if (ctx.on_cell) {
        std::lock_guard<std::mutex> lock(cb_mutex);
        ctx.on_cell(cell);
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs,
                                                static_cast<int>(grid.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (!ctx.stl_metrics.empty())
    report.stl_metrics = ctx.stl_metrics.begin()->second;
  if (!ctx.uniform_metrics.empty())
    report.uniform_delta = delta_vs_baseline(ctx.specs, ctx.uniform_metrics,
                                             report.stl_metrics);

  // Pareto front over (flops down, delta up) among successful cells.
  for (size_t i = 0; i < report.cells.size(); ++i) {
    const auto& a = report.cells[i];
    if (!a.ok) continue;
    bool dominated = false;
    for (size_t j = 0; j < report.cells.size() && !dominated; ++j) {
      if (i == j) continue;
      const auto& b = report.cells[j];
      if (!b.ok) continue;
      const bool no_worse = b.flops <= a.flops && b.delta_mtl >= a.delta_mtl;
      const bool strictly = b.flops < a.flops || b.delta_mtl > a.delta_mtl;
      if (no_worse && strictly) dominated = true;
    }
    if (!dominated) report.pareto.push_back(i);
  }
  return report;
}

}  // namespace interrogate
