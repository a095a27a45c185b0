// Command-line front end: dataset generation, baseline and gated training,
// sparsity sweeps, pruning and report assembly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "interrogate/checkpoint.hpp"
#include "interrogate/config.hpp"
#include "interrogate/report.hpp"
#include "interrogate/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace interrogate;

namespace {

// carries a machine-readable code plus the exit status
struct CliError : std::runtime_error {
  CliError(std::string code_in, const std::string& detail, int exit_in)
      : std::runtime_error(detail), code(std::move(code_in)), exit(exit_in) {}
  std::string code;
  int exit;
};

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write " + path);
  out << content;
}

int fail(const std::string& outdir, const std::string& code,
         const std::string& detail, int exit_code) {
  json err{{"error", code}, {"detail", detail}};
  std::cerr << err.dump() << "\n";
  if (!outdir.empty()) {
    std::error_code ec;
    fs::create_directories(outdir, ec);
    if (!ec) {
      std::ofstream out(fs::path(outdir) / "error.json", std::ios::binary);
      out << err.dump(1, '\t') << '\n';
    }
  }
  return exit_code;
}

template <typename F>
int guarded(const std::string& outdir, F&& body) {
  try {
    return body();
  } catch (const CliError& e) {
    return fail(outdir, e.code, e.what(), e.exit);
  } catch (const ConfigError& e) {
    return fail(outdir, "bad_config", e.what(), 2);
  } catch (const NumericError& e) {
    return fail(outdir, "divergence", e.what(), 3);
  } catch (const json::exception& e) {
    return fail(outdir, "bad_config", e.what(), 2);
  } catch (const std::exception& e) {
    return fail(outdir, "error", e.what(), 2);
  }
}

json ledger_json(const FlopLedger& ledger) {
  json entries = json::array();
  for (const auto& e : ledger.entries)
    entries.push_back(json{{"layer", e.layer},
                           {"branch", e.branch},
                           {"macs", e.macs},
                           {"params", e.params}});
  return json{{"entries", entries},
              {"total_macs", ledger.total_macs()},
              {"total_flops", ledger.total_flops()},
              {"encoder_flops", ledger.encoder_flops()},
              {"total_params", ledger.total_params()},
              {"convention", "flops = 2 x multiply-accumulates"}};
}

void write_history(const std::string& path,
                   const std::vector<EpochStats>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write " + path);
  for (const auto& stats : history) out << history_json(stats).dump() << '\n';
}

RunMetrics run_metrics_for(const std::string& method, uint64_t seed,
                           const std::vector<TaskSpec>& specs,
                           const std::vector<double>& values, bool baseline,
                           const FlopLedger& ledger) {
  RunMetrics m;
  m.method = method;
  m.seed = seed;
  for (const auto& s : specs) {
    m.task_names.push_back(s.name);
    m.metric_names.push_back(s.metric_name());
    m.lower_better.push_back(s.lower_is_better());
  }
  m.values = values;
  m.baseline = baseline;
  m.flops = ledger.total_flops();
  m.encoder_flops = ledger.encoder_flops();
  m.params = ledger.total_params();
  return m;
}

std::string stl_dir(const std::string& root, int task, uint64_t seed) {
  return (fs::path(root) /
          ("stl-task" + std::to_string(task) + "-seed" + std::to_string(seed)))
      .string();
}

// Trains one single-task baseline and writes its run directory.
SingleTaskNet run_stl(const RunConfig& cfg, const Dataset& train,
                      const Dataset& test, int task, uint64_t seed,
                      const std::string& root) {
  SingleTaskNet net = SingleTaskNet::build(
      cfg.model, cfg.tasks[static_cast<size_t>(task)], seed);
  OptimizerConfig ocfg = cfg.optimizer;
  ocfg.seed = seed;
  TrainResult tr = train_single_task(net, train, test, task, ocfg);
  const std::string dir = stl_dir(root, task, seed);
  fs::create_directories(dir);
  CheckpointMeta meta{"stl", seed, task};
  write_json_file(dir + "/checkpoint.json", single_task_checkpoint(net, meta));
  write_history(dir + "/history.jsonl", tr.history);
  RunMetrics m = run_metrics_for(
      "stl-task" + std::to_string(task), seed,
      {cfg.tasks[static_cast<size_t>(task)]}, tr.test_metrics, true,
      count_flops(net));
  write_json_file(dir + "/metrics.json", metrics_to_json(m));
  return net;
}

struct UniformResult {
  std::vector<double> metrics;
  uint64_t pruned_flops = 0;
  GatedEncoder model;
};

UniformResult run_uniform(const RunConfig& cfg, const Dataset& train,
                          const Dataset& test, uint64_t seed,
                          const std::string& root) {
  GatedEncoder enc = GatedEncoder::build(cfg.model, cfg.tasks, seed);
  enc.freeze_all_shared();
  OptimizerConfig ocfg = cfg.optimizer;
  ocfg.seed = seed;
  SparsityConfig off{0.0, {}, SparsityConfig::Variant::kNone};
  TrainResult tr = train_interrogate(enc, train, test, cfg.tasks, ocfg, off);
  PrunedModel pm = collapse(enc, extract_pattern(enc));
  FlopLedger ledger = count_flops(pm);
  const std::string dir =
      (fs::path(root) / ("mtl-uniform-seed" + std::to_string(seed))).string();
  fs::create_directories(dir);
  CheckpointMeta meta{"mtl-uniform", seed, -1};
  write_json_file(dir + "/checkpoint.json", encoder_checkpoint(enc, meta));
  write_history(dir + "/history.jsonl", tr.history);
  RunMetrics m = run_metrics_for("mtl-uniform", seed, cfg.tasks,
                                 tr.test_metrics, false, ledger);
  write_json_file(dir + "/metrics.json", metrics_to_json(m));
  return {tr.test_metrics, ledger.total_flops(), std::move(enc)};
}

std::vector<SingleTaskNet> load_stl_nets(const RunConfig& cfg,
                                         const std::string& root,
                                         uint64_t seed) {
  std::vector<SingleTaskNet> nets;
  for (size_t t = 0; t < cfg.tasks.size(); ++t) {
    const std::string path =
        stl_dir(root, static_cast<int>(t), seed) + "/checkpoint.json";
    if (!fs::exists(path))
      throw CliError("missing_stl_checkpoint",
                     "expected single-task checkpoint at " + path, 2);
    nets.push_back(load_single_task(read_json_file(path), nullptr));
  }
  return nets;
}

// ---- subcommands ----

int cmd_gen_data(const std::string& config_path, std::string outdir) {
  return guarded(outdir, [&]() {
    RunConfig cfg = load_run_config(config_path);
    if (outdir.empty()) outdir = cfg.output_dir;
    auto [train, test] = generate_dataset(cfg.dataset);
    fs::create_directories(outdir);
    write_json_file((fs::path(outdir) / "config.resolved.json").string(),
                    resolved_config(cfg));
    auto dataset_json = [&](const Dataset& ds) {
      return json{{"images", ds.images.data()},
                  {"image_size", cfg.dataset.image_size},
                  {"count", ds.size()},
                  {"quadrant", ds.labels[0]},
                  {"mass", ds.targets[1]},
                  {"parity", ds.labels[2]}};
    };
    json out{{"generator", cfg.dataset.generator},
             {"seed", cfg.dataset.seed},
             {"rho", cfg.dataset.rho},
             {"train", dataset_json(train)},
             {"test", dataset_json(test)}};
    write_json_file((fs::path(outdir) / "dataset.json").string(), out);
    std::cout << "wrote " << (fs::path(outdir) / "dataset.json").string()
              << " (" << train.size() << " train / " << test.size()
              << " test)\n";
    return 0;
  });
}

int cmd_train(const std::string& config_path, int stl_task, bool mtl_uniform,
              bool gated, const std::string& init, int64_t seed_flag,
              std::string outdir) {
  return guarded(outdir, [&]() {
    RunConfig cfg = load_run_config(config_path);
    if (outdir.empty()) outdir = cfg.output_dir;
    const uint64_t seed = seed_flag >= 0 ? static_cast<uint64_t>(seed_flag)
                                         : cfg.optimizer.seed;
    auto [train, test] = generate_dataset(cfg.dataset);
    fs::create_directories(outdir);
    if (stl_task >= 0) {
      if (stl_task >= static_cast<int>(cfg.tasks.size()))
        throw ConfigError("--stl task index out of range");
      run_stl(cfg, train, test, stl_task, seed, outdir);
      write_json_file(
          (fs::path(stl_dir(outdir, stl_task, seed)) /
           "config.resolved.json")
              .string(),
          resolved_config(cfg));
      std::cout << "trained stl-task" << stl_task << " (seed " << seed
                << ")\n";
      return 0;
    }
    if (mtl_uniform) {
      UniformResult res = run_uniform(cfg, train, test, seed, outdir);
      write_json_file((fs::path(outdir) /
                       ("mtl-uniform-seed" + std::to_string(seed)) /
                       "config.resolved.json")
                          .string(),
                      resolved_config(cfg));
      std::cout << "trained mtl-uniform (seed " << seed << ")\n";
      (void)res;
      return 0;
    }
    if (!gated) throw ConfigError("choose --stl N, --mtl-uniform or --interrogate");

    GatedEncoder enc = GatedEncoder::build(cfg.model, cfg.tasks, seed);
    if (init == "from-stl") {
      std::vector<SingleTaskNet> nets = load_stl_nets(cfg, outdir, seed);
      for (size_t t = 0; t < nets.size(); ++t)
        enc.init_task_branch_from(static_cast<int>(t), nets[t]);
      const std::string uni_path =
          (fs::path(outdir) / ("mtl-uniform-seed" + std::to_string(seed)) /
           "checkpoint.json")
              .string();
      if (fs::exists(uni_path)) {
        GatedEncoder uni = load_encoder(read_json_file(uni_path), nullptr);
        enc.init_shared_branch_from(uni);
      }
    } else if (init != "scratch") {
      throw ConfigError("--init must be from-stl or scratch");
    }
    OptimizerConfig ocfg = cfg.optimizer;
    ocfg.seed = seed;
    TrainResult tr =
        train_interrogate(enc, train, test, cfg.tasks, ocfg, cfg.sparsity);
    GatePattern pattern = extract_pattern(enc);
    PrunedModel pm = collapse(enc, pattern);
    FlopLedger ledger = count_flops(pm);
    const std::string dir =
        (fs::path(outdir) / ("interrogate-seed" + std::to_string(seed)))
            .string();
    fs::create_directories(dir);
    CheckpointMeta meta{"interrogate", seed, -1};
    write_json_file(dir + "/checkpoint.json", encoder_checkpoint(enc, meta));
    write_history(dir + "/history.jsonl", tr.history);
    write_json_file(dir + "/config.resolved.json", resolved_config(cfg));
    RunMetrics m = run_metrics_for("interrogate", seed, cfg.tasks,
                                   tr.test_metrics, false, ledger);
    write_json_file(dir + "/metrics.json", metrics_to_json(m));
    std::cout << "trained interrogate (seed " << seed << "), pruned cost "
              << ledger.total_flops() << " flops\n";
    return 0;
  });
}

int cmd_sweep(const std::string& config_path, int jobs, std::string outdir) {
  return guarded(outdir, [&]() {
    RunConfig cfg = load_run_config(config_path);
    if (outdir.empty()) outdir = cfg.output_dir;
    const std::string sweep_root = (fs::path(outdir) / "sweep").string();
    auto [train, test] = generate_dataset(cfg.dataset);
    fs::create_directories(sweep_root);
    write_json_file((fs::path(sweep_root) / "config.resolved.json").string(),
                    resolved_config(cfg));

    // Baselines per sweep seed: independent single-task nets plus the
    // frozen-all-shared row. Retrained deterministically on every run.
    std::map<uint64_t, std::vector<SingleTaskNet>> stl_nets;
    UniformResult uniform;
    SweepContext ctx;
    ctx.model = cfg.model;
    ctx.specs = cfg.tasks;
    ctx.train = &train;
    ctx.test = &test;
    ctx.opt = cfg.optimizer;
    const std::string base_root = (fs::path(sweep_root) / "baselines").string();
    for (uint64_t seed : cfg.sweep.seeds) {
      std::vector<SingleTaskNet>& nets = stl_nets[seed];
      std::vector<double> stl_row;
      for (size_t t = 0; t < cfg.tasks.size(); ++t) {
        nets.push_back(run_stl(cfg, train, test, static_cast<int>(t), seed,
                               base_root));
        stl_row.push_back(evaluate_single(nets.back(), test,
                                          static_cast<int>(t),
                                          cfg.optimizer.batch_size));
      }
      ctx.stl[seed] = &nets;
      ctx.stl_metrics[seed] = stl_row;
      if (seed == cfg.sweep.seeds.front()) {
        uniform = run_uniform(cfg, train, test, seed, base_root);
        ctx.uniform_metrics = uniform.metrics;
        ctx.uniform_flops = uniform.pruned_flops;
        ctx.shared_init = &uniform.model;
      }
    }

    ctx.on_cell = [](const SweepCell& cell) {
      if (cell.ok) {
        std::cout << "cell " << cell.index << ": lambda=" << cell.lambda_s
                  << " tau=" << format_tau(cell.tau) << " seed=" << cell.seed
                  << " flops=" << cell.flops
                  << " delta=" << cell.delta_mtl << "\n";
      } else {
        std::cout << "cell " << cell.index << " failed: " << cell.error
                  << "\n";
      }
    };
    ctx.on_artifacts = [&](const SweepCell& cell, GatedEncoder& enc,
                           const PrunedModel& pm, const TrainResult& tr) {
      char name[128];
      std::snprintf(name, sizeof(name), "cell-%03zu", cell.index);
      const std::string dir = (fs::path(sweep_root) / "cells" / name).string();
      fs::create_directories(dir);
      CheckpointMeta meta{"interrogate", cell.seed, -1};
      write_json_file(dir + "/checkpoint.json",
                      encoder_checkpoint(enc, meta));
      write_json_file(dir + "/pruned.json", pruned_checkpoint(pm));
      write_history(dir + "/history.jsonl", tr.history);
      RunMetrics m = run_metrics_for(
          "interrogate-l" + std::to_string(cell.lambda_s) + "-t" +
              format_tau(cell.tau),
          cell.seed, cfg.tasks, cell.metrics, false, count_flops(pm));
      write_json_file(dir + "/metrics.json", metrics_to_json(m));
    };

    SweepReport report = run_sweep(cfg.sweep, ctx, jobs);
    write_text_file((fs::path(sweep_root) / "sweep.csv").string(),
                    sweep_csv(report, cfg.tasks));
    write_json_file((fs::path(sweep_root) / "sweep.json").string(),
                    sweep_json(report, cfg.tasks));
    write_text_file((fs::path(sweep_root) / "pareto.csv").string(),
                    pareto_csv(report, cfg.tasks));
    write_text_file((fs::path(sweep_root) / "pareto.svg").string(),
                    pareto_svg(report));
    int ok = 0;
    for (const auto& c : report.cells) ok += c.ok ? 1 : 0;
    std::cout << ok << "/" << report.cells.size() << " cells succeeded; "
              << "pareto front size " << report.pareto.size() << "\n";
    return ok > 0 ? 0 : 2;
  });
}

int cmd_prune(const std::string& ckpt_path, bool verify, std::string outdir) {
  if (outdir.empty())
    outdir = fs::path(ckpt_path).parent_path().string();
  if (outdir.empty()) outdir = ".";
  return guarded(outdir, [&]() {
    GatedEncoder enc = load_encoder(read_json_file(ckpt_path), nullptr);
    GatePattern pattern = extract_pattern(enc);
    PrunedModel pm = collapse(enc, pattern);
    fs::create_directories(outdir);
    write_json_file((fs::path(outdir) / "pruned.json").string(),
                    pruned_checkpoint(pm));
    write_json_file((fs::path(outdir) / "gate-pattern.json").string(),
                    pattern_to_json(pattern));
    write_json_file((fs::path(outdir) / "flops.json").string(),
                    json{{"before", ledger_json(count_flops(enc))},
                         {"after", ledger_json(count_flops(pm))}});
    if (verify) {
      Rng rng(0xba7c4);
      Tensor x = Tensor::from_data(
          {32, enc.cfg.in_channels, enc.cfg.in_h, enc.cfg.in_w},
          rng.normal_vec(static_cast<size_t>(32) * enc.cfg.in_channels *
                             enc.cfg.in_h * enc.cfg.in_w,
                         0.0, 1.0));
      EquivalenceReport rep = verify_equivalence(enc, pm, x);
      json rj{{"tolerance", rep.tolerance},
              {"max_abs", rep.max_abs},
              {"max_rel", rep.max_rel},
              {"pass", rep.pass}};
      write_json_file((fs::path(outdir) / "verify.json").string(), rj);
      if (!rep.pass)
        throw CliError("equivalence_failure",
                       "pruned model deviates beyond tolerance", 4);
      std::cout << "verified: outputs match within " << rep.tolerance << "\n";
    }
    std::cout << "pruned model written to " << outdir << "\n";
    return 0;
  });
}

int cmd_report(const std::vector<std::string>& run_dirs, std::string outdir) {
  if (outdir.empty()) outdir = "report";
  return guarded(outdir, [&]() {
    std::vector<RunMetrics> runs;
    json gate_stats = json::object();
    for (const auto& dir : run_dirs) {
      fs::path p(dir);
      fs::path metrics = fs::is_directory(p) ? p / "metrics.json" : p;
      if (!fs::exists(metrics))
        throw ConfigError("no metrics.json under " + dir);
      runs.push_back(metrics_from_json(read_json_file(metrics.string())));
      if (fs::is_directory(p) && fs::exists(p / "checkpoint.json")) {
        json ck = read_json_file((p / "checkpoint.json").string());
        if (ck.at("kind") == "gated") {
          GatedEncoder enc = load_encoder(ck, nullptr);
          GateReport gr = gate_statistics(enc.bank, enc.mixer);
          std::vector<std::string> names;
          for (const auto& s : enc.specs) names.push_back(s.name);
          gate_stats[runs.back().method] = gate_stats_json(gr, names);
        }
      }
    }
    Report report = build_report(runs);
    fs::create_directories(outdir);
    write_text_file((fs::path(outdir) / "report.csv").string(),
                    report_csv(report));
    write_text_file((fs::path(outdir) / "report.txt").string(),
                    report_text(report));
    if (!gate_stats.empty())
      write_json_file((fs::path(outdir) / "gate_stats.json").string(),
                      gate_stats);
    std::cout << report_text(report);
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gated multi-task learning engine"};
  app.require_subcommand(1);

  std::string config_path, outdir, ckpt_path, init = "scratch";
  std::vector<std::string> run_dirs;
  int stl_task = -1, jobs = 1;
  int64_t seed = -1;
  bool mtl_uniform = false, gated = false, verify = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic taskset");
  gen->add_option("config", config_path)->required();
  gen->add_option("--output", outdir);

  auto* train = app.add_subcommand("train", "train a baseline or gated model");
  train->add_option("config", config_path)->required();
  train->add_option("--stl", stl_task, "train the single-task baseline N");
  train->add_flag("--mtl-uniform", mtl_uniform,
                  "train the fully shared baseline");
  train->add_flag("--interrogate", gated, "train the gated model");
  train->add_option("--init", init, "from-stl or scratch");
  train->add_option("--seed", seed);
  train->add_option("--output", outdir);

  auto* sweep = app.add_subcommand("sweep", "run the sparsity sweep");
  sweep->add_option("config", config_path)->required();
  sweep->add_option("--jobs", jobs, "parallel sweep cells");
  sweep->add_option("--output", outdir);

  auto* prune = app.add_subcommand("prune", "collapse a trained checkpoint");
  prune->add_option("checkpoint", ckpt_path)->required();
  prune->add_flag("--verify", verify, "check pruned/gated equivalence");
  prune->add_option("--output", outdir);

  auto* report = app.add_subcommand("report", "assemble a results table");
  report->add_option("run_dirs", run_dirs)->required();
  report->add_option("--output", outdir);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return cmd_gen_data(config_path, outdir);
  if (train->parsed())
    return cmd_train(config_path, stl_task, mtl_uniform, gated, init, seed,
                     outdir);
  if (sweep->parsed()) return cmd_sweep(config_path, jobs, outdir);
  if (prune->parsed()) return cmd_prune(ckpt_path, verify, outdir);
  if (report->parsed()) return cmd_report(run_dirs, outdir);
  return 1;
}
