// Python bindings for the core operations: dataset generation, metric
// math, training entry points, pruning and flop accounting.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "interrogate/checkpoint.hpp"
#include "interrogate/config.hpp"
#include "interrogate/report.hpp"
#include "interrogate/rng.hpp"

namespace py = pybind11;
using namespace interrogate;

namespace {

ScoreTable table_from(const std::map<std::string, std::vector<double>>& rows,
                      const std::vector<bool>& lower_better,
                      const std::string& baseline) {
  ScoreTable t;
  if (rows.empty()) throw ContractError("empty score table");
  t.lower_better = lower_better;
  t.task_names.resize(lower_better.size());
  for (size_t i = 0; i < t.task_names.size(); ++i)
    t.task_names[i] = "task" + std::to_string(i);
  t.baseline = baseline;
  for (const auto& [name, values] : rows) t.add_row(name, values);
  return t;
}

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict dataset_to_dict(const Dataset& ds) {
  py::dict out;
  out["images"] = tensor_to_array(ds.images);
  out["quadrant"] = ds.labels[0];
  out["mass"] = ds.targets[1];
  out["parity"] = ds.labels[2];
  return out;
}

py::dict ledger_to_dict(const FlopLedger& ledger) {
  py::dict out;
  out["total_macs"] = ledger.total_macs();
  out["total_flops"] = ledger.total_flops();
  out["encoder_flops"] = ledger.encoder_flops();
  out["total_params"] = ledger.total_params();
  py::list entries;
  for (const auto& e : ledger.entries) {
    py::dict d;
    d["layer"] = e.layer;
    d["branch"] = e.branch;
    d["macs"] = e.macs;
    d["params"] = e.params;
    entries.append(d);
  }
  out["entries"] = entries;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "gated multi-task learning engine";

  m.def(
      "delta_mtl",
      [](const std::vector<double>& method, const std::vector<double>& base,
         const std::vector<bool>& lower_better) {
        ScoreTable t = table_from({{"stl", base}, {"method", method}},
                                  lower_better, "stl");
        return delta_mtl(t, "method");
      },
      py::arg("method"), py::arg("baseline"), py::arg("lower_better"),
      "Averaged normalized drop versus the baseline, in percent.");

  m.def(
      "mean_rank",
      [](const std::map<std::string, std::vector<double>>& rows,
         const std::vector<bool>& lower_better) {
        ScoreTable t = table_from(rows, lower_better,
                                  rows.begin()->first);
        return mean_rank(t);
      },
      py::arg("rows"), py::arg("lower_better"),
      "Direction-aware mean rank per method (ties averaged).");

  m.def(
      "generate_dataset",
      [](int train_size, int test_size, double rho, uint64_t seed) {
        SyntheticSpec spec;
        spec.train_size = train_size;
        spec.test_size = test_size;
        spec.rho = rho;
        spec.seed = seed;
        auto [train, test] = generate_dataset(spec);
        py::dict out;
        out["train"] = dataset_to_dict(train);
        out["test"] = dataset_to_dict(test);
        return out;
      },
      py::arg("train_size") = 2000, py::arg("test_size") = 500,
      py::arg("rho") = 0.5, py::arg("seed") = 1,
      "Deterministic blob-image taskset (quadrant / mass / parity).");

  m.def(
      "sparsity_loss",
      [](const std::vector<std::vector<std::vector<double>>>& alpha,
         const std::vector<double>& tau, const std::string& variant) {
        const int tasks = static_cast<int>(alpha.size());
        std::vector<int> widths;
        for (const auto& site : alpha.at(0))
          widths.push_back(static_cast<int>(site.size()));
        GateBank bank(tasks, widths, 0.0);
        for (int t = 0; t < tasks; ++t)
          for (size_t s = 0; s < widths.size(); ++s)
            for (int c = 0; c < widths[s]; ++c)
              bank.alpha().data()[static_cast<size_t>(
                  (t * static_cast<int>(widths.size()) + static_cast<int>(s)) *
                      bank.max_width() +
                  c)] = alpha[static_cast<size_t>(t)][s][static_cast<size_t>(c)];
        SparsityConfig cfg{1.0, tau,
                           variant == "l1" ? SparsityConfig::Variant::kL1
                                           : SparsityConfig::Variant::kHinge};
        return sparsity_loss(bank, cfg).item();
      },
      py::arg("alpha"), py::arg("tau"), py::arg("variant") = "hinge",
      "Gate usage regularizer over logits alpha[task][site][channel].");

  m.def(
      "train",
      [](const std::string& config_json, const std::string& mode,
         int64_t seed) {
        RunConfig cfg = parse_run_config(nlohmann::json::parse(config_json));
        if (seed >= 0) cfg.optimizer.seed = static_cast<uint64_t>(seed);
        auto [train, test] = generate_dataset(cfg.dataset);
        py::dict out;
        if (mode.rfind("stl", 0) == 0) {
          const int task = std::stoi(mode.substr(3));
          SingleTaskNet net = SingleTaskNet::build(
              cfg.model, cfg.tasks.at(static_cast<size_t>(task)),
              cfg.optimizer.seed);
          TrainResult r =
              train_single_task(net, train, test, task, cfg.optimizer);
          out["metrics"] = r.test_metrics;
          out["flops"] = count_flops(net).total_flops();
          return out;
        }
        GatedEncoder enc =
            GatedEncoder::build(cfg.model, cfg.tasks, cfg.optimizer.seed);
        SparsityConfig scfg = cfg.sparsity;
        if (mode == "mtl-uniform") {
          enc.freeze_all_shared();
          scfg = SparsityConfig{0.0, {}, SparsityConfig::Variant::kNone};
        } else if (mode != "interrogate") {
          throw ContractError("mode must be stlN, mtl-uniform or interrogate");
        }
        TrainResult r =
            train_interrogate(enc, train, test, cfg.tasks, cfg.optimizer,
                              scfg);
        PrunedModel pm = collapse(enc, extract_pattern(enc));
        FlopLedger ledger = count_flops(pm);
        out["metrics"] = r.test_metrics;
        out["flops"] = ledger.total_flops();
        out["encoder_flops"] = ledger.encoder_flops();
        GateReport gr = gate_statistics(enc.bank, enc.mixer);
        py::list ratios;
        for (const auto& t : gr.tasks) ratios.append(t.selection_ratio);
        out["selection_ratios"] = ratios;
        return out;
      },
      py::arg("config_json") = "{}", py::arg("mode") = "interrogate",
      py::arg("seed") = -1,
      "Train a model in-process and return its scorecard.");

  m.def(
      "prune_checkpoint",
      [](const std::string& checkpoint_path) {
        GatedEncoder enc =
            load_encoder(read_json_file(checkpoint_path), nullptr);
        PrunedModel pm = collapse(enc, extract_pattern(enc));
        Rng rng(0xba7c4);
        Tensor x = Tensor::from_data(
            {32, enc.cfg.in_channels, enc.cfg.in_h, enc.cfg.in_w},
            rng.normal_vec(static_cast<size_t>(32) * enc.cfg.in_channels *
                               enc.cfg.in_h * enc.cfg.in_w,
                           0.0, 1.0));
        EquivalenceReport rep = verify_equivalence(enc, pm, x);
        py::dict out;
        out["before"] = ledger_to_dict(count_flops(enc));
        out["after"] = ledger_to_dict(count_flops(pm));
        out["max_rel_deviation"] =
            *std::max_element(rep.max_rel.begin(), rep.max_rel.end());
        out["equivalent"] = rep.pass;
        return out;
      },
      py::arg("checkpoint_path"),
      "Collapse a saved gated checkpoint and verify the static model.");

  m.def("default_config", []() {
    return resolved_config(parse_run_config(nlohmann::json::object())).dump();
  });

  m.attr("__version__") = "1.0.0";
}
