#include "interrogate/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace interrogate {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string format_tau(const std::vector<double>& tau) {
  std::string out;
  for (size_t i = 0; i < tau.size(); ++i) {
    if (i) out += '|';
    out += fmt(tau[i]);
  }
  return out;
}

json metrics_to_json(const RunMetrics& m) {
  json tasks = json::array();
  for (size_t t = 0; t < m.task_names.size(); ++t)
    tasks.push_back(json{{"name", m.task_names[t]},
                         {"metric", m.metric_names[t]},
                         {"direction", m.lower_better[t] ? "down" : "up"},
                         {"value", m.values[t]}});
  return json{{"method", m.method},  {"seed", m.seed},
              {"tasks", tasks},      {"flops", m.flops},
              {"encoder_flops", m.encoder_flops},
              {"params", m.params},  {"baseline", m.baseline}};
}

RunMetrics metrics_from_json(const json& j) {
  RunMetrics m;
  m.method = j.at("method").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  for (const auto& t : j.at("tasks")) {
    m.task_names.push_back(t.at("name").get<std::string>());
    m.metric_names.push_back(t.at("metric").get<std::string>());
    m.lower_better.push_back(t.at("direction").get<std::string>() == "down");
    m.values.push_back(t.at("value").get<double>());
  }
  m.flops = j.at("flops").get<uint64_t>();
  m.encoder_flops = j.at("encoder_flops").get<uint64_t>();
  m.params = j.at("params").get<uint64_t>();
  m.baseline = j.at("baseline").get<bool>();
  return m;
}

Report build_report(const std::vector<RunMetrics>& runs) {
  if (runs.empty()) throw ContractError("build_report: no runs");
  Report report;

  // Baseline rows arrive one task at a time (independent networks); other
  // methods carry the full task vector. Collect task order from the first
  // full row, or from baseline fragments.
  for (const auto& r : runs) {
    if (r.baseline) continue;
    report.task_names = r.task_names;
    report.metric_names = r.metric_names;
    break;
  }
  std::vector<bool> lower;
  if (report.task_names.empty()) {
    // baseline-only report
    std::map<std::string, std::pair<std::string, bool>> seen;
    for (const auto& r : runs)
      for (size_t t = 0; t < r.task_names.size(); ++t)
        seen.emplace(r.task_names[t],
                     std::make_pair(r.metric_names[t], r.lower_better[t]));
    for (const auto& [name, info] : seen) {
      report.task_names.push_back(name);
      report.metric_names.push_back(info.first);
      lower.push_back(info.second);
    }
  } else {
    for (const auto& r : runs) {
      if (r.baseline) continue;
      lower = r.lower_better;
      break;
    }
  }
  const size_t t_count = report.task_names.size();
  auto task_index = [&](const std::string& name) -> int {
    for (size_t i = 0; i < t_count; ++i)
      if (report.task_names[i] == name) return static_cast<int>(i);
    throw ContractError("build_report: unknown task " + name);
  };

  // Average rows per method in a deterministic order.
  std::vector<RunMetrics> sorted = runs;
  std::sort(sorted.begin(), sorted.end(),
            [](const RunMetrics& a, const RunMetrics& b) {
              return a.method != b.method ? a.method < b.method
                                          : a.seed < b.seed;
            });
  struct Acc {
    std::vector<double> sum;
    std::vector<int> n;
    double flops = 0.0, params = 0.0;
    int runs = 0;
    bool baseline = false;
  };
  std::map<std::string, Acc> acc;
  for (const auto& r : sorted) {
    const std::string key = r.baseline ? "stl" : r.method;
    Acc& a = acc[key];
    if (a.sum.empty()) {
      a.sum.assign(t_count, 0.0);
      a.n.assign(t_count, 0);
    }
    a.baseline = a.baseline || r.baseline;
    for (size_t t = 0; t < r.task_names.size(); ++t) {
      const int i = task_index(r.task_names[t]);
      a.sum[static_cast<size_t>(i)] += r.values[t];
      a.n[static_cast<size_t>(i)] += 1;
    }
    a.flops += static_cast<double>(r.flops);
    a.params += static_cast<double>(r.params);
    a.runs += 1;
  }

  ScoreTable table;
  table.task_names = report.task_names;
  table.lower_better = lower;
  table.baseline = "stl";
  for (const auto& [method, a] : acc) {
    std::vector<double> row(t_count);
    for (size_t t = 0; t < t_count; ++t) {
      if (a.n[t] == 0)
        throw ContractError("build_report: method " + method +
                            " missing task " + report.task_names[t]);
      row[t] = a.sum[t] / a.n[t];
    }
    table.add_row(method, row);
  }

  const bool have_baseline = table.rows.count("stl") > 0;
  std::map<std::string, double> ranks;
  if (table.rows.size() >= 2) ranks = mean_rank(table);

  // baseline row first, then the rest in name order
  std::vector<std::string> order;
  if (have_baseline) order.push_back("stl");
  for (const auto& [name, _] : acc)
    if (name != "stl") order.push_back(name);

  for (const auto& name : order) {
    const Acc& a = acc.at(name);
    MethodSummary s;
    s.method = name;
    s.values = table.rows.at(name);
    s.delta_mtl = have_baseline ? delta_mtl(table, name) : 0.0;
    s.mean_rank = ranks.count(name) ? ranks.at(name) : 1.0;
    // flops averaged per run; baseline fragments sum to the full cost
    s.flops = static_cast<uint64_t>(
        a.baseline ? a.flops / std::max(1, a.runs / static_cast<int>(t_count))
                   : a.flops / std::max(1, a.runs));
    s.params = static_cast<uint64_t>(
        a.baseline ? a.params / std::max(1, a.runs / static_cast<int>(t_count))
                   : a.params / std::max(1, a.runs));
    s.runs = a.runs;
    report.methods.push_back(s);
  }
  return report;
}

std::string report_csv(const Report& r) {
  std::ostringstream os;
  os << "method";
  for (size_t t = 0; t < r.task_names.size(); ++t)
    os << ',' << r.task_names[t] << '_' << r.metric_names[t];
  os << ",delta_mtl,mr,flops,params\n";
  for (const auto& m : r.methods) {
    os << m.method;
    for (double v : m.values) os << ',' << fmt(v);
    os << ',' << fmt(m.delta_mtl) << ',' << fmt(m.mean_rank) << ',' << m.flops
       << ',' << m.params << '\n';
  }
  return os.str();
}

std::string report_text(const Report& r) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"method"};
  for (size_t t = 0; t < r.task_names.size(); ++t)
    header.push_back(r.task_names[t] + "(" + r.metric_names[t] + ")");
  header.insert(header.end(), {"delta_mtl", "mr", "flops", "params"});
  cells.push_back(header);
  for (const auto& m : r.methods) {
    std::vector<std::string> row = {m.method};
    for (double v : m.values) row.push_back(fmt4(v));
    row.push_back(fmt4(m.delta_mtl));
    row.push_back(fmt4(m.mean_rank));
    row.push_back(std::to_string(m.flops));
    row.push_back(std::to_string(m.params));
    cells.push_back(row);
  }
  std::vector<size_t> width(cells[0].size(), 0);
  for (const auto& row : cells)
    for (size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (size_t i = 0; i < cells.size(); ++i) {
    for (size_t c = 0; c < cells[i].size(); ++c) {
      os << cells[i][c] << std::string(width[c] - cells[i][c].size() + 2, ' ');
    }
    os << '\n';
    if (i == 0) {
      size_t total = 0;
      for (size_t w : width) total += w + 2;
      os << std::string(total, '-') << '\n';
    }
  }
  return os.str();
}

json gate_stats_json(const GateReport& report,
                     const std::vector<std::string>& task_names) {
  json tasks = json::array();
  for (size_t t = 0; t < report.tasks.size(); ++t) {
    const auto& s = report.tasks[t];
    tasks.push_back(json{{"name", task_names[t]},
                         {"selection_ratio", s.selection_ratio},
                         {"per_site", s.per_site},
                         {"shared_contribution", s.shared_contribution}});
  }
  return json{{"tasks", tasks}};
}

std::string sweep_csv_header(const std::vector<TaskSpec>& specs) {
  std::string header = "lambda_s,tau,seed,flops,params,delta_mtl";
  for (const auto& s : specs) header += "," + s.name + "_" + s.metric_name();
  return header;
}

namespace {

void cell_row(std::ostringstream& os, const SweepCell& cell) {
  os << fmt(cell.lambda_s) << ',' << format_tau(cell.tau) << ',' << cell.seed
     << ',' << cell.flops << ',' << cell.params << ','
     << fmt(cell.delta_mtl);
  for (double v : cell.metrics) os << ',' << fmt(v);
  os << '\n';
}

}  // namespace

std::string sweep_csv(const SweepReport& report,
                      const std::vector<TaskSpec>& specs) {
  std::ostringstream os;
  os << sweep_csv_header(specs) << '\n';
  for (const auto& cell : report.cells) {
    if (!cell.ok) continue;
    cell_row(os, cell);
  }
  return os.str();
}

std::string pareto_csv(const SweepReport& report,
                       const std::vector<TaskSpec>& specs) {
  std::vector<const SweepCell*> front;
  for (size_t i : report.pareto) front.push_back(&report.cells[i]);
  std::sort(front.begin(), front.end(),
            [](const SweepCell* a, const SweepCell* b) {
              return a->flops != b->flops ? a->flops < b->flops
                                          : a->delta_mtl < b->delta_mtl;
            });
  std::ostringstream os;
  os << sweep_csv_header(specs) << '\n';
  for (const SweepCell* cell : front) cell_row(os, *cell);
  return os.str();
}

json sweep_json(const SweepReport& report,
                const std::vector<TaskSpec>& specs) {
  json cells = json::array();
  for (const auto& cell : report.cells) {
    json c{{"lambda_s", cell.lambda_s},
           {"tau", cell.tau},
           {"seed", cell.seed},
           {"ok", cell.ok}};
    if (cell.ok) {
      c["flops"] = cell.flops;
      c["encoder_flops"] = cell.encoder_flops;
      c["params"] = cell.params;
      c["delta_mtl"] = cell.delta_mtl;
      json metrics = json::object();
      for (size_t t = 0; t < specs.size(); ++t)
        metrics[specs[t].name + "_" + specs[t].metric_name()] =
            cell.metrics[t];
      c["metrics"] = metrics;
      c["selection_ratios"] = cell.selection_ratios;
      c["max_rel_deviation"] = cell.max_rel_deviation;
    } else {
      c["error"] = cell.error;
    }
    cells.push_back(c);
  }
  json j{{"cells", cells}, {"pareto", report.pareto}};
  if (!report.stl_metrics.empty()) j["stl_metrics"] = report.stl_metrics;
  if (!report.uniform_metrics.empty()) {
    j["uniform_metrics"] = report.uniform_metrics;
    j["uniform_delta_mtl"] = report.uniform_delta;
    j["uniform_flops"] = report.uniform_flops;
  }
  return j;
}

std::string pareto_svg(const SweepReport& report) {
  constexpr int kW = 800, kH = 600;
  constexpr int kL = 80, kR = 40, kT = 40, kB = 70;
  std::vector<const SweepCell*> ok;
  for (const auto& c : report.cells)
    if (c.ok) ok.push_back(&c);
  double fmin = 0.0, fmax = 1.0, dmin = 0.0, dmax = 1.0;
  if (!ok.empty()) {
    fmin = fmax = static_cast<double>(ok[0]->flops) * 1e-9;
    dmin = dmax = ok[0]->delta_mtl;
    for (const auto* c : ok) {
      fmin = std::min(fmin, static_cast<double>(c->flops) * 1e-9);
      fmax = std::max(fmax, static_cast<double>(c->flops) * 1e-9);
      dmin = std::min(dmin, c->delta_mtl);
      dmax = std::max(dmax, c->delta_mtl);
    }
  }
  if (fmax - fmin < 1e-12) { fmax += 1.0; fmin -= fmin > 1.0 ? 1.0 : 0.0; }
  if (dmax - dmin < 1e-12) { dmax += 1.0; dmin -= 1.0; }
  const double fpad = 0.05 * (fmax - fmin), dpad = 0.08 * (dmax - dmin);
  fmin -= fpad; fmax += fpad; dmin -= dpad; dmax += dpad;
  auto sx = [&](double f) {
    return kL + (f - fmin) / (fmax - fmin) * (kW - kL - kR);
  };
  auto sy = [&](double d) {
    return kH - kB - (d - dmin) / (dmax - dmin) * (kH - kT - kB);
  };
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" "
        "width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
     << ' ' << kH << "\">\n"
     << "<rect width=\"" << kW << "\" height=\"" << kH
     << "\" fill=\"white\"/>\n";
  // axes
  os << "<line x1=\"" << kL << "\" y1=\"" << (kH - kB) << "\" x2=\""
     << (kW - kR) << "\" y2=\"" << (kH - kB)
     << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL
     << "\" y2=\"" << (kH - kB) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double f = fmin + (fmax - fmin) * i / 5.0;
    const double d = dmin + (dmax - dmin) * i / 5.0;
    os << "<line x1=\"" << fmt(sx(f)) << "\" y1=\"" << (kH - kB) << "\" x2=\""
       << fmt(sx(f)) << "\" y2=\"" << (kH - kB + 6)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt(sx(f)) << "\" y=\"" << (kH - kB + 22)
       << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt4(f)
       << "</text>\n";
    os << "<line x1=\"" << (kL - 6) << "\" y1=\"" << fmt(sy(d)) << "\" x2=\""
       << kL << "\" y2=\"" << fmt(sy(d)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (kL - 10) << "\" y=\"" << fmt(sy(d) + 4)
       << "\" font-size=\"12\" text-anchor=\"end\">" << fmt4(d)
       << "</text>\n";
  }
  os << "<text x=\"" << (kL + (kW - kL - kR) / 2) << "\" y=\"" << (kH - 20)
     << "\" font-size=\"14\" text-anchor=\"middle\">GFLOPs (pruned)"
     << "</text>\n";
  os << "<text x=\"20\" y=\"" << (kT + (kH - kT - kB) / 2)
     << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
     << (kT + (kH - kT - kB) / 2) << ")\">relative drop (%)</text>\n";
  // pareto front polyline
  std::vector<const SweepCell*> front;
  for (size_t i : report.pareto) front.push_back(&report.cells[i]);
  std::sort(front.begin(), front.end(),
            [](const SweepCell* a, const SweepCell* b) {
              return a->flops < b->flops;
            });
  if (front.size() > 1) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" "
          "points=\"";
    for (const auto* c : front)
      os << fmt(sx(static_cast<double>(c->flops) * 1e-9)) << ','
         << fmt(sy(c->delta_mtl)) << ' ';
    os << "\"/>\n";
  }
  for (const auto* c : ok)
    os << "<circle cx=\"" << fmt(sx(static_cast<double>(c->flops) * 1e-9))
       << "\" cy=\"" << fmt(sy(c->delta_mtl))
       << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
  os << "</svg>\n";
  return os.str();
}

json history_json(const EpochStats& stats) {
  return json{{"epoch", stats.epoch},
              {"task_losses", stats.task_losses},
              {"weighted_loss", stats.weighted},
              {"sparsity_loss", stats.sparsity},
              {"selection_ratios", stats.selection_ratios},
              {"main_lr", stats.main_lr},
              {"gate_lr", stats.gate_lr}};
}

}  // namespace interrogate
