#include "blocktr1/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "blocktr1/diagnostics.hpp"
#include "blocktr1/errors.hpp"
#include "blocktr1/rti.hpp"

#ifndef BLOCKTR1_REVISION
#define BLOCKTR1_REVISION "unknown"
#endif

namespace blocktr1 {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kConfigKeys = {
    "problem", "strategies", "hessian", "tol", "max_iter", "c1", "hessian_floor",
    "reps", "collocation_nodes", "nm_sweep", "steps", "variants", "seed"};

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw ConfigError("cannot write " + p.string());
  f << text;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Variant {
  bool lifted = false;
  JacobianStrategy strategy = JacobianStrategy::exact;
  std::string name;
};

Variant parse_variant(const std::string& text) {
  Variant v;
  std::string s = text;
  const std::string prefix = "lifted:";
  if (s.rfind(prefix, 0) == 0) {
    v.lifted = true;
    s = s.substr(prefix.size());
  }
  v.strategy = strategy_from_string(s);
  v.name = (v.lifted ? "lifted_" : "") + s;
  return v;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& item : j.items()) {
    if (!kConfigKeys.count(item.key())) throw ConfigError("config: unknown key '" + item.key() + "'");
  }
  if (!j.contains("problem")) throw ConfigError("config: missing key 'problem'");
  ExperimentConfig cfg;
  cfg.source = j;
  cfg.problem = chain_parameters_from_json(j.at("problem"));
  if (j.contains("strategies")) {
    std::vector<std::string> names;
    read(j, "strategies", names);
    if (names.empty()) throw ConfigError("config: 'strategies' must not be empty");
    cfg.strategies.clear();
    for (const std::string& n : names) {
      const JacobianStrategy s = strategy_from_string(n);
      if (std::find(cfg.strategies.begin(), cfg.strategies.end(), s) != cfg.strategies.end()) {
        cfg.warnings.push_back("duplicate strategy '" + n + "' ignored");
        continue;
      }
      cfg.strategies.push_back(s);
    }
  }
  if (j.contains("hessian")) {
    std::string h;
    read(j, "hessian", h);
    cfg.hessian = hessian_from_string(h);
  }
  read(j, "tol", cfg.tol);
  read(j, "max_iter", cfg.max_iter);
  read(j, "c1", cfg.c1);
  read(j, "hessian_floor", cfg.hessian_floor);
  read(j, "reps", cfg.reps);
  read(j, "collocation_nodes", cfg.collocation_nodes);
  read(j, "steps", cfg.steps);
  read(j, "seed", cfg.seed);
  if (j.contains("nm_sweep")) {
    const auto& sw = j.at("nm_sweep");
    if (sw.is_string()) {
      cfg.nm_sweep = parse_sweep(sw.get<std::string>());
    } else {
      read(j, "nm_sweep", cfg.nm_sweep);
    }
  }
  if (j.contains("variants")) {
    read(j, "variants", cfg.variants);
    if (cfg.variants.empty()) throw ConfigError("config: 'variants' must not be empty");
    for (const std::string& v : cfg.variants) parse_variant(v);
  }
  if (!(cfg.tol > 0.0)) throw ConfigError("config: tol must be positive");
  if (cfg.max_iter < 0) throw ConfigError("config: max_iter must be >= 0");
  if (!(cfg.c1 > 0.0 && cfg.c1 < 1.0)) throw ConfigError("config: c1 must lie in (0, 1)");
  if (!(cfg.hessian_floor >= 0.0)) throw ConfigError("config: hessian_floor must be >= 0");
  if (cfg.reps < 1) throw ConfigError("config: reps must be >= 1");
  if (cfg.steps < 1) throw ConfigError("config: steps must be >= 1");
  if (cfg.collocation_nodes < 1 || cfg.collocation_nodes > 4) {
    throw ConfigError("config: collocation_nodes must lie in 1..4");
  }
  for (int nm : cfg.nm_sweep) {
    if (nm < 2) throw ConfigError("config: nm_sweep entries must be >= 2");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& file) {
  std::ifstream f(file);
  if (!f) throw ConfigError("cannot open config file " + file.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: invalid JSON in " + file.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

std::vector<int> parse_sweep(const std::string& text) {
  std::vector<int> out;
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t pos = 0;
      const int v = std::stoi(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep: cannot parse '" + text + "'");
    }
  };
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const int a = to_int(text.substr(0, dots));
    const int b = to_int(text.substr(dots + 2));
    if (b < a) throw ConfigError("sweep: empty range '" + text + "'");
    for (int v = a; v <= b; ++v) out.push_back(v);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(item));
  if (out.empty()) throw ConfigError("sweep: empty list");
  return out;
}

nlohmann::json run_metadata(const ExperimentConfig& cfg, const std::string& command) {
  const std::string dumped = cfg.source.dump();
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << std::hash<std::string>{}(dumped);
  nlohmann::json meta;
  meta["command"] = command;
  meta["config_hash"] = hash.str();
  meta["revision"] = BLOCKTR1_REVISION;
  meta["seed"] = cfg.seed;
  meta["config"] = cfg.source;
  meta["warnings"] = cfg.warnings;
  return meta;
}

int cmd_solve(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  fs::create_directories(out);
  for (const std::string& w : cfg.warnings) log << "warning: " << w << '\n';
  const OcpModel model = chain_of_masses(cfg.problem);
  const Iterate initial = make_initial_iterate(model);
  std::function<double(const std::vector<Eigen::MatrixXd>&)> monitor;
  try {
    monitor = make_projected_error_monitor(compute_reference(model, initial));
  } catch (const NumericalError& e) {
    log << "warning: no reference solution, proj_jac_err left empty (" << e.what() << ")\n";
  }
  int code = 0;
  std::string merged;
  bool header = true;
  for (JacobianStrategy s : cfg.strategies) {
    SqpOptions o;
    o.strategy = s;
    o.hessian = cfg.hessian;
    o.tol = cfg.tol;
    o.max_iter = cfg.max_iter;
    o.c1 = cfg.c1;
    o.hessian_floor = cfg.hessian_floor;
    o.jacobian_monitor = monitor;
    const SqpResult res = run_sqp(model, o, initial);
    write_file(out / ("solve_" + to_string(s) + ".csv"), records_to_csv(res.records));
    merged += records_to_csv(res.records, header);
    header = false;
    log << to_string(s) << ": " << res.status << " after " << res.records.size() << " iterations";
    if (!res.records.empty()) log << ", kkt " << res.records.back().kkt;
    log << '\n';
    if (res.status == "diverged" || res.status == "qp_failure") code = 3;
  }
  write_file(out / "solve_all.csv", merged);
  write_file(out / "solve.meta.json", run_metadata(cfg, "solve").dump(2) + "\n");
  return code;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("loglog_slope: need >= 2 points");
  double sx = 0.0;
  double sy = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0.0) || !(y[k] > 0.0)) throw ConfigError("loglog_slope: entries must be positive");
    sx += std::log(x[k]);
    sy += std::log(y[k]);
  }
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = std::log(x[k]) - sx / n;
    sxx += dx * dx;
    sxy += dx * (std::log(y[k]) - sy / n);
  }
  return sxy / sxx;
}

std::vector<BenchRow> run_bench(const ExperimentConfig& cfg, const std::vector<int>& sweep,
                                const std::vector<std::string>& formulations,
                                const std::vector<JacobianStrategy>& strategies) {
  if (sweep.empty()) throw ConfigError("bench: n_m sweep is empty");
  constexpr int kWarmup = 2;
  std::vector<BenchRow> rows;
  for (int nm : sweep) {
    ChainParameters prm = cfg.problem;
    prm.n_m = nm;
    const OcpModel model = chain_of_masses(prm);
    for (const std::string& form : formulations) {
      if (form != "shooting" && form != "lifted") throw ConfigError("bench: unknown formulation " + form);
      for (JacobianStrategy s : strategies) {
        RtiOptions o;
        o.strategy = s;
        o.hessian = cfg.hessian;
        o.c1 = cfg.c1;
        o.hessian_floor = cfg.hessian_floor;
        o.lifted = form == "lifted";
        o.collocation_nodes = cfg.collocation_nodes;
        RtiController ctrl(model, o);
        ctrl.initialize(make_initial_iterate(model));
        PlantOptions plant;
        plant.substeps = 4;
        const ClosedLoopTrace tr = simulate_closed_loop(ctrl, model.x0_hat, kWarmup + cfg.reps, plant);
        std::vector<double> prep;
        std::vector<double> fb;
        for (std::size_t k = kWarmup; k < tr.samples.size(); ++k) {
          prep.push_back(static_cast<double>(tr.samples[k].prep_ns));
          fb.push_back(static_cast<double>(tr.samples[k].feedback_ns));
        }
        BenchRow r;
        r.n_m = nm;
        r.nx = model.nx;
        r.formulation = form;
        r.strategy = to_string(s);
        r.prep_median_ns = median(prep);
        r.feedback_median_ns = median(fb);
        r.reps = static_cast<int>(prep.size());
        if (const LiftedCounters* c = ctrl.lifted_counters(); c && tr.samples.size() > 1) {
          r.mults_per_update = static_cast<double>(c->multiplications) /
                               (static_cast<double>(tr.samples.size() - 1) * model.N);
        }
        rows.push_back(r);
      }
    }
  }
  return rows;
}

std::string bench_to_csv(const std::vector<BenchRow>& rows, bool include_timing) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "n_m,nx,formulation,strategy,prep_median_ns,feedback_median_ns,reps,mults_per_update\n";
  for (const BenchRow& r : rows) {
    os << r.n_m << ',' << r.nx << ',' << r.formulation << ',' << r.strategy << ','
       << (include_timing ? r.prep_median_ns : 0.0) << ','
       << (include_timing ? r.feedback_median_ns : 0.0) << ',' << r.reps << ','
       << r.mults_per_update << '\n';
  }
  return os.str();
}

int cmd_bench(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  if (cfg.nm_sweep.empty()) throw ConfigError("bench: n_m sweep is empty");
  fs::create_directories(out);
  for (const std::string& w : cfg.warnings) log << "warning: " << w << '\n';
  if (cfg.reps == 1) log << "warning: reps = 1, timings carry no variance estimate\n";
  std::vector<JacobianStrategy> strategies;
  for (JacobianStrategy s : cfg.strategies) {
    if (s == JacobianStrategy::exact || s == JacobianStrategy::block_tr1_forward ||
        s == JacobianStrategy::block_tr1_adjoint || s == JacobianStrategy::block_tr1_dynamic) {
      strategies.push_back(s);
    } else {
      log << "warning: strategy " << to_string(s) << " skipped in bench (no lifted variant)\n";
    }
  }
  if (strategies.empty()) throw ConfigError("bench: no benchmarkable strategy");
  const std::vector<std::string> forms{"shooting", "lifted"};
  const std::vector<BenchRow> rows = run_bench(cfg, cfg.nm_sweep, forms, strategies);
  write_file(out / "bench.csv", bench_to_csv(rows));

  std::ostringstream slopes;
  slopes << std::setprecision(6);
  slopes << "formulation,strategy,prep_slope,feedback_slope\n";
  for (const std::string& form : forms) {
    for (JacobianStrategy s : strategies) {
      std::vector<double> nx;
      std::vector<double> prep;
      std::vector<double> fb;
      for (const BenchRow& r : rows) {
        if (r.formulation != form || r.strategy != to_string(s)) continue;
        nx.push_back(r.nx);
        prep.push_back(r.prep_median_ns);
        fb.push_back(r.feedback_median_ns);
      }
      if (nx.size() < 2) continue;
      const double sp = loglog_slope(nx, prep);
      const double sf = loglog_slope(nx, fb);
      slopes << form << ',' << to_string(s) << ',' << sp << ',' << sf << '\n';
      log << form << ' ' << to_string(s) << ": prep slope " << sp << ", feedback slope " << sf << '\n';
    }
  }
  write_file(out / "bench_slopes.csv", slopes.str());
  write_file(out / "bench.meta.json", run_metadata(cfg, "bench").dump(2) + "\n");
  return 0;
}

int cmd_nmpc(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  fs::create_directories(out);
  for (const std::string& w : cfg.warnings) log << "warning: " << w << '\n';
  const OcpModel model = chain_of_masses(cfg.problem);
  std::vector<ClosedLoopTrace> traces;
  std::vector<std::string> names;
  nlohmann::json summary = nlohmann::json::array();
  int code = 0;
  for (const std::string& text : cfg.variants) {
    const Variant v = parse_variant(text);
    RtiOptions o;
    o.strategy = v.strategy;
    o.hessian = cfg.hessian;
    o.c1 = cfg.c1;
    o.hessian_floor = cfg.hessian_floor;
    o.lifted = v.lifted;
    o.collocation_nodes = cfg.collocation_nodes;
    RtiController ctrl(model, o);
    ctrl.initialize(make_initial_iterate(model));
    ClosedLoopTrace tr = simulate_closed_loop(ctrl, model.x0_hat, cfg.steps);
    write_file(out / ("nmpc_" + v.name + ".csv"), trace_to_csv(tr));
    double viol = 0.0;
    int failures = 0;
    for (const ClosedLoopSample& s : tr.samples) {
      viol = std::max(viol, s.violation);
      failures += s.qp_failed ? 1 : 0;
    }
    nlohmann::json e;
    e["variant"] = v.name;
    e["samples"] = tr.samples.size();
    e["aborted"] = tr.aborted;
    e["max_violation"] = viol;
    e["qp_failures"] = failures;
    e["final_distance_to_steady_state"] =
        tr.samples.empty() || model.x_ref.size() == 0
            ? 0.0
            : (tr.samples.back().x - model.x_ref).lpNorm<Eigen::Infinity>();
    if (!traces.empty()) e["max_relative_deviation_vs_" + names.front()] = max_relative_deviation(tr, traces.front());
    summary.push_back(e);
    log << v.name << ": " << tr.samples.size() << " samples, max violation " << viol << ", "
        << failures << " QP failures" << (tr.aborted ? ", aborted: " + tr.message : "") << '\n';
    if (tr.aborted) code = 3;
    names.push_back(v.name);
    traces.push_back(std::move(tr));
  }
  nlohmann::json meta = run_metadata(cfg, "nmpc");
  meta["summary"] = summary;
  write_file(out / "nmpc.meta.json", meta.dump(2) + "\n");
  return code;
}

}  // namespace blocktr1
