#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blocktr1/ocp_model.hpp"
#include "blocktr1/sqp.hpp"

namespace blocktr1 {

struct ExperimentConfig {
  ChainParameters problem;
  std::vector<JacobianStrategy> strategies{JacobianStrategy::exact};
  HessianType hessian = HessianType::gauss_newton;
  double tol = 1e-8;
  int max_iter = 100;
  double c1 = 1e-8;
  double hessian_floor = 1e-2;
  int reps = 20;
  int collocation_nodes = 2;
  std::vector<int> nm_sweep;
  /// Closed-loop samples for nmpc.
  int steps = 75;
  /// nmpc controller variants: strategy names, optionally prefixed by "lifted:".
  std::vector<std::string> variants{"exact", "block_tr1_dynamic"};
  unsigned seed = 0;
  /// Notes produced while parsing (deduplicated strategies and similar).
  std::vector<std::string> warnings;
  nlohmann::json source;
};

/// Unknown keys, empty strategy lists and malformed values raise ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);

/// Parses "2..8" or "2,3,5".
std::vector<int> parse_sweep(const std::string& text);

/// Sidecar metadata: config hash, revision string, seed and the resolved config.
nlohmann::json run_metadata(const ExperimentConfig& cfg, const std::string& command);

/// Return codes: 0 ok, 3 when a run diverged or a QP failed. Output files go to `out`.
int cmd_solve(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);
int cmd_bench(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);
int cmd_nmpc(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);

struct BenchRow {
  int n_m = 0;
  int nx = 0;
  std::string formulation;  // shooting | lifted
  std::string strategy;
  double prep_median_ns = 0.0;
  double feedback_median_ns = 0.0;
  int reps = 0;
  /// Scalar multiplications per stage update (lifted only, 0 otherwise).
  double mults_per_update = 0.0;
};

/// Times preparation and feedback over `reps` closed-loop RTI samples per n_m.
std::vector<BenchRow> run_bench(const ExperimentConfig& cfg, const std::vector<int>& sweep,
                                const std::vector<std::string>& formulations,
                                const std::vector<JacobianStrategy>& strategies);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

std::string bench_to_csv(const std::vector<BenchRow>& rows, bool include_timing = true);

}  // namespace blocktr1
