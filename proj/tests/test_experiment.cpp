#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blocktr1/errors.hpp"
#include "blocktr1/experiment.hpp"

using namespace blocktr1;
namespace fs = std::filesystem;

namespace {

nlohmann::json small_problem() {
  ChainParameters p;
  p.n_m = 3;
  p.N = 10;
  p.T = 2.0;
  return chain_parameters_to_json(p);
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("blocktr1_test_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(ExperimentConfig, Defaults) {
  const ExperimentConfig c = experiment_config_from_json({{"problem", small_problem()}});
  EXPECT_EQ(c.strategies, std::vector<JacobianStrategy>{JacobianStrategy::exact});
  EXPECT_EQ(c.reps, 20);
  EXPECT_EQ(c.problem.n_m, 3);
}

TEST(ExperimentConfig, SchemaErrors) {
  EXPECT_THROW(experiment_config_from_json(nlohmann::json::object()), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"problem", small_problem()}, {"strategies", nlohmann::json::array()}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"problem", small_problem()}, {"colour", 1}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"problem", small_problem()}, {"strategies", {"newton"}}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"problem", small_problem()}, {"tol", -1.0}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"problem", small_problem()}, {"reps", "many"}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"problem", small_problem()}, {"hessian_floor", -1.0}}), ConfigError);
  EXPECT_EQ(experiment_config_from_json({{"problem", small_problem()}, {"hessian_floor", 0.5}}).hessian_floor, 0.5);
}

TEST(ExperimentConfig, DuplicateStrategiesWarn) {
  const ExperimentConfig c = experiment_config_from_json(
      {{"problem", small_problem()}, {"strategies", {"exact", "block_tr1_dynamic", "exact"}}});
  EXPECT_EQ(c.strategies.size(), 2u);
  ASSERT_EQ(c.warnings.size(), 1u);
}

TEST(ExperimentConfig, SweepParsing) {
  EXPECT_EQ(parse_sweep("2..5"), (std::vector<int>{2, 3, 4, 5}));
  EXPECT_EQ(parse_sweep("2,3,7"), (std::vector<int>{2, 3, 7}));
  EXPECT_THROW(parse_sweep("5..2"), ConfigError);
  EXPECT_THROW(parse_sweep("a,b"), ConfigError);
}

TEST(ExperimentConfig, MetadataHashIsStable) {
  const ExperimentConfig c = experiment_config_from_json({{"problem", small_problem()}, {"seed", 7}});
  const nlohmann::json a = run_metadata(c, "solve");
  const nlohmann::json b = run_metadata(c, "solve");
  EXPECT_EQ(a.at("config_hash"), b.at("config_hash"));
  EXPECT_EQ(a.at("seed"), 7);
  EXPECT_TRUE(a.contains("revision"));
}

TEST(Commands, SolveWritesSchemaStableCsv) {
  const ExperimentConfig c = experiment_config_from_json(
      {{"problem", small_problem()}, {"strategies", {"exact", "block_tr1_dynamic"}}, {"tol", 1e-8}});
  const fs::path d1 = fresh_dir("solve1");
  const fs::path d2 = fresh_dir("solve2");
  std::ostringstream log;
  ASSERT_EQ(cmd_solve(c, d1, log), 0);
  ASSERT_EQ(cmd_solve(c, d2, log), 0);
  const std::string csv = read_file(d1 / "solve_exact.csv");
  EXPECT_EQ(first_line(csv), "iter,kkt_inf_norm,step_norm,proj_jac_err,n_skipped,active_set_size,strategy");
  EXPECT_EQ(csv, read_file(d2 / "solve_exact.csv"));
  EXPECT_TRUE(fs::exists(d1 / "solve_block_tr1_dynamic.csv"));
  EXPECT_TRUE(fs::exists(d1 / "solve.meta.json"));
  std::istringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  double last_kkt = 1.0;
  while (std::getline(rows, line)) {
    std::stringstream cells(line);
    std::string iter;
    std::string kkt;
    std::getline(cells, iter, ',');
    std::getline(cells, kkt, ',');
    last_kkt = std::stod(kkt);
  }
  EXPECT_LE(last_kkt, 1e-8);
}

TEST(Commands, NmpcWritesTraceAndCreatesDirectory) {
  ChainParameters p;
  p.n_m = 3;
  p.N = 10;
  p.T = 2.0;
  const ExperimentConfig c = experiment_config_from_json(
      {{"problem", chain_parameters_to_json(p)}, {"steps", 4}, {"variants", {"exact"}}});
  const fs::path d = fresh_dir("nmpc") / "nested";
  std::ostringstream log;
  ASSERT_EQ(cmd_nmpc(c, d, log), 0);
  const std::string csv = read_file(d / "nmpc_exact.csv");
  EXPECT_EQ(first_line(csv).substr(0, 5), "t,x0,");
  EXPECT_TRUE(fs::exists(d / "nmpc.meta.json"));
}

TEST(Bench, SlopeAndCsv) {
  EXPECT_NEAR(loglog_slope({1, 2, 4, 8}, {3, 12, 48, 192}), 2.0, 1e-12);
  BenchRow r;
  r.n_m = 2;
  r.nx = 6;
  r.formulation = "lifted";
  r.strategy = "exact";
  r.prep_median_ns = 10;
  const std::string csv = bench_to_csv({r}, false);
  EXPECT_EQ(first_line(csv), "n_m,nx,formulation,strategy,prep_median_ns,feedback_median_ns,reps,mults_per_update");
  EXPECT_NE(csv.find("2,6,lifted,exact,0,0,"), std::string::npos);
}
