#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#include "blocktr1/errors.hpp"
#include "blocktr1/experiment.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-wise TR1 inexact SQP experiments on the chain of masses"};
  app.require_subcommand(1);

  std::string config;
  std::string out = "out";
  std::string sweep;
  int reps = -1;
  std::string variants;

  auto* solve = app.add_subcommand("solve", "Run each configured strategy to convergence");
  solve->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  solve->add_option("--out", out, "Output directory");

  auto* bench = app.add_subcommand("bench", "Time preparation and feedback over an n_m sweep");
  bench->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  bench->add_option("--nm-sweep", sweep, "n_m values, e.g. 2..8 or 2,4,6");
  bench->add_option("--reps", reps, "Timed samples per configuration")->check(CLI::PositiveNumber);
  bench->add_option("--out", out, "Output directory");

  auto* nmpc = app.add_subcommand("nmpc", "Closed-loop RTI simulation per controller variant");
  nmpc->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  nmpc->add_option("--variants", variants, "Comma-separated strategies, prefix lifted: for collocation");
  nmpc->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  if (const char* threads = std::getenv("BLOCKTR1_THREADS"); threads && std::string(threads) != "1") {
    std::cerr << "note: BLOCKTR1_THREADS=" << threads << " ignored, runs are single-threaded\n";
  }

  try {
    blocktr1::ExperimentConfig cfg = blocktr1::load_experiment_config(config);
    if (*solve) return blocktr1::cmd_solve(cfg, out, std::cout);
    if (*bench) {
      if (!sweep.empty()) cfg.nm_sweep = blocktr1::parse_sweep(sweep);
      if (reps > 0) cfg.reps = reps;
      return blocktr1::cmd_bench(cfg, out, std::cout);
    }
    if (!variants.empty()) {
      nlohmann::json j = cfg.source;
      std::vector<std::string> list;
      std::stringstream ss(variants);
      std::string item;
      while (std::getline(ss, item, ',')) list.push_back(item);
      j["variants"] = list;
      cfg = blocktr1::experiment_config_from_json(j);
    }
    return blocktr1::cmd_nmpc(cfg, out, std::cout);
  } catch (const blocktr1::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const blocktr1::DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const blocktr1::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
}
