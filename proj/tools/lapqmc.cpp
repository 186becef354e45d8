#include "lapqmc/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Overrides {
  std::string config;
  std::string n_grid;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "configuration file (key = value with [section] headers)");
  sub->add_option("--n-grid", o.n_grid, "comma-separated n values, overrides the config");
  sub->add_option("--seed", o.seed, "random seed");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--threads", o.threads, "worker thread cap");
}

lapqmc::ExperimentConfig build_config(const std::string& experiment, const Overrides& o) {
  lapqmc::ExperimentConfig cfg;
  cfg.generating_vector = LAPQMC_DEFAULT_LATTICE;
  if (!o.config.empty()) cfg = lapqmc::load_config(o.config, cfg);
  cfg.experiment = experiment;
  if (!o.n_grid.empty()) cfg.n_grid = lapqmc::parse_n_grid(o.n_grid);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output = o.out;
  if (o.threads) cfg.threads = std::max(1u, *o.threads);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplace-preconditioned importance sampling and QMC experiments"};
  app.require_subcommand(1);
  Overrides o;
  for (const char* name : {"hellinger", "is-sweep", "qmc-sweep", "bvm-demo", "singular-demo"}) {
    add_common(app.add_subcommand(name), o);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    const auto* sub = app.get_subcommands().front();
    const auto cfg = build_config(sub->get_name(), o);
    std::cout << lapqmc::run_experiment(cfg);
    return 0;
  } catch (const lapqmc::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const lapqmc::Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  }
}
