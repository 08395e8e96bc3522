#include <iostream>

#include <CLI11.hpp>

#include "cli.hpp"

int main(int argc, char** argv) {
  namespace cli = greylag::cli;
  CLI::App app{"greylag: modular MCMC for distributional regression"};
  app.require_subcommand(1);

  cli::RunRequest run;
  std::string config, data, out, scheme;
  int chains = 0, threads = 0;
  std::uint64_t seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Sample a model and write chains and diagnostics");
  run_cmd->add_option("--config", config, "Experiment config (JSON)")->required();
  auto* data_opt = run_cmd->add_option("--data", data, "Data CSV with a header row");
  auto* out_opt = run_cmd->add_option("--out", out, "Output directory");
  auto* chains_opt = run_cmd->add_option("--chains", chains, "Number of chains");
  auto* seed_opt = run_cmd->add_option("--seed", seed, "Root seed");
  auto* scheme_opt = run_cmd->add_option("--scheme", scheme, "iwls-gibbs, nuts-gibbs, nuts1, nuts2 or hmc2");
  auto* threads_opt = run_cmd->add_option("--threads", threads, "Worker threads (0: GREYLAG_THREADS or all)");

  std::string sim_config, sim_out;
  auto* sim_cmd = app.add_subcommand("simulate", "Write simulated x,y data");
  sim_cmd->add_option("--config", sim_config, "Experiment config with a simulation block")->required();
  sim_cmd->add_option("--out", sim_out, "Output CSV")->required();

  std::string graph_config, graph_out;
  auto* graph_cmd = app.add_subcommand("graph", "Write the model graph in DOT format");
  graph_cmd->add_option("--config", graph_config, "Experiment config")->required();
  graph_cmd->add_option("--out", graph_out, "Output DOT file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitConfig;
  }

  if (*run_cmd) {
    run.config = config;
    if (*data_opt) run.data = data;
    if (*out_opt) run.out = out;
    if (*chains_opt) run.chains = chains;
    if (*seed_opt) run.seed = seed;
    if (*scheme_opt) run.scheme = scheme;
    if (*threads_opt) run.threads = threads;
    return cli::run(run, std::cout, std::cerr);
  }
  if (*sim_cmd) return cli::simulate_command(sim_config, sim_out, std::cerr);
  return cli::graph_command(graph_config, graph_out, std::cerr);
}
