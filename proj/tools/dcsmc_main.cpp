#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "dcsmc/experiment.hpp"

namespace {

void apply_overrides(dcsmc::ExperimentConfig& config, const std::string& model,
                     std::uint64_t seed, bool seed_set, const std::string& out,
                     const std::string& workers) {
  config.model = model;
  if (seed_set) config.master_seed = seed;
  if (!out.empty()) config.out_dir = out;
  if (!workers.empty()) {
    config.workers.clear();
    std::string cur;
    for (char c : workers + ",") {
      if (c == ',') {
        if (!cur.empty()) config.workers.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
  }
}

int run_model(const std::string& model, const std::string& config_path, std::uint64_t seed,
              bool seed_set, const std::string& out, const std::string& workers) {
  dcsmc::ExperimentConfig config;
  if (!config_path.empty()) config = dcsmc::parse_config_file(config_path);
  apply_overrides(config, model, seed, seed_set, out, workers);
  const auto result = dcsmc::run_experiment(config);
  long failures = 0;
  for (const auto& row : result.rows) failures += row.error.empty() ? 0 : 1;
  std::cout << "wrote " << result.csv_path << " and " << result.summary_path << " ("
            << result.rows.size() << " replicates, " << failures << " failed)\n";
  return failures == static_cast<long>(result.rows.size()) && !result.rows.empty() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divide-and-conquer sequential Monte Carlo experiment runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir, workers, bind_addr;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file");
    cmd->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--workers", workers, "distributed roster host:port,host:port,...");
  };

  auto* ising = app.add_subcommand("ising", "square-lattice Ising experiments");
  add_common(ising);
  auto* gsm = app.add_subcommand("gsm", "Gaussian squared-observation lattice experiments");
  add_common(gsm);
  auto* hier = app.add_subcommand("hier", "hierarchical binomial-logistic experiments");
  add_common(hier);

  auto* worker = app.add_subcommand("worker", "population-granularity worker listener");
  worker->add_option("--bind", bind_addr, "listen address host:port (or env DCSMC_BIND)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (worker->parsed()) {
      if (bind_addr.empty()) {
        const char* env = std::getenv("DCSMC_BIND");
        bind_addr = env ? env : "0.0.0.0:0";
      }
      dcsmc::WorkerServer server(bind_addr, dcsmc::job_factory);
      std::cout << "worker listening on " << server.address() << std::endl;
      server.wait();
      return 0;
    }
    if (ising->parsed()) return run_model("ising", config_path, seed, seed_set, out_dir, workers);
    if (gsm->parsed()) return run_model("gsm", config_path, seed, seed_set, out_dir, workers);
    if (hier->parsed()) return run_model("hier", config_path, seed, seed_set, out_dir, workers);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
