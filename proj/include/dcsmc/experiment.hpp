#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dcsmc/baselines.hpp"
#include "dcsmc/distributed.hpp"
#include "dcsmc/models/hierarchical.hpp"
#include "dcsmc/models/lattice.hpp"

namespace dcsmc {

enum class Method { dc_sir, dc_mix, dc_ann, dc_mix_ann, std_smc, postorder, mh, gibbs };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct ExperimentConfig {
  // [model]
  std::string model = "ising";  // ising | gsm | hier
  int lattice_size = 4;
  double beta = 0.4407;
  double lambda1 = 10.0;
  double lambda2 = 0.01;
  double obs_sd = 0.05;
  std::string grid_path;           // gsm observations; empty draws a synthetic field
  std::uint64_t synthetic_seed = 1;
  std::string dataset_path;        // hier TSV

  // [run]
  Method method = Method::dc_sir;
  long particles = 256;
  long iterations = 16384;  // chain methods
  long burn_in = 1024;
  int replicates = 1;
  std::uint64_t master_seed = 1;
  std::string scheme = "systematic";

  // [thresholds]
  double cess_threshold = 0.995;
  double alpha_star_cess = 0.95;
  double ess_fraction = 0.5;
  double kernel_sd = 0.132;
  int sweeps_per_step = 1;
  std::uint64_t mixture_budget = 10'000'000;

  // [distributed]
  std::vector<std::string> workers;

  // [output]
  std::string out_dir = ".";
  std::vector<std::string> summary_nodes;  // hier node names to summarize
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

ResampleScheme scheme_from_name(const std::string& name);
DcConfig dc_config_for(const ExperimentConfig& config);

struct IngestReport {
  int counties = 0, districts = 0, schools = 0, leaves = 0;
  double total_trials = 0.0;
  long rows_used = 0, rows_dropped = 0;
};

/// Tab-separated file with a header naming county/district/school/year/
/// trials/successes columns; drops School District 75 and years 2010-2011.
HierarchicalBinomial ingest_dataset(const std::string& path, IngestReport* report = nullptr);

struct ReplicateRow {
  std::string method;
  long particles = 0;
  std::uint64_t seed = 0;
  int replicate = 0;
  bool has_log_z = false;
  double log_z = 0.0;
  std::vector<std::pair<std::string, double>> estimates;
  double mcmc_updates_per_site = 0.0;
  std::string alpha_star_by_level;
  double seconds = 0.0;
  std::string error;
};

struct ExperimentResult {
  std::vector<ReplicateRow> rows;
  std::string csv_path;
  std::string summary_path;
};

/// One CSV row per replicate plus a JSON summary with box-plot statistics;
/// per-replicate failures are recorded without aborting the batch.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Distributed plumbing: the job payload a coordinator sends, and the factory
/// workers use to rebuild the identical computation.
std::string make_job_json(const ExperimentConfig& config, long particles, std::uint64_t seed);
JobSpec job_factory(const std::string& job_json);

}  // namespace dcsmc
