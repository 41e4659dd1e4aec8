#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dcsmc/errors.hpp"
#include "dcsmc/experiment.hpp"

using namespace dcsmc;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = "/tmp/" + name;
  std::ofstream out(path);
  out << content;
  return path;
}

std::string strip_volatile_columns(const std::string& csv) {
  // Drop the wall-clock column (second to last) from every row.
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    const auto second = line.rfind(',', last - 1);
    out << line.substr(0, second) << line.substr(last) << "\n";
  }
  return out.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config round trip") {
  ExperimentConfig config;
  config.model = "gsm";
  config.lattice_size = 8;
  config.lambda1 = 7.5;
  config.method = Method::dc_mix_ann;
  config.particles = 777;
  config.replicates = 3;
  config.master_seed = 99;
  config.scheme = "residual";
  config.workers = {"a:1", "b:2"};
  config.summary_nodes = {"root", "leaf1"};
  config.out_dir = "/tmp/dcsmc_cfg_rt";
  const std::string text = serialize_config(config);
  std::istringstream in(text);
  const ExperimentConfig parsed = parse_config(in);
  CHECK(serialize_config(parsed) == text);
}

TEST_CASE("config validation") {
  std::istringstream bad_method("[run]\nmethod = dc-quantum\n");
  CHECK_THROWS_AS(parse_config(bad_method), ConfigError);
  std::istringstream bad_threshold("[thresholds]\ncess = 1.5\n");
  CHECK_THROWS_AS(parse_config(bad_threshold), ConfigError);
  std::istringstream bad_line("[run]\nthis is not a key value pair\n");
  CHECK_THROWS_AS(parse_config(bad_line), ConfigError);
  CHECK_THROWS_AS(method_from_name("nope"), ConfigError);
  CHECK(method_from_name(method_name(Method::postorder)) == Method::postorder);
}

TEST_CASE("ingest: toy file builds the path tree") {
  const std::string path = write_temp(
      "dcsmc_toy.tsv",
      "county\tdistrict\tschool\tyear\ttrials\tsuccesses\n"
      "Kings\t13\tK001\t2006\t50\t20\n"
      "Kings\t13\tK001\t2007\t60\t31\n");
  IngestReport report;
  const auto model = ingest_dataset(path, &report);
  CHECK(report.counties == 1);
  CHECK(report.districts == 1);
  CHECK(report.schools == 1);
  CHECK(report.leaves == 2);
  CHECK(report.rows_used == 2);
  CHECK(report.total_trials == doctest::Approx(110.0));
  CHECK(model.leaf_count() == 2);
}

TEST_CASE("ingest: filters and malformed rows") {
  const std::string filtered = write_temp(
      "dcsmc_filters.tsv",
      "county\tdistrict\tschool\tyear\ttrials\tsuccesses\n"
      "Kings\t13\tK001\t2006\t50\t20\n"
      "Kings\t75\tX001\t2006\t50\t20\n"
      "Kings\t13\tK001\t2010\t50\t20\n"
      "Kings\t13\tK001\t2011\t50\t20\n");
  IngestReport report;
  ingest_dataset(filtered, &report);
  CHECK(report.rows_used == 1);
  CHECK(report.rows_dropped == 3);

  const std::string bad = write_temp(
      "dcsmc_bad.tsv",
      "county\tdistrict\tschool\tyear\ttrials\tsuccesses\n"
      "Kings\t13\tK001\t2006\t50\t70\n");
  CHECK_THROWS_AS(ingest_dataset(bad), MalformedRow);

  const std::string degenerate = write_temp(
      "dcsmc_degenerate.tsv",
      "county\tdistrict\tschool\tyear\ttrials\tsuccesses\n"
      "Kings\t13\tK001\t2006\t50\t0\n"
      "Kings\t13\tK001\t2007\t60\t60\n");
  CHECK_THROWS_AS(ingest_dataset(degenerate), ProprietyViolation);
}

TEST_CASE("ingest: full NY dataset counts" * doctest::skip(std::getenv("DCSMC_NY_TSV") == nullptr)) {
  IngestReport report;
  ingest_dataset(std::getenv("DCSMC_NY_TSV"), &report);
  CHECK(report.counties == 5);
  CHECK(report.districts == 32);
  CHECK(report.schools == 710);
  CHECK(report.total_trials == doctest::Approx(278399.0));
}

TEST_CASE("run_experiment: batch CSV is deterministic modulo wall clock") {
  ExperimentConfig config;
  config.model = "ising";
  config.lattice_size = 4;
  config.method = Method::dc_ann;
  config.particles = 128;
  config.replicates = 3;
  config.master_seed = 11;
  config.out_dir = "/tmp/dcsmc_run_a";
  const auto a = run_experiment(config);
  CHECK(a.rows.size() == 3);
  for (const auto& row : a.rows) {
    CHECK(row.error.empty());
    CHECK(row.has_log_z);
  }
  config.out_dir = "/tmp/dcsmc_run_b";
  const auto b = run_experiment(config);
  CHECK(strip_volatile_columns(slurp(a.csv_path)) == strip_volatile_columns(slurp(b.csv_path)));
  const std::string summary = slurp(a.summary_path);
  CHECK(summary.find("log_z") != std::string::npos);
  CHECK(summary.find("median") != std::string::npos);
}

TEST_CASE("run_experiment: hier methods on the bundled synthetic dataset") {
  ExperimentConfig config;
  config.model = "hier";
  config.dataset_path = std::string(TESTS_SOURCE_DIR) + "/../data/synthetic_hier.tsv";
  config.method = Method::dc_sir;
  config.particles = 128;
  config.replicates = 2;
  config.master_seed = 5;
  config.summary_nodes = {"root"};
  config.out_dir = "/tmp/dcsmc_hier_run";
  const auto a = run_experiment(config);
  for (const auto& row : a.rows) {
    CHECK(row.error.empty());
    CHECK(row.has_log_z);
    bool has_sigma = false;
    for (const auto& [name, value] : row.estimates) {
      has_sigma = has_sigma || name.find("sigma2") != std::string::npos;
    }
    CHECK(has_sigma);
  }
  config.method = Method::postorder;
  config.out_dir = "/tmp/dcsmc_hier_post";
  const auto b = run_experiment(config);
  for (const auto& row : b.rows) CHECK(row.error.empty());
}

TEST_CASE("run_experiment: per-replicate failures are recorded, not fatal") {
  ExperimentConfig config;
  config.model = "hier";
  config.dataset_path = "/tmp/definitely_missing.tsv";
  CHECK_THROWS_AS(run_experiment(config), ConfigError);  // model build fails up front

  config.model = "ising";
  config.lattice_size = 4;
  config.method = Method::dc_mix;  // mixture with a tiny budget fails per replicate
  config.particles = 64;
  config.mixture_budget = 2;
  config.replicates = 2;
  config.out_dir = "/tmp/dcsmc_fail_run";
  const auto result = run_experiment(config);
  CHECK(result.rows.size() == 2);
  for (const auto& row : result.rows) CHECK(!row.error.empty());
}

}  // TEST_SUITE
