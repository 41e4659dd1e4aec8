#include "dcsmc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dcsmc/errors.hpp"
#include "dcsmc/stats.hpp"

namespace dcsmc {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::dc_sir: return "dc-sir";
    case Method::dc_mix: return "dc-mix";
    case Method::dc_ann: return "dc-ann";
    case Method::dc_mix_ann: return "dc-mix-ann";
    case Method::std_smc: return "std-smc";
    case Method::postorder: return "postorder";
    case Method::mh: return "mh";
    case Method::gibbs: return "gibbs";
  }
  return "dc-sir";
}

Method method_from_name(const std::string& name) {
  for (Method m : {Method::dc_sir, Method::dc_mix, Method::dc_ann, Method::dc_mix_ann,
                   Method::std_smc, Method::postorder, Method::mh, Method::gibbs}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

ResampleScheme scheme_from_name(const std::string& name) {
  if (name == "multinomial") return ResampleScheme::multinomial;
  if (name == "residual") return ResampleScheme::residual;
  if (name == "systematic") return ResampleScheme::systematic;
  throw ConfigError("unknown resampling scheme '" + name + "'");
}

DcConfig dc_config_for(const ExperimentConfig& config) {
  DcConfig dc;
  dc.scheme = scheme_from_name(config.scheme);
  dc.mixture = config.method == Method::dc_mix || config.method == Method::dc_mix_ann;
  dc.anneal = config.method == Method::dc_ann || config.method == Method::dc_mix_ann;
  dc.mixture_budget = config.mixture_budget;
  dc.annealing.cess_threshold = config.cess_threshold;
  dc.annealing.alpha_star_cess = config.alpha_star_cess;
  dc.annealing.resample_ess_fraction = config.ess_fraction;
  dc.annealing.sweeps_per_step = config.sweeps_per_step;
  return dc;
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig config;
  std::string line, section;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = lower(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = lower(trim(t.substr(0, eq)));
    const std::string value = trim(t.substr(eq + 1));
    try {
      if (key == "kind" || key == "model") config.model = value;
      else if (key == "size") config.lattice_size = std::stoi(value);
      else if (key == "beta") config.beta = std::stod(value);
      else if (key == "lambda1") config.lambda1 = std::stod(value);
      else if (key == "lambda2") config.lambda2 = std::stod(value);
      else if (key == "obs_sd") config.obs_sd = std::stod(value);
      else if (key == "grid") config.grid_path = value;
      else if (key == "synthetic_seed") config.synthetic_seed = std::stoull(value);
      else if (key == "dataset") config.dataset_path = value;
      else if (key == "method") config.method = method_from_name(value);
      else if (key == "particles") config.particles = std::stol(value);
      else if (key == "iterations") config.iterations = std::stol(value);
      else if (key == "burn_in") config.burn_in = std::stol(value);
      else if (key == "replicates") config.replicates = std::stoi(value);
      else if (key == "seed") config.master_seed = std::stoull(value);
      else if (key == "scheme") config.scheme = value;
      else if (key == "cess") config.cess_threshold = std::stod(value);
      else if (key == "alpha_star_cess") config.alpha_star_cess = std::stod(value);
      else if (key == "ess_fraction") config.ess_fraction = std::stod(value);
      else if (key == "kernel_sd") config.kernel_sd = std::stod(value);
      else if (key == "sweeps_per_step") config.sweeps_per_step = std::stoi(value);
      else if (key == "mixture_budget") config.mixture_budget = std::stoull(value);
      else if (key == "workers") {
        config.workers.clear();
        for (auto& w : split(value, ',')) {
          if (!trim(w).empty()) config.workers.push_back(trim(w));
        }
      } else if (key == "out") config.out_dir = value;
      else if (key == "summary_nodes") {
        config.summary_nodes.clear();
        for (auto& s : split(value, ',')) {
          if (!trim(s).empty()) config.summary_nodes.push_back(trim(s));
        }
      } else {
        throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(line_no) + ": bad value for " + key);
    }
  }
  if (config.replicates < 1) throw ConfigError("replicates must be at least 1");
  for (double thr : {config.cess_threshold, config.alpha_star_cess, config.ess_fraction}) {
    if (!(thr > 0.0 && thr <= 1.0)) throw ConfigError("thresholds must lie in (0, 1]");
  }
  return config;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in);
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "[model]\n";
  out << "kind = " << c.model << "\n";
  out << "size = " << c.lattice_size << "\n";
  out << "beta = " << fmt(c.beta) << "\n";
  out << "lambda1 = " << fmt(c.lambda1) << "\n";
  out << "lambda2 = " << fmt(c.lambda2) << "\n";
  out << "obs_sd = " << fmt(c.obs_sd) << "\n";
  if (!c.grid_path.empty()) out << "grid = " << c.grid_path << "\n";
  out << "synthetic_seed = " << c.synthetic_seed << "\n";
  if (!c.dataset_path.empty()) out << "dataset = " << c.dataset_path << "\n";
  out << "[run]\n";
  out << "method = " << method_name(c.method) << "\n";
  out << "particles = " << c.particles << "\n";
  out << "iterations = " << c.iterations << "\n";
  out << "burn_in = " << c.burn_in << "\n";
  out << "replicates = " << c.replicates << "\n";
  out << "seed = " << c.master_seed << "\n";
  out << "scheme = " << c.scheme << "\n";
  out << "[thresholds]\n";
  out << "cess = " << fmt(c.cess_threshold) << "\n";
  out << "alpha_star_cess = " << fmt(c.alpha_star_cess) << "\n";
  out << "ess_fraction = " << fmt(c.ess_fraction) << "\n";
  out << "kernel_sd = " << fmt(c.kernel_sd) << "\n";
  out << "sweeps_per_step = " << c.sweeps_per_step << "\n";
  out << "mixture_budget = " << c.mixture_budget << "\n";
  if (!c.workers.empty()) {
    out << "[distributed]\n";
    out << "workers = ";
    for (std::size_t i = 0; i < c.workers.size(); ++i) {
      out << (i ? "," : "") << c.workers[i];
    }
    out << "\n";
  }
  out << "[output]\n";
  out << "out = " << c.out_dir << "\n";
  if (!c.summary_nodes.empty()) {
    out << "summary_nodes = ";
    for (std::size_t i = 0; i < c.summary_nodes.size(); ++i) {
      out << (i ? "," : "") << c.summary_nodes[i];
    }
    out << "\n";
  }
  return out.str();
}

HierarchicalBinomial ingest_dataset(const std::string& path, IngestReport* report) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path);
  std::string header;
  if (!std::getline(in, header)) throw MalformedRow(1, "missing header row");
  const auto names = split(header, '\t');
  int col_county = -1, col_district = -1, col_school = -1, col_year = -1, col_trials = -1,
      col_successes = -1;
  for (int i = 0; i < static_cast<int>(names.size()); ++i) {
    const std::string n = lower(trim(names[i]));
    if (n.find("county") != std::string::npos || n.find("borough") != std::string::npos) {
      col_county = i;
    } else if (n.find("district") != std::string::npos) {
      col_district = i;
    } else if (n.find("school") != std::string::npos) {
      col_school = i;
    } else if (n.find("year") != std::string::npos) {
      col_year = i;
    } else if (n.find("trial") != std::string::npos || n.find("tested") != std::string::npos) {
      col_trials = i;
    } else if (n.find("success") != std::string::npos || n.find("level") != std::string::npos) {
      col_successes = i;
    }
  }
  for (int c : {col_county, col_district, col_school, col_year, col_trials, col_successes}) {
    if (c < 0) {
      throw MalformedRow(1, "header must name county, district, school, year, trials, successes");
    }
  }

  std::vector<HierRecord> rows;
  IngestReport rep;
  std::string line;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, '\t');
    const int max_col = std::max({col_county, col_district, col_school, col_year, col_trials,
                                  col_successes});
    if (static_cast<int>(fields.size()) <= max_col) {
      throw MalformedRow(line_no, "too few tab-separated fields");
    }
    HierRecord r;
    r.county = trim(fields[col_county]);
    r.district = trim(fields[col_district]);
    r.school = trim(fields[col_school]);
    try {
      r.year = std::stoi(trim(fields[col_year]));
      r.trials = std::stod(trim(fields[col_trials]));
      r.successes = std::stod(trim(fields[col_successes]));
    } catch (const std::exception&) {
      throw MalformedRow(line_no, "non-numeric year/trials/successes");
    }
    if (r.successes < 0 || r.successes > r.trials) {
      throw MalformedRow(line_no, "successes outside [0, trials]");
    }
    if (r.district == "75" || r.year == 2010 || r.year == 2011) {
      ++rep.rows_dropped;
      continue;
    }
    ++rep.rows_used;
    rep.total_trials += r.trials;
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ProprietyViolation("dataset has no usable rows");
  HierarchicalBinomial model = build_hier_model(rows);

  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const auto& node = model.nodes[i];
    if (static_cast<int>(i) == model.root) continue;
    const int parent = node.parent;
    if (parent == model.root) ++rep.counties;
    else if (model.nodes[parent].parent == model.root) ++rep.districts;
    else if (node.is_leaf()) ++rep.leaves;
    else ++rep.schools;
  }
  if (report) *report = rep;
  return model;
}

namespace {

struct BuiltModel {
  std::string kind;
  IsingLattice ising;
  GaussianSquaredLattice gsm;
  HierarchicalBinomial hier;
  LatticeTree lattice_tree;   // ising/gsm
  HierTree hier_tree;         // hier
  bool has_tree = false;
};

BuiltModel build_model(const ExperimentConfig& config, bool build_tree) {
  BuiltModel built;
  built.kind = config.model;
  if (config.model == "ising") {
    built.ising = {config.lattice_size, config.beta};
    if (build_tree) {
      const int m = config.lattice_size;
      built.lattice_tree = (m & (m - 1)) == 0 ? lattice_decompose(built.ising)
                                              : lattice_decompose_general(built.ising);
      built.has_tree = true;
    }
  } else if (config.model == "gsm") {
    if (!config.grid_path.empty()) {
      built.gsm.size = config.lattice_size;
      built.gsm.lambda1 = config.lambda1;
      built.gsm.lambda2 = config.lambda2;
      built.gsm.obs_sd = config.obs_sd;
      built.gsm.y = load_grid(config.grid_path,
                              static_cast<Eigen::Index>(config.lattice_size) *
                                  config.lattice_size);
    } else {
      built.gsm = make_synthetic_gsm(config.lattice_size, config.lambda1, config.lambda2,
                                     config.obs_sd, config.synthetic_seed);
    }
    if (build_tree) {
      built.lattice_tree = gsm_decompose(built.gsm, random_walk_kernel(config.kernel_sd));
      built.has_tree = true;
    }
  } else if (config.model == "hier") {
    if (config.dataset_path.empty()) throw ConfigError("hier model needs dataset = PATH");
    built.hier = ingest_dataset(config.dataset_path);
    if (build_tree) {
      built.hier_tree = hier_decompose(built.hier);
      built.has_tree = true;
    }
  } else {
    throw ConfigError("unknown model '" + config.model + "'");
  }
  return built;
}

std::string alpha_star_summary(const RunStats& stats) {
  std::ostringstream out;
  bool first = true;
  for (const auto& [depth, values] : stats.alpha_star_by_depth()) {
    double sum = 0.0;
    for (double v : values) sum += v;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "d%d:%.4f", depth, sum / static_cast<double>(values.size()));
    out << (first ? "" : ";") << buf;
    first = false;
  }
  return out.str();
}

void lattice_estimates(const BuiltModel& built, const ParticlePopulation& pop,
                       ReplicateRow& row) {
  const Eigen::VectorXd w = normalize_weights(pop.log_weights);
  double energy = 0.0;
  for (Eigen::Index i = 0; i < pop.size(); ++i) {
    energy += w[i] * built.lattice_tree.energy(pop.states.row(i));
  }
  row.estimates.emplace_back("energy", energy);
}

void hier_estimates(const BuiltModel& built, const ExperimentConfig& config,
                    const ParticlePopulation& pop, ReplicateRow& row) {
  const Eigen::VectorXd w = normalize_weights(pop.log_weights);
  for (const auto& name : config.summary_nodes) {
    int node_id = -1;
    for (std::size_t i = 0; i < built.hier.nodes.size(); ++i) {
      if (built.hier.nodes[i].name == name) {
        node_id = static_cast<int>(i);
        break;
      }
    }
    if (node_id < 0) continue;
    const int coord = built.hier_tree.coord_of_node[node_id];
    double mean = 0.0, second = 0.0;
    for (Eigen::Index i = 0; i < pop.size(); ++i) {
      const double v = pop.states(i, coord);
      mean += w[i] * v;
      second += w[i] * v * v;
    }
    const std::string kind = built.hier.nodes[node_id].is_leaf() ? "theta" : "sigma2";
    row.estimates.emplace_back(name + ":" + kind + ":mean", mean);
    row.estimates.emplace_back(name + ":" + kind + ":var", second - mean * mean);
  }
}

ReplicateRow run_replicate(const ExperimentConfig& config, const BuiltModel& built,
                           int replicate, std::uint64_t seed) {
  ReplicateRow row;
  row.method = method_name(config.method);
  row.particles = config.method == Method::mh || config.method == Method::gibbs
                      ? config.iterations
                      : config.particles;
  row.seed = seed;
  row.replicate = replicate;
  const auto started = std::chrono::steady_clock::now();
  const SeedPath root_seed(seed);
  const DcConfig dc = dc_config_for(config);
  RunStats stats;
  const double sites = built.kind == "hier"
                           ? static_cast<double>(built.hier_tree.root.state_dim)
                           : static_cast<double>(config.lattice_size) * config.lattice_size;

  switch (config.method) {
    case Method::dc_sir:
    case Method::dc_mix:
    case Method::dc_ann:
    case Method::dc_mix_ann: {
      const DecompositionNode& root =
          built.kind == "hier" ? built.hier_tree.root : built.lattice_tree.root;
      ParticlePopulation pop;
      if (!config.workers.empty()) {
        const auto result = run_distributed_sockets(
            config.workers, make_job_json(config, config.particles, seed));
        pop = std::move(result.root_pop);
        row.has_log_z = true;
        row.log_z = result.log_z;
      } else {
        auto [p, log_z] = dc_sir(root, config.particles, root_seed, dc, &stats);
        pop = std::move(p);
        row.has_log_z = true;
        row.log_z = log_z;
      }
      if (built.kind == "hier") {
        hier_estimates(built, config, pop, row);
      } else {
        lattice_estimates(built, pop, row);
      }
      row.mcmc_updates_per_site = static_cast<double>(stats.kernel_updates()) / sites;
      row.alpha_star_by_level = alpha_star_summary(stats);
      break;
    }
    case Method::std_smc: {
      const FullSpaceProblem problem =
          built.kind == "gsm" ? gsm_full_problem(built.gsm, config.kernel_sd)
                              : ising_full_problem(built.ising);
      const auto result = std_smc_run(problem, config.particles, config.cess_threshold,
                                      config.ess_fraction, root_seed,
                                      scheme_from_name(config.scheme));
      row.has_log_z = true;
      row.log_z = result.log_z;
      const Eigen::VectorXd w = normalize_weights(result.pop.log_weights);
      double energy = 0.0;
      for (Eigen::Index i = 0; i < result.pop.size(); ++i) {
        energy += w[i] * problem.energy(result.pop.states.row(i));
      }
      row.estimates.emplace_back("energy", energy);
      row.mcmc_updates_per_site = static_cast<double>(result.outcome.kernel_updates) / sites;
      break;
    }
    case Method::postorder: {
      if (built.kind != "hier") throw ConfigError("postorder runs on the hier model");
      auto [pop, log_z] = postorder_smc_run(built.hier_tree, config.particles, root_seed,
                                            scheme_from_name(config.scheme));
      row.has_log_z = true;
      row.log_z = log_z;
      hier_estimates(built, config, pop, row);
      break;
    }
    case Method::mh: {
      if (built.kind == "hier") throw ConfigError("use gibbs for the hier model");
      const FullSpaceProblem problem =
          built.kind == "gsm" ? gsm_full_problem(built.gsm, config.kernel_sd)
                              : ising_full_problem(built.ising);
      const auto result =
          mh_lattice_chain(problem, config.iterations, config.burn_in, root_seed);
      row.estimates.emplace_back("energy", result.diag.estimate);
      row.estimates.emplace_back("acceptance", result.diag.acceptance_rate);
      row.estimates.emplace_back("ess", result.diag.ess);
      row.mcmc_updates_per_site = static_cast<double>(config.iterations);
      break;
    }
    case Method::gibbs: {
      if (built.kind != "hier") throw ConfigError("gibbs runs on the hier model");
      const auto result = gibbs_hier_chain(built.hier_tree, config.iterations, config.burn_in,
                                           root_seed, 1.0);
      for (const auto& name : config.summary_nodes) {
        for (std::size_t i = 0; i < built.hier.nodes.size(); ++i) {
          if (built.hier.nodes[i].name != name) continue;
          const int coord = built.hier_tree.coord_of_node[i];
          const std::string kind = built.hier.nodes[i].is_leaf() ? "theta" : "sigma2";
          row.estimates.emplace_back(name + ":" + kind + ":mean",
                                     result.posterior_mean[coord]);
          row.estimates.emplace_back(name + ":" + kind + ":var", result.posterior_var[coord]);
        }
      }
      row.estimates.emplace_back("acceptance", result.diag.acceptance_rate);
      row.estimates.emplace_back("ess", result.diag.ess);
      row.mcmc_updates_per_site = static_cast<double>(config.iterations);
      break;
    }
  }
  row.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return row;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const BuiltModel built = build_model(config, true);
  ExperimentResult result;

  for (int r = 0; r < config.replicates; ++r) {
    const std::uint64_t seed = mix_combine(config.master_seed, static_cast<std::uint64_t>(r));
    ReplicateRow row;
    try {
      row = run_replicate(config, built, r, seed);
    } catch (const std::exception& e) {
      row.method = method_name(config.method);
      row.particles = config.particles;
      row.seed = seed;
      row.replicate = r;
      row.error = e.what();
    }
    result.rows.push_back(std::move(row));
  }

  // Column set: union of estimate names in replicate order.
  std::vector<std::string> estimate_columns;
  for (const auto& row : result.rows) {
    for (const auto& [name, value] : row.estimates) {
      if (std::find(estimate_columns.begin(), estimate_columns.end(), name) ==
          estimate_columns.end()) {
        estimate_columns.push_back(name);
      }
    }
  }

  std::filesystem::create_directories(config.out_dir);
  result.csv_path = config.out_dir + "/results.csv";
  result.summary_path = config.out_dir + "/summary.json";

  std::ofstream csv(result.csv_path);
  csv << "method,particles,seed,replicate,log_z";
  for (const auto& c : estimate_columns) csv << "," << c;
  csv << ",mcmc_updates_per_site,alpha_star_by_level,wall_clock_seconds,error\n";
  for (const auto& row : result.rows) {
    csv << row.method << "," << row.particles << "," << row.seed << "," << row.replicate << ",";
    if (row.has_log_z) csv << fmt(row.log_z);
    for (const auto& c : estimate_columns) {
      csv << ",";
      for (const auto& [name, value] : row.estimates) {
        if (name == c) {
          csv << fmt(value);
          break;
        }
      }
    }
    csv << "," << fmt(row.mcmc_updates_per_site) << "," << row.alpha_star_by_level << ","
        << fmt(row.seconds) << "," << row.error << "\n";
  }
  csv.close();

  nlohmann::json summary;
  summary["method"] = method_name(config.method);
  summary["model"] = config.model;
  summary["particles"] = config.particles;
  summary["replicates"] = config.replicates;
  std::vector<double> zs;
  for (const auto& row : result.rows) {
    if (row.has_log_z && row.error.empty()) zs.push_back(row.log_z);
  }
  if (!zs.empty()) {
    const Quartiles q = quartiles(zs);
    summary["log_z"] = {{"min", q.min},     {"q1", q.q1},   {"median", q.median},
                        {"q3", q.q3},       {"max", q.max}, {"mean", mean(zs)},
                        {"sd", zs.size() > 1 ? std_dev(zs) : 0.0}};
  }
  for (const auto& c : estimate_columns) {
    std::vector<double> vals;
    for (const auto& row : result.rows) {
      for (const auto& [name, value] : row.estimates) {
        if (name == c) vals.push_back(value);
      }
    }
    if (vals.empty()) continue;
    const Quartiles q = quartiles(vals);
    summary["estimates"][c] = {{"min", q.min},     {"q1", q.q1},   {"median", q.median},
                               {"q3", q.q3},       {"max", q.max}, {"mean", mean(vals)}};
  }
  std::ofstream js(result.summary_path);
  js << summary.dump(2) << "\n";
  return result;
}

std::string make_job_json(const ExperimentConfig& config, long particles, std::uint64_t seed) {
  nlohmann::json job;
  job["model"] = config.model;
  job["method"] = method_name(config.method);
  job["n"] = particles;
  job["seed"] = seed;
  job["scheme"] = config.scheme;
  job["cess"] = config.cess_threshold;
  job["alpha_star_cess"] = config.alpha_star_cess;
  job["ess_fraction"] = config.ess_fraction;
  job["sweeps_per_step"] = config.sweeps_per_step;
  job["mixture_budget"] = config.mixture_budget;
  job["kernel_sd"] = config.kernel_sd;
  if (config.model == "ising") {
    job["size"] = config.lattice_size;
    job["beta"] = config.beta;
  } else if (config.model == "gsm") {
    const BuiltModel built = build_model(config, false);
    job["size"] = config.lattice_size;
    job["lambda1"] = config.lambda1;
    job["lambda2"] = config.lambda2;
    job["obs_sd"] = config.obs_sd;
    job["y"] = std::vector<double>(built.gsm.y.data(), built.gsm.y.data() + built.gsm.y.size());
  } else if (config.model == "hier") {
    const BuiltModel built = build_model(config, false);
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& node : built.hier.nodes) {
      nodes.push_back({{"name", node.name},
                       {"parent", node.parent},
                       {"trials", node.trials},
                       {"successes", node.successes}});
    }
    job["nodes"] = nodes;
  } else {
    throw ConfigError("unknown model '" + config.model + "'");
  }
  return job.dump();
}

JobSpec job_factory(const std::string& job_json) {
  const auto job = nlohmann::json::parse(job_json);
  JobSpec spec;
  spec.n_particles = job.at("n").get<long>();
  spec.master_seed = job.at("seed").get<std::uint64_t>();

  ExperimentConfig config;
  config.model = job.at("model").get<std::string>();
  config.method = method_from_name(job.at("method").get<std::string>());
  config.scheme = job.at("scheme").get<std::string>();
  config.cess_threshold = job.at("cess").get<double>();
  config.alpha_star_cess = job.at("alpha_star_cess").get<double>();
  config.ess_fraction = job.at("ess_fraction").get<double>();
  config.sweeps_per_step = job.at("sweeps_per_step").get<int>();
  config.mixture_budget = job.at("mixture_budget").get<std::uint64_t>();
  config.kernel_sd = job.at("kernel_sd").get<double>();
  spec.config = dc_config_for(config);

  if (config.model == "ising") {
    IsingLattice lattice{job.at("size").get<int>(), job.at("beta").get<double>()};
    const int m = lattice.size;
    LatticeTree tree =
        (m & (m - 1)) == 0 ? lattice_decompose(lattice) : lattice_decompose_general(lattice);
    spec.tree = std::move(tree.root);
    spec.model_tag = kModelTagIsing;
  } else if (config.model == "gsm") {
    GaussianSquaredLattice model;
    model.size = job.at("size").get<int>();
    model.lambda1 = job.at("lambda1").get<double>();
    model.lambda2 = job.at("lambda2").get<double>();
    model.obs_sd = job.at("obs_sd").get<double>();
    const auto y = job.at("y").get<std::vector<double>>();
    model.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    LatticeTree tree = gsm_decompose(model, random_walk_kernel(config.kernel_sd));
    spec.tree = std::move(tree.root);
    spec.model_tag = kModelTagGsm;
  } else if (config.model == "hier") {
    HierarchicalBinomial model;
    for (const auto& entry : job.at("nodes")) {
      HierModelNode node;
      node.name = entry.at("name").get<std::string>();
      node.parent = entry.at("parent").get<int>();
      node.trials = entry.at("trials").get<double>();
      node.successes = entry.at("successes").get<double>();
      model.nodes.push_back(std::move(node));
    }
    for (std::size_t i = 0; i < model.nodes.size(); ++i) {
      if (model.nodes[i].parent >= 0) {
        model.nodes[model.nodes[i].parent].children.push_back(static_cast<int>(i));
      } else {
        model.root = static_cast<int>(i);
      }
    }
    HierTree tree = hier_decompose(model);
    spec.tree = std::move(tree.root);
    spec.model_tag = kModelTagHier;
  } else {
    throw ConfigError("job names unknown model '" + config.model + "'");
  }
  return spec;
}

}  // namespace dcsmc
