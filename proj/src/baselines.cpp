#include "dcsmc/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "dcsmc/errors.hpp"
#include "dcsmc/stats.hpp"

namespace dcsmc {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<const DecompositionNode*> linearize_chain(const DecompositionNode& root) {
  std::vector<const DecompositionNode*> order;
  const DecompositionNode* cur = &root;
  for (;;) {
    order.push_back(cur);
    if (cur->is_leaf()) break;
    if (cur->children.size() != 1) {
      throw MalformedTree(cur->id, "sir_run expects a unary chain");
    }
    cur = &cur->children[0];
  }
  std::reverse(order.begin(), order.end());
  return order;
}
}  // namespace

std::pair<ParticlePopulation, double> sir_run(const DecompositionNode& chain_root,
                                              Eigen::Index n, const SeedPath& root_seed,
                                              ResampleScheme scheme) {
  const auto order = linearize_chain(chain_root);
  // Leaf-first order; the seed path descends from the root by child index 0.
  std::vector<SeedPath> seeds(order.size(), root_seed);
  for (std::size_t k = order.size() - 1; k-- > 0;) seeds[k] = seeds[k + 1].child(0);

  ParticlePopulation pop;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const DecompositionNode& node = *order[k];
    const SeedPath& seed = seeds[k];
    if (k == 0) {
      pop = run_leaf(node, n, seed);
      continue;
    }
    const DecompositionNode& prev = *order[k - 1];
    const double base = fold_logz(pop);
    const auto idx =
        resample_indices(pop.log_weights, scheme, seed.stream(Stage::resample_child, 0));

    ParticlePopulation next;
    next.states.resize(n, node.state_dim);
    next.log_weights.resize(n);
    next.log_z_hat = base;
    const int prev_dim = prev.state_dim;
    for (Eigen::Index i = 0; i < n; ++i) {
      next.states.row(i).head(prev_dim) = pop.states.row(idx[i]);
      double log_q = 0.0;
      if (node.proposal) {
        auto rng = seed.stream(Stage::propose, static_cast<std::uint64_t>(i));
        auto row = next.states.row(i);
        node.proposal->sample(row.head(prev_dim), row.tail(node.incremental_dim), rng);
        log_q = node.proposal->log_density(row.head(prev_dim), row.tail(node.incremental_dim));
        if (log_q == kNegInf) {
          throw ProposalUnsupported("proposal density is zero at its own sample");
        }
      }
      double gap;
      if (node.coupling_log) {
        gap = node.coupling_log(next.states.row(i));
      } else {
        double g = node.log_gamma(next.states.row(i));
        g -= prev.log_gamma(next.states.row(i).segment(0, prev_dim));
        gap = g - log_q;
      }
      next.log_weights[i] = gap;  // corrections are zero on a chain
    }
    pop = std::move(next);
  }
  const double log_z = fold_logz(pop);
  return {std::move(pop), log_z};
}

StdSmcResult std_smc_run(const FullSpaceProblem& problem, Eigen::Index n,
                         double cess_threshold, double resample_ess_fraction,
                         const SeedPath& seed, ResampleScheme scheme) {
  StdSmcResult res;
  res.pop.states.resize(n, problem.dim);
  res.pop.log_weights.setZero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto rng = seed.stream(Stage::init, static_cast<std::uint64_t>(i));
    auto row = res.pop.states.row(i);
    problem.init_sample(row, rng);
  }
  res.outcome = anneal_loop(problem.ops, res.pop, 0.0, std::nullopt, cess_threshold,
                            resample_ess_fraction, 1, scheme, seed);
  res.log_z = fold_logz(res.pop);
  return res;
}

std::pair<ParticlePopulation, double> postorder_smc_run(const HierTree& tree, Eigen::Index n,
                                                        const SeedPath& root_seed,
                                                        ResampleScheme scheme) {
  const auto plan = postorder_plan(tree);
  ParticlePopulation pop;
  pop.states.resize(n, 0);
  pop.log_weights.setZero(n);
  pop.log_z_hat = 0.0;

  for (std::size_t k = 0; k < plan.size(); ++k) {
    const auto& step = plan[k];
    const SeedPath seed(root_seed.master_seed, step.dc_node->path);
    const Eigen::Index dim = pop.dim();

    ParticlePopulation next;
    next.states.resize(n, dim + 1);
    next.log_weights.resize(n);

    if (k == 0) {
      next.log_z_hat = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) next.states.row(i).head(dim).setZero();
    } else {
      next.log_z_hat = fold_logz(pop);
      const auto idx =
          resample_indices(pop.log_weights, scheme, seed.stream(Stage::resample_child, 0));
      for (Eigen::Index i = 0; i < n; ++i) {
        next.states.row(i).head(dim) = pop.states.row(idx[i]);
      }
    }

    for (Eigen::Index i = 0; i < n; ++i) {
      auto rng = seed.stream(Stage::propose, static_cast<std::uint64_t>(i));
      auto row = next.states.row(i);
      const auto& proposal = *step.dc_node->proposal;
      auto slice_children = row.segment(step.span_start, step.span_len - 1);
      proposal.sample(slice_children, row.tail(1), rng);
      const double log_q = proposal.log_density(slice_children, row.tail(1));
      if (log_q == kNegInf) {
        throw ProposalUnsupported("post-order proposal density vanished at its own draw");
      }
      if (step.leaf) {
        next.log_weights[i] = step.dc_node->log_gamma(row.tail(1)) - log_q;
      } else {
        next.log_weights[i] =
            step.dc_node->coupling_log(row.segment(step.span_start, step.span_len));
      }
    }
    pop = std::move(next);
  }
  const double log_z = fold_logz(pop);
  return {std::move(pop), log_z};
}

LatticeChainResult mh_lattice_chain(const FullSpaceProblem& problem, long iterations,
                                    long burn_in, const SeedPath& seed) {
  if (iterations <= burn_in) throw ConfigError("mh chain: iterations must exceed burn-in");
  const auto started = std::chrono::steady_clock::now();

  Eigen::RowVectorXd state(problem.dim);
  {
    auto rng = seed.stream(Stage::init);
    problem.init_sample(state, rng);
  }
  auto rng = seed.stream(Stage::chain);

  LatticeChainResult res;
  res.mean_field.setZero(problem.dim);
  res.positive_mass.setZero(problem.dim);
  std::vector<double> energy_series;
  energy_series.reserve(static_cast<std::size_t>(iterations - burn_in));
  long proposals = 0, accepts = 0;

  for (long it = 0; it < iterations; ++it) {
    auto [prop, acc] = problem.ops.kernel_sweep(state, 1.0, rng);
    proposals += prop;
    accepts += acc;
    if (it < burn_in) continue;
    energy_series.push_back(problem.energy ? problem.energy(state) : 0.0);
    res.mean_field += state;
    for (Eigen::Index s = 0; s < problem.dim; ++s) {
      if (state[s] > 0.0) res.positive_mass[s] += 1.0;
    }
  }
  const double retained = static_cast<double>(iterations - burn_in);
  res.mean_field /= retained;
  res.positive_mass /= retained;
  res.diag.retained = iterations - burn_in;
  res.diag.burn_in = burn_in;
  res.diag.acceptance_rate = static_cast<double>(accepts) / static_cast<double>(proposals);
  res.diag.estimate = mean(energy_series);
  res.diag.ess = autoregressive_ess(energy_series);
  res.diag.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return res;
}

GibbsResult gibbs_hier_chain(const HierTree& tree, long iterations, long burn_in,
                             const SeedPath& seed, double proposal_sd) {
  if (iterations <= burn_in) throw ConfigError("gibbs chain: iterations must exceed burn-in");
  const auto started = std::chrono::steady_clock::now();
  const Eigen::Index dim = tree.root.state_dim;
  const auto plan = postorder_plan(tree);

  Eigen::RowVectorXd state(dim);
  {
    // Initialize from the same proposals the SMC methods use.
    auto rng = seed.stream(Stage::init);
    for (std::size_t k = 0; k < plan.size(); ++k) {
      if (plan[k].leaf) {
        state[static_cast<Eigen::Index>(k)] = hier_leaf_proposal(plan[k].m, plan[k].M, rng).first;
      } else {
        state[static_cast<Eigen::Index>(k)] = rng.next_exponential();
      }
    }
  }
  auto rng = seed.stream(Stage::chain);
  double log_gamma = tree.root.log_gamma(state);

  const long retained_count = iterations - burn_in;
  Eigen::MatrixXd series(retained_count, dim);
  long proposals = 0, accepts = 0;
  std::vector<double> gamma_series;
  gamma_series.reserve(static_cast<std::size_t>(retained_count));

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(dim));
  for (Eigen::Index i = 0; i < dim; ++i) perm[static_cast<std::size_t>(i)] = i;

  for (long it = 0; it < iterations; ++it) {
    // Appendix-style scan: a fresh uniformly random permutation per sweep.
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.next_below(static_cast<std::uint32_t>(i))]);
    }
    for (Eigen::Index c : perm) {
      const double old = state[c];
      state[c] = old + proposal_sd * rng.next_gaussian();
      const double cand = tree.root.log_gamma(state);
      ++proposals;
      if (cand - log_gamma >= 0.0 || rng.next_uniform() < std::exp(cand - log_gamma)) {
        log_gamma = cand;
        ++accepts;
      } else {
        state[c] = old;
      }
    }
    if (it < burn_in) continue;
    series.row(it - burn_in) = state;
    gamma_series.push_back(log_gamma);
  }

  GibbsResult res;
  res.posterior_mean = series.colwise().mean().transpose();
  res.posterior_var = ((series.rowwise() - res.posterior_mean.transpose())
                           .array()
                           .square()
                           .colwise()
                           .sum() /
                       static_cast<double>(retained_count - 1))
                          .matrix()
                          .transpose();
  res.ess_per_param.resize(dim);
  for (Eigen::Index c = 0; c < dim; ++c) {
    std::vector<double> col(series.col(c).data(), series.col(c).data() + retained_count);
    res.ess_per_param[c] = autoregressive_ess(col);
  }
  res.diag.retained = retained_count;
  res.diag.burn_in = burn_in;
  res.diag.acceptance_rate = static_cast<double>(accepts) / static_cast<double>(proposals);
  res.diag.estimate = mean(gamma_series);
  res.diag.ess = autoregressive_ess(gamma_series);
  res.diag.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return res;
}

}  // namespace dcsmc
