#include "dcsmc/tree.hpp"

#include <cmath>
#include <future>
#include <limits>

#include "dcsmc/annealing.hpp"
#include "dcsmc/errors.hpp"

namespace dcsmc {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

int DecompositionNode::child_offset(std::size_t c) const {
  int off = 0;
  for (std::size_t i = 0; i < c; ++i) off += children[i].state_dim;
  return off;
}

namespace {

void index_rec(DecompositionNode& node, int& counter, std::vector<std::uint32_t>& path) {
  node.id = counter++;
  node.path = path;
  for (std::size_t c = 0; c < node.children.size(); ++c) {
    path.push_back(static_cast<std::uint32_t>(c));
    index_rec(node.children[c], counter, path);
    path.pop_back();
  }
}

void validate_rec(const DecompositionNode& node, int depth, ValidationReport& report) {
  report.node_count += 1;
  report.depth = std::max(report.depth, depth);
  if (node.is_leaf() && !node.proposal) {
    throw MalformedTree(node.id, "leaf without a proposal");
  }
  if (!node.log_gamma) throw MalformedTree(node.id, "missing log_gamma evaluator");
  int child_sum = 0;
  for (const auto& c : node.children) child_sum += c.state_dim;
  const int incr = node.proposal ? node.incremental_dim : 0;
  if (node.proposal && node.incremental_dim <= 0) {
    throw MalformedTree(node.id, "proposal present but incremental dimension is 0");
  }
  if (node.state_dim != child_sum + incr) {
    throw MalformedTree(node.id, "state dimension does not equal children plus increment");
  }
  for (const auto& c : node.children) validate_rec(c, depth + 1, report);
}

}  // namespace

void index_tree(DecompositionNode& root) {
  int counter = 0;
  std::vector<std::uint32_t> path;
  index_rec(root, counter, path);
}

ValidationReport validate_tree(const DecompositionNode& root) {
  ValidationReport report;
  validate_rec(root, 1, report);

  // Dimension bookkeeping on sampled states: a two-particle probe exercises
  // every proposal and gamma evaluator once.
  SeedPath probe_seed(0x9e3779b97f4a7c15ULL);
  DcConfig cfg;
  auto [pop, logz] = dc_sir(root, 2, probe_seed, cfg);
  if (pop.dim() != root.state_dim) {
    throw MalformedTree(root.id, "sampled state dimension mismatch");
  }
  if (!std::isfinite(logz)) {
    throw MalformedTree(root.id, "probe run produced a non-finite normalizer");
  }
  return report;
}

double bridge_gap(const DecompositionNode& node, ConstStateRef state) {
  if (node.coupling_log) return node.coupling_log(state);
  double gap = node.log_gamma(state);
  int off = 0;
  for (const auto& c : node.children) {
    gap -= c.log_gamma(state.segment(off, c.state_dim));
    off += c.state_dim;
  }
  if (node.proposal) {
    gap -= node.proposal->log_density(state.head(off), state.tail(node.incremental_dim));
  }
  return gap;
}

MergeOutcome merge_basic(const DecompositionNode& node,
                         const std::vector<ParticlePopulation>& child_pops,
                         ResampleScheme scheme, const SeedPath& seed,
                         double adaptive_child_ess) {
  if (child_pops.size() != node.children.size()) {
    throw DimensionMismatch("merge_basic: one population per child required");
  }
  const Eigen::Index n = child_pops.front().size();
  for (const auto& p : child_pops) {
    if (p.size() != n) throw DimensionMismatch("merge_basic: child populations differ in N");
  }
  MergeOutcome out;
  out.tuples.assign(n, MergedTuple{});
  for (auto& t : out.tuples) t.child_indices.resize(child_pops.size());

  double base = 0.0;
  for (std::size_t c = 0; c < child_pops.size(); ++c) {
    const auto& pop = child_pops[c];
    const bool keep_weights =
        adaptive_child_ess > 0.0 &&
        ess(pop.log_weights) >= adaptive_child_ess * static_cast<double>(n);
    if (keep_weights) {
      base += pop.log_z_hat;
      for (Eigen::Index i = 0; i < n; ++i) {
        out.tuples[i].child_indices[c] = i;
        out.tuples[i].carried_log_weight += pop.log_weights[i];
      }
    } else {
      base += fold_logz(pop);
      auto idx = resample_indices(pop.log_weights, scheme,
                                  seed.stream(Stage::resample_child, c));
      for (Eigen::Index i = 0; i < n; ++i) out.tuples[i].child_indices[c] = idx[i];
    }
  }
  out.log_z_base = base;
  return out;
}

ParticlePopulation propose_and_weight(const DecompositionNode& node,
                                      const std::vector<ParticlePopulation>& child_pops,
                                      const MergeOutcome& merge, const SeedPath& seed,
                                      WeightMode mode) {
  const Eigen::Index n = static_cast<Eigen::Index>(merge.tuples.size());
  const int child_total = node.state_dim - (node.proposal ? node.incremental_dim : 0);

  ParticlePopulation pop;
  pop.states.resize(n, node.state_dim);
  pop.log_weights.resize(n);
  pop.log_z_hat = merge.log_z_base;

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tuple = merge.tuples[i];
    if (tuple.child_indices.size() != child_pops.size()) {
      throw DimensionMismatch("propose_and_weight: tuple arity does not match node");
    }
    int off = 0;
    for (std::size_t c = 0; c < child_pops.size(); ++c) {
      const int d = node.children[c].state_dim;
      pop.states.row(i).segment(off, d) = child_pops[c].states.row(tuple.child_indices[c]);
      off += d;
    }
    double log_q = 0.0;
    if (node.proposal) {
      auto rng = seed.stream(Stage::propose, static_cast<std::uint64_t>(i));
      auto row = pop.states.row(i);
      node.proposal->sample(row.head(child_total), row.tail(node.incremental_dim), rng);
      log_q = node.proposal->log_density(row.head(child_total), row.tail(node.incremental_dim));
      if (log_q == kNegInf) {
        throw ProposalUnsupported("proposal density is zero at its own sample");
      }
    }
    if (mode == WeightMode::deferred) {
      pop.log_weights[i] = tuple.carried_log_weight;
    } else {
      double gap;
      if (node.coupling_log) {
        gap = node.coupling_log(pop.states.row(i));
      } else {
        double g = node.log_gamma(pop.states.row(i));
        int o = 0;
        for (const auto& c : node.children) {
          g -= c.log_gamma(pop.states.row(i).segment(o, c.state_dim));
          o += c.state_dim;
        }
        gap = g - log_q;
      }
      pop.log_weights[i] = gap + tuple.log_correction + tuple.carried_log_weight;
    }
  }

  bool any_finite = false;
  for (Eigen::Index i = 0; i < n; ++i) any_finite = any_finite || pop.log_weights[i] > kNegInf;
  if (!any_finite) throw AllWeightsZero("all merged particle weights vanished");
  return pop;
}

void RunStats::add_kernel_updates(long long n) {
  std::lock_guard<std::mutex> lock(mu_);
  kernel_updates_ += n;
}

void RunStats::add_alpha_star(int depth, double value) {
  std::lock_guard<std::mutex> lock(mu_);
  alpha_star_[depth].push_back(value);
}

long long RunStats::kernel_updates() const {
  std::lock_guard<std::mutex> lock(mu_);
  return kernel_updates_;
}

std::map<int, std::vector<double>> RunStats::alpha_star_by_depth() const {
  std::lock_guard<std::mutex> lock(mu_);
  return alpha_star_;
}

ParticlePopulation run_leaf(const DecompositionNode& node, Eigen::Index n_particles,
                            const SeedPath& node_seed) {
  ParticlePopulation pop;
  pop.states.resize(n_particles, node.state_dim);
  pop.log_weights.resize(n_particles);
  for (Eigen::Index i = 0; i < n_particles; ++i) {
    auto rng = node_seed.stream(Stage::propose, static_cast<std::uint64_t>(i));
    auto row = pop.states.row(i);
    node.proposal->sample(row.head(0), row, rng);
    const double log_q = node.proposal->log_density(row.head(0), row);
    if (log_q == kNegInf) {
      throw ProposalUnsupported("leaf proposal density is zero at its own sample");
    }
    pop.log_weights[i] = node.log_gamma(row) - log_q;
  }
  bool any_finite = false;
  for (Eigen::Index i = 0; i < n_particles; ++i) {
    any_finite = any_finite || pop.log_weights[i] > kNegInf;
  }
  if (!any_finite) throw AllWeightsZero("all leaf weights vanished");
  return pop;
}

ParticlePopulation finish_internal_node(const DecompositionNode& node,
                                        const std::vector<ParticlePopulation>& child_pops,
                                        const SeedPath& node_seed, const DcConfig& config,
                                        RunStats* stats) {
  MergeOutcome merge;
  if (config.mixture) {
    if (!node.merge_target && !node.pairwise_coupling) {
      throw MalformedTree(node.id, "mixture merge requires a merge target");
    }
    double alpha_star = 1.0;
    if (config.anneal) {
      alpha_star = config.annealing.adapt_alpha_star
                       ? adapt_alpha_star(node, child_pops, config.annealing.alpha_star_cess,
                                          config.mixture_budget)
                       : config.annealing.fixed_alpha_star;
      // The geometric path from the tempered merge target coincides with the
      // product-measure bridge only on empty-increment nodes.
      if (node.proposal && alpha_star > 0.0 && alpha_star < 1.0) {
        throw ConfigError("node " + std::to_string(node.id) +
                          ": mixture warm-start needs an empty incremental space");
      }
    }
    merge = mixture_merge(node, child_pops, alpha_star, node_seed, config.mixture_budget);
    if (stats) stats->add_alpha_star(static_cast<int>(node.path.size()), merge.alpha_star);
  } else {
    const double adaptive =
        config.resample_children_adaptively ? config.child_ess_fraction : 0.0;
    merge = merge_basic(node, child_pops, config.scheme, node_seed, adaptive);
  }

  if (!config.anneal) {
    return propose_and_weight(node, child_pops, merge, node_seed, WeightMode::immediate);
  }

  ParticlePopulation pop =
      propose_and_weight(node, child_pops, merge, node_seed, WeightMode::deferred);
  AnnealOutcome outcome;
  pop = run_annealing(node, std::move(pop), merge.alpha_star, config.annealing, config.scheme,
                      node_seed, &outcome);
  if (stats) stats->add_kernel_updates(outcome.kernel_updates);
  return pop;
}

namespace {

ParticlePopulation evaluate_subtree(const DecompositionNode& node, Eigen::Index n,
                                    const SeedPath& node_seed, const DcConfig& cfg,
                                    RunStats* stats, int depth);

// Iterative post-order evaluation: lattice trees reach thousands of nodes, so
// the recursion is an explicit work list rather than the call stack.
ParticlePopulation evaluate_worklist(const DecompositionNode& root, Eigen::Index n,
                                     const SeedPath& root_seed, const DcConfig& cfg,
                                     RunStats* stats) {
  struct Frame {
    const DecompositionNode* node;
    SeedPath seed;
    std::size_t next_child = 0;
    std::vector<ParticlePopulation> child_pops;
  };
  std::vector<Frame> stack;
  stack.push_back({&root, root_seed, 0, {}});
  ParticlePopulation result;

  while (!stack.empty()) {
    Frame& frame = stack.back();
    const DecompositionNode& node = *frame.node;
    if (frame.next_child < node.children.size()) {
      const std::size_t c = frame.next_child++;
      stack.push_back(
          {&node.children[c], frame.seed.child(static_cast<std::uint32_t>(c)), 0, {}});
      continue;
    }
    ParticlePopulation pop;
    try {
      pop = node.is_leaf()
                ? run_leaf(node, n, frame.seed)
                : finish_internal_node(node, frame.child_pops, frame.seed, cfg, stats);
    } catch (const AllWeightsZero& e) {
      throw AllWeightsZero("node " + std::to_string(node.id) + ": " + e.what());
    }
    stack.pop_back();
    if (stack.empty()) {
      result = std::move(pop);
    } else {
      stack.back().child_pops.push_back(std::move(pop));
    }
  }
  return result;
}

ParticlePopulation evaluate_subtree(const DecompositionNode& node, Eigen::Index n,
                                    const SeedPath& node_seed, const DcConfig& cfg,
                                    RunStats* stats, int depth) {
  if (depth >= cfg.parallel_depth || node.is_leaf()) {
    return evaluate_worklist(node, n, node_seed, cfg, stats);
  }
  std::vector<std::future<ParticlePopulation>> futures;
  futures.reserve(node.children.size());
  for (std::size_t c = 0; c < node.children.size(); ++c) {
    futures.push_back(std::async(std::launch::async, [&, c] {
      return evaluate_subtree(node.children[c], n, node_seed.child(static_cast<std::uint32_t>(c)),
                              cfg, stats, depth + 1);
    }));
  }
  std::vector<ParticlePopulation> child_pops;
  child_pops.reserve(futures.size());
  for (auto& f : futures) child_pops.push_back(f.get());
  return finish_internal_node(node, child_pops, node_seed, cfg, stats);
}

}  // namespace

std::pair<ParticlePopulation, double> dc_sir(const DecompositionNode& node,
                                             Eigen::Index n_particles,
                                             const SeedPath& root_seed, const DcConfig& config,
                                             RunStats* stats) {
  if (n_particles < 1) throw ConfigError("dc_sir: need at least one particle");
  ParticlePopulation pop = evaluate_subtree(node, n_particles, root_seed, config, stats, 0);
  const double log_z = fold_logz(pop);
  return {std::move(pop), log_z};
}

}  // namespace dcsmc
