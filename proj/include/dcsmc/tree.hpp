#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "dcsmc/particle.hpp"
#include "dcsmc/random.hpp"

namespace dcsmc {

using ConstStateRef = Eigen::Ref<const Eigen::RowVectorXd>;
using StateRef = Eigen::Ref<Eigen::RowVectorXd>;

/// Pairwise coupling table for a two-child merge: rho(j, k) = unit * raw(j, k)
/// is the log-ratio of the merge target to the child product at the tuple
/// (x_1^j, x_2^k). `discrete` marks raw values that are exact small integers
/// (spin couplings), which enables bucketed CESS evaluation at large N.
struct CouplingTable {
  Eigen::MatrixXf raw;
  double unit = 1.0;
  bool discrete = false;
};

/// One node of the tree of auxiliary distributions. The node's state space is
/// the concatenation of its children's spaces followed by the incremental
/// component (absent proposal encodes an empty incremental space).
struct DecompositionNode {
  int id = 0;
  std::vector<std::uint32_t> path;  // child indices from the root
  std::vector<DecompositionNode> children;
  int state_dim = 0;
  int incremental_dim = 0;

  /// Unnormalized log target over the node's full state.
  std::function<double(ConstStateRef)> log_gamma;

  struct Proposal {
    /// Draws the incremental component given the concatenated child states.
    std::function<void(ConstStateRef children_part, StateRef incremental, Rng&)> sample;
    std::function<double(ConstStateRef children_part, ConstStateRef incremental)> log_density;
  };
  std::optional<Proposal> proposal;

  /// log pi-check over the concatenated child states (full-strength merge
  /// target); absent means product-measure merging only.
  std::function<double(ConstStateRef child_concat)> merge_target;

  /// Fast path for log gamma_t(x) - sum_c log gamma_c(x_c) - log q_t; the
  /// generic fallback derives it from the evaluators above.
  std::function<double(ConstStateRef)> coupling_log;

  /// Fast builder of the pairwise coupling table (two-child nodes).
  std::function<CouplingTable(const ParticlePopulation&, const ParticlePopulation&)>
      pairwise_coupling;

  /// One full sweep of a Markov kernel reversible w.r.t. the bridge density at
  /// exponent alpha; returns {proposed updates, accepted updates}.
  std::function<std::pair<long, long>(StateRef, double alpha, Rng&)> kernel_sweep;

  bool is_leaf() const { return children.empty(); }
  int child_offset(std::size_t c) const;
  SeedPath seed(std::uint64_t master_seed) const { return SeedPath(master_seed, path); }
};

/// Assigns preorder ids and root paths; call once after assembling a tree.
void index_tree(DecompositionNode& root);

struct ValidationReport {
  int node_count = 0;
  int depth = 0;
};

/// Structural checks (leaves propose, dimension bookkeeping on sampled
/// states); throws MalformedTree naming the offending node.
ValidationReport validate_tree(const DecompositionNode& root);

/// One merged tuple: an index into each child population, plus the weight
/// bookkeeping the merge left behind (0 for the basic product-measure merge).
struct MergedTuple {
  std::vector<Eigen::Index> child_indices;
  double log_correction = 0.0;
  double carried_log_weight = 0.0;
};

struct MergeOutcome {
  std::vector<MergedTuple> tuples;
  double log_z_base = 0.0;   // running log Z for the population built from the tuples
  double alpha_star = 0.0;   // warm-start exponent the merge realized
  double log_mean_v = 0.0;   // mixture only: log mean of the v table
};

/// Independent resampling of each child with index alignment (Algorithm 2
/// step 1b). With `adaptive_child_ess` > 0, children whose ESS is already at
/// least that fraction of N keep their weights (carried into the tuples).
MergeOutcome merge_basic(const DecompositionNode& node,
                         const std::vector<ParticlePopulation>& child_pops,
                         ResampleScheme scheme, const SeedPath& seed,
                         double adaptive_child_ess = 0.0);

enum class WeightMode {
  immediate,  // weights = gamma ratio + corrections (plain Algorithm 2)
  deferred,   // weights = carried only; a tempering stage supplies the rest
};

/// Draws the incremental component, concatenates, and weights (Algorithm 2
/// step 2). The population's log_z_hat is the merge's log_z_base.
ParticlePopulation propose_and_weight(const DecompositionNode& node,
                                      const std::vector<ParticlePopulation>& child_pops,
                                      const MergeOutcome& merge, const SeedPath& seed,
                                      WeightMode mode = WeightMode::immediate);

struct AnnealingConfig {
  double cess_threshold = 0.995;
  double alpha_star_cess = 0.95;
  double resample_ess_fraction = 0.5;
  int sweeps_per_step = 1;
  bool adapt_alpha_star = true;
  double fixed_alpha_star = 1.0;  // used when adapt_alpha_star is false
};

struct DcConfig {
  ResampleScheme scheme = ResampleScheme::systematic;
  bool mixture = false;
  bool anneal = false;
  std::uint64_t mixture_budget = 10'000'000;
  bool resample_children_adaptively = false;
  double child_ess_fraction = 0.5;
  int parallel_depth = 0;  // subtrees above this depth may run concurrently
  AnnealingConfig annealing;
};

/// Per-run accounting: kernel work for the paper's MCMC-update comparisons and
/// the realized warm-start exponents by tree level.
class RunStats {
 public:
  void add_kernel_updates(long long n);
  void add_alpha_star(int depth, double value);
  long long kernel_updates() const;
  std::map<int, std::vector<double>> alpha_star_by_depth() const;

 private:
  mutable std::mutex mu_;
  long long kernel_updates_ = 0;
  std::map<int, std::vector<double>> alpha_star_;
};

/// Runs the divide-and-conquer recursion rooted at `node` and returns the root
/// population together with log Z-hat (Algorithm 2; mixture merging and
/// tempering per the config). Deterministic for a fixed master seed under any
/// execution schedule.
std::pair<ParticlePopulation, double> dc_sir(const DecompositionNode& node,
                                             Eigen::Index n_particles,
                                             const SeedPath& root_seed,
                                             const DcConfig& config = {},
                                             RunStats* stats = nullptr);

/// Completes one internal node from already-computed child populations; the
/// distributed runtime drives this against populations that crossed the wire.
ParticlePopulation finish_internal_node(const DecompositionNode& node,
                                        const std::vector<ParticlePopulation>& child_pops,
                                        const SeedPath& node_seed, const DcConfig& config,
                                        RunStats* stats);

/// Leaf case of the recursion (proposal + weight, no merge).
ParticlePopulation run_leaf(const DecompositionNode& node, Eigen::Index n_particles,
                            const SeedPath& node_seed);

/// Generic bridge gap log gamma_t(x) - log pi_{t,0}(x) with pi_{t,0} the child
/// product times the incremental proposal density.
double bridge_gap(const DecompositionNode& node, ConstStateRef state);

}  // namespace dcsmc
