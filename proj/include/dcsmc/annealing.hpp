#pragma once

#include <optional>
#include <vector>

#include "dcsmc/tree.hpp"

namespace dcsmc {

/// Fixed tempering schedule: bridge exponents alpha_star <= alphas[0] < ... <
/// alphas.back() = 1 over the geometric path between the merge output and the
/// node target.
struct AnnealingPlan {
  double alpha_star = 0.0;
  std::vector<double> alphas;
  double cess_threshold = 0.995;
  int mcmc_sweeps_per_step = 1;
  double resample_ess_fraction = 0.5;

  void validate() const;  // throws ConfigError on a malformed schedule
};

struct MarkovKernelSpec {
  enum class Kind { single_flip, random_walk, model_supplied };
  Kind kind = Kind::single_flip;
  double step_sd = 0.0;
};

/// (1-alpha) log pi_{t,0} + alpha log gamma_t at `state`, with pi_{t,0} the
/// child product times the incremental proposal density.
double bridge_log_density(const DecompositionNode& node, double alpha, ConstStateRef state);

/// Incremental SMC-sampler weight for a reversible kernel: the bridge density
/// difference at the unmoved state.
double smc_sampler_weight(ConstStateRef prev_state, double alpha_prev, double alpha_next,
                          const DecompositionNode& node);

/// Draws N tuples from the reweighted product measure Q_t over the N^C support
/// points, with the merge target tempered to `alpha_star`. Records per-tuple
/// corrections and the v-table log-mean for the Z-hat bookkeeping.
MergeOutcome mixture_merge(const DecompositionNode& node,
                           const std::vector<ParticlePopulation>& child_pops,
                           double alpha_star, const SeedPath& seed,
                           std::uint64_t budget = 10'000'000);

/// Largest warm-start exponent keeping every per-child marginal CESS of the
/// tempered product measure at or above threshold * N (bisection to 1e-3;
/// falls back to 0 when even 1e-3 fails).
double adapt_alpha_star(const DecompositionNode& node,
                        const std::vector<ParticlePopulation>& child_pops,
                        double cess_threshold = 0.95, std::uint64_t budget = 10'000'000);

/// Largest admissible next bridge exponent: bisection over the step size for
/// CESS(increment^delta) >= threshold * N, floored at 1e-4 so the schedule
/// always terminates.
double adapt_next_alpha(const Eigen::VectorXd& norm_weights, const Eigen::VectorXd& gaps,
                        double current_alpha, double cess_threshold);
double adapt_next_alpha(const ParticlePopulation& pop, const DecompositionNode& node,
                        double current_alpha, double cess_threshold = 0.995);

/// Model-agnostic bridge problem: everything the tempering loop needs.
struct BridgeOps {
  std::function<double(ConstStateRef)> gap;  // log target - log base
  std::function<std::pair<long, long>(StateRef, double alpha, Rng&)> kernel_sweep;
};

struct AnnealOutcome {
  long steps = 0;
  long long kernel_updates = 0;
  long proposals = 0;
  long accepts = 0;
};

/// A whole model flattened to one population: iid product initializer plus the
/// bridge to the full target. Drives the standard SMC sampler and the MH
/// chain baselines.
struct FullSpaceProblem {
  Eigen::Index dim = 0;
  std::function<void(StateRef, Rng&)> init_sample;  // one particle, iid sites inside
  BridgeOps ops;                                    // gap = log gamma - log product-of-sites
  std::function<double(ConstStateRef)> energy;      // observable for diagnostics
};

/// Core tempering loop (Algorithm 3 step 2'): reweight by the bridge
/// increment, resample when ESS falls below the configured fraction (folding
/// the weight mean into log_z_hat), then move every particle with the
/// bridge-reversible kernel. Runs either a fixed plan or CESS-adaptive steps.
AnnealOutcome anneal_loop(const BridgeOps& ops, ParticlePopulation& pop, double start_alpha,
                          const std::optional<AnnealingPlan>& plan, double cess_threshold,
                          double resample_ess_fraction, int sweeps_per_step,
                          ResampleScheme scheme, const SeedPath& seed);

/// Node-level wrapper: anneals a merged-and-proposed population from
/// `start_alpha` up to the node target.
ParticlePopulation run_annealing(const DecompositionNode& node, ParticlePopulation merged_pop,
                                 double start_alpha, const AnnealingConfig& config,
                                 ResampleScheme scheme, const SeedPath& seed,
                                 AnnealOutcome* outcome = nullptr);
ParticlePopulation run_annealing(const DecompositionNode& node, ParticlePopulation merged_pop,
                                 const AnnealingPlan& plan, ResampleScheme scheme,
                                 const SeedPath& seed, AnnealOutcome* outcome = nullptr);

}  // namespace dcsmc
