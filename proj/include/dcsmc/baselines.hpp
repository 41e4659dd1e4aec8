#pragma once

#include "dcsmc/annealing.hpp"
#include "dcsmc/models/hierarchical.hpp"

namespace dcsmc {

struct ChainDiagnostics {
  long retained = 0;
  long burn_in = 0;
  double acceptance_rate = 0.0;
  double seconds = 0.0;
  double ess = 0.0;       // autoregressive ESS of the tracked scalar series
  double estimate = 0.0;  // posterior mean of the tracked function
};

/// Algorithm 1 as a plain sequential loop over a unary chain. With the same
/// SeedPath, bit-identical to dc_sir on that chain.
std::pair<ParticlePopulation, double> sir_run(const DecompositionNode& chain_root,
                                              Eigen::Index n_particles,
                                              const SeedPath& root_seed,
                                              ResampleScheme scheme = ResampleScheme::systematic);

struct StdSmcResult {
  ParticlePopulation pop;
  double log_z = 0.0;
  AnnealOutcome outcome;
};

/// Standard single-population SMC sampler: iid product initializer, geometric
/// bridge to the full target, CESS-adaptive steps, ESS-triggered resampling.
StdSmcResult std_smc_run(const FullSpaceProblem& problem, Eigen::Index n_particles,
                         double cess_threshold, double resample_ess_fraction,
                         const SeedPath& seed,
                         ResampleScheme scheme = ResampleScheme::systematic);

/// Single-population bootstrap filter over the parameter sequence in a fixed
/// post-order traversal, marginalizing internal thetas like the D&C run.
std::pair<ParticlePopulation, double> postorder_smc_run(
    const HierTree& tree, Eigen::Index n_particles, const SeedPath& root_seed,
    ResampleScheme scheme = ResampleScheme::systematic);

struct LatticeChainResult {
  ChainDiagnostics diag;
  Eigen::VectorXd mean_field;     // per-site posterior mean
  Eigen::VectorXd positive_mass;  // per-site fraction of retained sweeps with x > 0
};

/// Site-sequential MH over the full lattice target (alpha = 1 sweeps of the
/// problem's kernel); tracks the energy series.
LatticeChainResult mh_lattice_chain(const FullSpaceProblem& problem, long iterations,
                                    long burn_in, const SeedPath& seed);

struct GibbsResult {
  ChainDiagnostics diag;
  Eigen::VectorXd posterior_mean;  // per coordinate of the post-order layout
  Eigen::VectorXd posterior_var;
  Eigen::VectorXd ess_per_param;
};

/// Metropolis-within-Gibbs with uniformly random permutation scans and normal
/// proposals on the hierarchical model's post-order parameter vector.
GibbsResult gibbs_hier_chain(const HierTree& tree, long iterations, long burn_in,
                             const SeedPath& seed, double proposal_sd = 1.0);

}  // namespace dcsmc
