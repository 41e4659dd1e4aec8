#pragma once

#include <map>
#include <string>
#include <vector>

#include "dcsmc/annealing.hpp"
#include "dcsmc/tree.hpp"

namespace dcsmc {

/// Square-lattice Ising model with periodic boundary: p(z) ∝ exp(-beta E(z)),
/// E(z) = -Σ_{(k,l) in E} x_k x_l over nearest-neighbour edges. Any M >= 1 is
/// a valid model; the bisection decomposition additionally wants a power of 2.
struct IsingLattice {
  int size = 2;
  double beta = 0.4407;
};

/// Latent Gaussian field with nearest-neighbour interactions, periodic
/// boundary, and squared observations y_k | x_k ~ N(x_k^2, obs_sd^2).
struct GaussianSquaredLattice {
  int size = 8;
  double lambda1 = 10.0;
  double lambda2 = 0.01;
  double obs_sd = 0.05;
  Eigen::VectorXd y;  // M*M entries, row-major site order
};

enum class LatticeScheme { bisection, binary_with_dummies };

/// Energy with every periodic nearest-neighbour edge counted once; `config`
/// is in global row-major site order.
double ising_energy(const IsingLattice& lattice, ConstStateRef config);

/// Decomposition tree plus the bookkeeping that ties tree-local coordinates
/// back to lattice sites.
struct LatticeTree {
  DecompositionNode root;
  std::vector<int> site_of_coord;               // root coordinate -> global site
  std::vector<int> coord_of_site;               // inverse
  std::vector<std::pair<int, int>> root_edges;  // root-local pairs, all 2M^2 edges
  std::map<int, std::vector<long>> added_edges_by_depth;  // per internal node

  /// -Σ x_a x_b over all edges, evaluated on a root-population state row.
  double energy(ConstStateRef root_state) const;
  Eigen::RowVectorXd to_global(ConstStateRef root_state) const;
};

/// Self-similar bisection of the M x M lattice down to single sites, splitting
/// the longer axis (ties split rows) so the split axis alternates; uniform
/// {-1,+1} leaf proposals, empty incremental spaces, single-flip kernels.
/// Strict power-of-2 contract; throws NotPowerOfTwo otherwise.
LatticeTree lattice_decompose(const IsingLattice& lattice,
                              LatticeScheme scheme = LatticeScheme::bisection);

/// Floor/ceil variant of the same split for arbitrary M >= 1.
LatticeTree lattice_decompose_general(const IsingLattice& lattice);

MarkovKernelSpec single_flip_kernel();
MarkovKernelSpec random_walk_kernel(double step_sd);

/// Site initializer mu_k(x) ∝ N(y_k | x^2, obs_sd^2) exp(-lambda2 x^2 / 2),
/// normalized by adaptive quadrature on a bounded window with inverse-CDF
/// sampling from a dense grid.
class GsmSiteInit {
 public:
  GsmSiteInit(double y, double lambda2, double obs_sd, int grid_points = 4096);

  double sample(Rng& rng) const;
  double log_density(double x) const;  // normalized
  double log_normalizer() const { return log_z_; }
  double lower() const { return lo_; }
  double upper() const { return hi_; }
  double unnormalized_log(double x) const;

 private:
  double y_, lambda2_, sd_;
  double lo_, hi_, log_z_;
  Eigen::VectorXd grid_f_;  // normalized density at grid nodes
  Eigen::VectorXd cdf_;
  double cell_;
};

LatticeTree gsm_decompose(const GaussianSquaredLattice& model,
                          MarkovKernelSpec kernel = random_walk_kernel(0.132));

/// Full-space single-population problems for the standard SMC sampler and the
/// MH chain baselines: product-of-sites initializer bridging to the full γ.
FullSpaceProblem ising_full_problem(const IsingLattice& lattice);
FullSpaceProblem gsm_full_problem(const GaussianSquaredLattice& model, double proposal_sd);

/// Draws a field from the GMRF prior (dense Cholesky of the precision) and
/// squared noisy observations of it; deterministic in the seed.
GaussianSquaredLattice make_synthetic_gsm(int size, double lambda1, double lambda2,
                                          double obs_sd, std::uint64_t seed,
                                          Eigen::VectorXd* truth = nullptr);

/// Row-major whitespace-separated numeric grid files.
Eigen::VectorXd load_grid(const std::string& path, Eigen::Index expected_size = -1);
void save_grid(const std::string& path, const Eigen::VectorXd& values, int per_row);

}  // namespace dcsmc
