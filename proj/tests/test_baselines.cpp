#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dcsmc/baselines.hpp"

#include "dcsmc/errors.hpp"
#include "dcsmc/models/lattice.hpp"
#include "dcsmc/models/oracles.hpp"
#include "dcsmc/stats.hpp"
#include "test_helpers.hpp"

using namespace dcsmc;
using namespace dcsmc::testing;

namespace {

HierarchicalBinomial chain_model() {
  // root -> A -> leaf: a unary chain through the hierarchy.
  HierarchicalBinomial model;
  model.nodes.push_back({"root", -1, {1}, 0, 0});
  model.nodes.push_back({"A", 0, {2}, 0, 0});
  model.nodes.push_back({"leaf", 1, {}, 4, 9});
  return model;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("sir_run is bit-identical to dc_sir on a unary chain") {
  const auto chain = gaussian_chain(6);
  for (auto scheme : {ResampleScheme::multinomial, ResampleScheme::systematic,
                      ResampleScheme::residual}) {
    DcConfig cfg;
    cfg.scheme = scheme;
    const SeedPath seed(314159);
    auto [dc_pop, dc_z] = dc_sir(chain, 128, seed, cfg);
    auto [sir_pop, sir_z] = sir_run(chain, 128, seed, scheme);
    CHECK(dc_z == sir_z);
    CHECK(populations_identical(dc_pop, sir_pop));
  }
  CHECK_THROWS_AS(sir_run(two_spin_pair(0.4), 8, SeedPath(1)), MalformedTree);
}

TEST_CASE("postorder_smc_run is bit-identical to dc_sir on a hierarchy chain") {
  const auto model = chain_model();
  const auto tree = hier_decompose(model);
  const SeedPath seed(2024);
  auto [dc_pop, dc_z] = dc_sir(tree.root, 64, seed, DcConfig{});
  auto [po_pop, po_z] = postorder_smc_run(tree, 64, seed);
  CHECK(dc_z == po_z);
  CHECK(populations_identical(dc_pop, po_pop));
}

TEST_CASE("postorder_smc_run is unbiased on the tiny 2-leaf model") {
  HierarchicalBinomial model;
  model.nodes.push_back({"root", -1, {1, 2}, 0, 0});
  model.nodes.push_back({"leaf1", 0, {}, 3, 10});
  model.nodes.push_back({"leaf2", 0, {}, 7, 12});
  const auto tree = hier_decompose(model);
  const double exact = std::exp(brute_force_log_z(model));
  std::vector<double> zs;
  for (int r = 0; r < 800; ++r) {
    zs.push_back(std::exp(postorder_smc_run(tree, 64, SeedPath(r)).second));
  }
  const double se = std_dev(zs) / std::sqrt(static_cast<double>(zs.size()));
  CHECK(std::abs(mean(zs) - exact) < 3.0 * se);
}

TEST_CASE("std_smc_run: beta = 0 terminates after one step") {
  const auto problem = ising_full_problem(IsingLattice{4, 0.0});
  const auto result = std_smc_run(problem, 128, 0.995, 0.5, SeedPath(5));
  CHECK(result.outcome.steps == 1);
  // Free spins: Z = 2^16 exactly.
  CHECK(result.log_z == doctest::Approx(16.0 * std::numbers::ln2).epsilon(1e-12));
}

TEST_CASE("std_smc_run: unbiased on the 2x2 Ising") {
  const IsingLattice lattice{2, 0.44};
  const auto problem = ising_full_problem(lattice);
  const double exact = std::exp(brute_force_log_z(lattice));
  std::vector<double> zs;
  for (int r = 0; r < 120; ++r) {
    zs.push_back(std::exp(std_smc_run(problem, 512, 0.995, 0.5, SeedPath(800 + r)).log_z));
  }
  const double se = std_dev(zs) / std::sqrt(static_cast<double>(zs.size()));
  CHECK(std::abs(mean(zs) - exact) < 3.0 * se);
}

TEST_CASE("std_smc_run and dc_sir agree on the 3x3 normalizer") {
  const IsingLattice lattice{3, 0.44};
  const auto problem = ising_full_problem(lattice);
  const auto tree = lattice_decompose_general(lattice);
  std::vector<double> za, zb;
  for (int r = 0; r < 150; ++r) {
    za.push_back(std::exp(std_smc_run(problem, 256, 0.995, 0.5, SeedPath(10 + r)).log_z));
    zb.push_back(std::exp(dc_sir(tree.root, 256, SeedPath(7000 + r), DcConfig{}).second));
  }
  const double se = std_dev(za) / std::sqrt(150.0) + std_dev(zb) / std::sqrt(150.0);
  CHECK(std::abs(mean(za) - mean(zb)) < 3.0 * se);
}

TEST_CASE("mh chain: single-site magnetization vanishes by symmetry") {
  const auto problem = ising_full_problem(IsingLattice{1, 0.9});
  const auto result = mh_lattice_chain(problem, 40000, 1000, SeedPath(9));
  // Spins are +-1 with equal probability; the mean of 39000 sweeps has sd
  // ~ 1/sqrt(n) before autocorrelation (none here: every flip accepts).
  CHECK(std::abs(result.mean_field[0]) < 3.0 / std::sqrt(39000.0) * 2.0);
  CHECK(result.diag.acceptance_rate == doctest::Approx(1.0));
}

TEST_CASE("mh chain: 3x3 expected energy matches enumeration") {
  const IsingLattice lattice{3, 0.44};
  const auto exact = ising_enumerate(lattice);
  const auto problem = ising_full_problem(lattice);
  const long sweeps = 1 << 14, burn = 1 << 10;
  std::vector<double> means;
  for (int r = 0; r < 12; ++r) {
    means.push_back(mh_lattice_chain(problem, sweeps, burn, SeedPath(40 + r)).diag.estimate);
  }
  const double se = std_dev(means) / std::sqrt(static_cast<double>(means.size()));
  CHECK(std::abs(mean(means) - exact.mean_energy) < 3.0 * se);
  const auto diag = mh_lattice_chain(problem, sweeps, burn, SeedPath(99)).diag;
  CHECK(diag.ess <= static_cast<double>(diag.retained));
  CHECK(diag.ess > 1.0);
}

TEST_CASE("gibbs chain: tiny-model posterior mean agrees with dc") {
  HierarchicalBinomial model;
  model.nodes.push_back({"root", -1, {1, 2}, 0, 0});
  model.nodes.push_back({"leaf1", 0, {}, 3, 10});
  model.nodes.push_back({"leaf2", 0, {}, 7, 12});
  const auto tree = hier_decompose(model);

  const auto gibbs = gibbs_hier_chain(tree, 30000, 3000, SeedPath(1), 1.0);
  // Reference: a large dc run's weighted posterior mean of theta_1.
  auto [pop, log_z] = dc_sir(tree.root, 20000, SeedPath(77), DcConfig{});
  const Eigen::VectorXd w = normalize_weights(pop.log_weights);
  double theta1 = 0.0;
  for (Eigen::Index i = 0; i < pop.size(); ++i) theta1 += w[i] * pop.states(i, 0);
  CHECK(gibbs.posterior_mean[0] == doctest::Approx(theta1).epsilon(0.08));
  CHECK(gibbs.diag.acceptance_rate > 0.05);
  CHECK(gibbs.diag.acceptance_rate < 0.95);
  CHECK(gibbs.ess_per_param.size() == 3);
  (void)log_z;
}

TEST_CASE("autoregressive ess: iid versus correlated series") {
  Rng rng(12);
  std::vector<double> iid(4000);
  for (auto& v : iid) v = rng.next_gaussian();
  const double e_iid = autoregressive_ess(iid);
  CHECK(e_iid > 2000.0);
  CHECK(e_iid < 8000.0);

  // AR(1) with rho = 0.9: integrated autocorrelation time ~ 19.
  std::vector<double> ar(20000);
  double x = 0.0;
  for (auto& v : ar) {
    x = 0.9 * x + std::sqrt(1.0 - 0.81) * rng.next_gaussian();
    v = x;
  }
  const double e_ar = autoregressive_ess(ar);
  CHECK(e_ar < 4000.0);
  CHECK(e_ar > 250.0);
}

}  // TEST_SUITE
