#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dcsmc/errors.hpp"
#include "dcsmc/models/lattice.hpp"
#include "dcsmc/models/oracles.hpp"
#include "dcsmc/stats.hpp"
#include "dcsmc/tree.hpp"
#include "test_helpers.hpp"

using namespace dcsmc;
using namespace dcsmc::testing;

TEST_SUITE("tree") {

TEST_CASE("validate: single leaf with proposal") {
  DecompositionNode leaf;
  leaf.state_dim = 1;
  leaf.incremental_dim = 1;
  leaf.log_gamma = [](ConstStateRef) { return 0.0; };
  DecompositionNode::Proposal p;
  p.sample = [](ConstStateRef, StateRef out, Rng& rng) { out[0] = rng.next_gaussian(); };
  p.log_density = [](ConstStateRef, ConstStateRef x) { return log_normal_pdf(x[0], 0, 1); };
  leaf.proposal = p;
  index_tree(leaf);
  const auto report = validate_tree(leaf);
  CHECK(report.node_count == 1);
  CHECK(report.depth == 1);
}

TEST_CASE("validate: childless node without proposal is malformed") {
  DecompositionNode bad;
  bad.state_dim = 1;
  bad.log_gamma = [](ConstStateRef) { return 0.0; };
  index_tree(bad);
  CHECK_THROWS_AS(validate_tree(bad), MalformedTree);
}

TEST_CASE("validate: 64x64 lattice decomposition has depth 13") {
  const auto tree = lattice_decompose(IsingLattice{64, 0.4407});
  const auto report = validate_tree(tree.root);
  CHECK(report.depth == 13);  // 2 log2(64) + 1
  CHECK(report.node_count == 2 * 64 * 64 - 1);
}

TEST_CASE("merge_basic: one child reduces to plain resampling") {
  const auto chain = gaussian_chain(2);  // unary internal node over one leaf
  ParticlePopulation pop = ParticlePopulation::uniform(8, 1);
  for (Eigen::Index i = 0; i < 8; ++i) pop.states(i, 0) = static_cast<double>(i);
  pop.log_weights.setConstant(-std::numeric_limits<double>::infinity());
  pop.log_weights[5] = 0.0;
  const auto merge = merge_basic(chain, {pop}, ResampleScheme::systematic, SeedPath(5));
  for (const auto& t : merge.tuples) {
    CHECK(t.child_indices.size() == 1);
    CHECK(t.child_indices[0] == 5);
    CHECK(t.log_correction == 0.0);
  }
  CHECK_THROWS_AS(merge_basic(two_spin_pair(0.3), {pop}, ResampleScheme::systematic, SeedPath(5)),
                  DimensionMismatch);
}

TEST_CASE("merge_basic: degenerate children give identical tuples") {
  const auto root = two_spin_pair(0.3);
  auto degenerate = [](double value) {
    ParticlePopulation pop = ParticlePopulation::uniform(4, 1);
    pop.states.setConstant(value);
    pop.log_weights.setConstant(-std::numeric_limits<double>::infinity());
    pop.log_weights[2] = 0.0;
    return pop;
  };
  const auto merge = merge_basic(root, {degenerate(1.0), degenerate(-1.0)},
                                 ResampleScheme::multinomial, SeedPath(6));
  for (const auto& t : merge.tuples) {
    CHECK(t.child_indices[0] == 2);
    CHECK(t.child_indices[1] == 2);
  }
}

TEST_CASE("merge_basic: product-measure tuple frequencies") {
  const auto root = two_spin_pair(0.0);
  ParticlePopulation c1 = ParticlePopulation::uniform(2, 1);
  c1.states << -1.0, 1.0;
  ParticlePopulation c2 = c1;
  const int reps = 100000;
  std::vector<double> observed(4, 0.0);
  const SeedPath sp(77);
  for (int r = 0; r < reps; ++r) {
    const auto merge =
        merge_basic(root, {c1, c2}, ResampleScheme::multinomial, sp.child(r));
    for (const auto& t : merge.tuples) {
      observed[static_cast<std::size_t>(2 * t.child_indices[0] + t.child_indices[1])] += 1.0;
    }
  }
  const std::vector<double> expected(4, 2.0 * reps / 4.0);
  CHECK(chi_square_gof_pvalue(observed, expected) > 1e-3);
}

TEST_CASE("propose_and_weight: perfect leaf proposal gives unit weights") {
  DecompositionNode leaf;
  leaf.state_dim = 1;
  leaf.incremental_dim = 1;
  leaf.log_gamma = [](ConstStateRef s) { return log_normal_pdf(s[0], 0, 1); };
  DecompositionNode::Proposal p;
  p.sample = [](ConstStateRef, StateRef out, Rng& rng) { out[0] = rng.next_gaussian(); };
  p.log_density = [](ConstStateRef, ConstStateRef x) { return log_normal_pdf(x[0], 0, 1); };
  leaf.proposal = p;
  index_tree(leaf);
  for (Eigen::Index n : {1, 7, 64}) {
    const auto pop = run_leaf(leaf, n, SeedPath(n));
    CHECK(pop.log_weights.cwiseAbs().maxCoeff() < 1e-14);
    CHECK(std::abs(fold_logz(pop)) < 1e-13);
  }
}

TEST_CASE("propose_and_weight: hierarchical node with q = u reduces to the likelihood ratio") {
  // Instantiated-theta example: two Gaussian leaves with artificial priors
  // u_c = N(0, 4); parent proposes x't ~ u_t = N(0, 9) and gamma_t =
  // u_t(x't) prod_c N(x_c; x't, 1).
  const double u_var = 4.0, t_var = 9.0;
  auto make_leaf = [&] {
    DecompositionNode leaf;
    leaf.state_dim = 1;
    leaf.incremental_dim = 1;
    leaf.log_gamma = [=](ConstStateRef s) { return log_normal_pdf(s[0], 0, u_var); };
    DecompositionNode::Proposal p;
    p.sample = [=](ConstStateRef, StateRef out, Rng& rng) {
      out[0] = std::sqrt(u_var) * rng.next_gaussian();
    };
    p.log_density = [=](ConstStateRef, ConstStateRef x) {
      return log_normal_pdf(x[0], 0, u_var);
    };
    leaf.proposal = p;
    return leaf;
  };
  DecompositionNode root;
  root.children.push_back(make_leaf());
  root.children.push_back(make_leaf());
  root.state_dim = 3;
  root.incremental_dim = 1;
  root.log_gamma = [=](ConstStateRef s) {
    return log_normal_pdf(s[2], 0, t_var) + log_normal_pdf(s[0], s[2], 1.0) +
           log_normal_pdf(s[1], s[2], 1.0);
  };
  DecompositionNode::Proposal q;
  q.sample = [=](ConstStateRef, StateRef out, Rng& rng) {
    out[0] = std::sqrt(t_var) * rng.next_gaussian();
  };
  q.log_density = [=](ConstStateRef, ConstStateRef x) { return log_normal_pdf(x[0], 0, t_var); };
  root.proposal = q;
  index_tree(root);

  auto [pop, log_z] = dc_sir(root, 256, SeedPath(31), DcConfig{});
  for (Eigen::Index i = 0; i < pop.size(); ++i) {
    const double expected = log_normal_pdf(pop.states(i, 0), pop.states(i, 2), 1.0) -
                            log_normal_pdf(pop.states(i, 0), 0, u_var) +
                            log_normal_pdf(pop.states(i, 1), pop.states(i, 2), 1.0) -
                            log_normal_pdf(pop.states(i, 1), 0, u_var);
    CHECK(pop.log_weights[i] == doctest::Approx(expected).epsilon(1e-12));
  }
  (void)log_z;
}

TEST_CASE("propose_and_weight: single coupling edge weight is exp(beta x0 x1)") {
  const double beta = 0.6;
  const auto root = two_spin_pair(beta);
  auto [pop, log_z] = dc_sir(root, 64, SeedPath(8), DcConfig{});
  for (Eigen::Index i = 0; i < pop.size(); ++i) {
    CHECK(pop.log_weights[i] ==
          doctest::Approx(beta * pop.states(i, 0) * pop.states(i, 1)).epsilon(1e-14));
  }
  // Z = 2 e^b + 2 e^-b times leaf normalizers (each leaf contributes Z = 2).
  const double exact = std::log(2.0 * std::exp(beta) + 2.0 * std::exp(-beta));
  std::vector<double> zs;
  for (int r = 0; r < 400; ++r) {
    auto [p, lz] = dc_sir(root, 64, SeedPath(1000 + r), DcConfig{});
    zs.push_back(std::exp(lz));
  }
  const double se = std_dev(zs) / std::sqrt(static_cast<double>(zs.size()));
  CHECK(std::abs(mean(zs) - std::exp(exact)) < 3.0 * se);
  (void)log_z;
}

TEST_CASE("dc_sir: 3x3 Ising normalizer is unbiased against enumeration") {
  const IsingLattice lattice{3, 0.44};
  const auto tree = lattice_decompose_general(lattice);
  const double exact_z = std::exp(brute_force_log_z(lattice));
  std::vector<double> zs;
  for (int r = 0; r < 600; ++r) {
    auto [pop, log_z] = dc_sir(tree.root, 64, SeedPath(r), DcConfig{});
    zs.push_back(std::exp(log_z));
  }
  const double se = std_dev(zs) / std::sqrt(static_cast<double>(zs.size()));
  CHECK(std::abs(mean(zs) - exact_z) < 3.0 * se);
}

TEST_CASE("dc_sir: adaptive child resampling keeps the estimate unbiased") {
  const IsingLattice lattice{3, 0.44};
  const auto tree = lattice_decompose_general(lattice);
  const double exact_z = std::exp(brute_force_log_z(lattice));
  DcConfig cfg;
  cfg.resample_children_adaptively = true;
  cfg.child_ess_fraction = 0.5;
  std::vector<double> zs;
  for (int r = 0; r < 600; ++r) {
    auto [pop, log_z] = dc_sir(tree.root, 64, SeedPath(5000 + r), cfg);
    zs.push_back(std::exp(log_z));
  }
  const double se = std_dev(zs) / std::sqrt(static_cast<double>(zs.size()));
  CHECK(std::abs(mean(zs) - exact_z) < 3.0 * se);
}

TEST_CASE("dc_sir: scheduling invariance under concurrent children") {
  const auto tree = lattice_decompose(IsingLattice{4, 0.4407});
  DcConfig serial;
  DcConfig parallel;
  parallel.parallel_depth = 3;
  auto [pop_a, z_a] = dc_sir(tree.root, 128, SeedPath(17), serial);
  auto [pop_b, z_b] = dc_sir(tree.root, 128, SeedPath(17), parallel);
  CHECK(z_a == z_b);
  CHECK(populations_identical(pop_a, pop_b));
}

TEST_CASE("dc_sir: rescaling gamma evaluators") {
  const double kappa = 0.8;
  auto tree_a = lattice_decompose(IsingLattice{2, 0.5});
  auto tree_b = lattice_decompose(IsingLattice{2, 0.5});
  // Scaling the root gamma rescales Z-hat by exactly that constant.
  auto base_root = tree_b.root.log_gamma;
  tree_b.root.log_gamma = [base_root, kappa](ConstStateRef s) { return base_root(s) + kappa; };
  tree_b.root.coupling_log = nullptr;  // force the generic weight path
  tree_a.root.coupling_log = nullptr;
  auto [pa, za] = dc_sir(tree_a.root, 64, SeedPath(3), DcConfig{});
  auto [pb, zb] = dc_sir(tree_b.root, 64, SeedPath(3), DcConfig{});
  CHECK(zb == doctest::Approx(za + kappa).epsilon(1e-12));

  // Scaling an internal child's gamma cancels between its fold and the parent
  // weight, leaving the root estimate unchanged.
  auto tree_c = lattice_decompose(IsingLattice{2, 0.5});
  auto base_child = tree_c.root.children[0].log_gamma;
  tree_c.root.children[0].log_gamma = [base_child, kappa](ConstStateRef s) {
    return base_child(s) + kappa;
  };
  tree_c.root.coupling_log = nullptr;
  tree_c.root.children[0].coupling_log = nullptr;
  auto [pc, zc] = dc_sir(tree_c.root, 64, SeedPath(3), DcConfig{});
  CHECK(zc == doctest::Approx(za).epsilon(1e-10));
}

TEST_CASE("dc_sir: proposal with zero density at its own draw raises") {
  DecompositionNode leaf;
  leaf.state_dim = 1;
  leaf.incremental_dim = 1;
  leaf.log_gamma = [](ConstStateRef) { return 0.0; };
  DecompositionNode::Proposal p;
  p.sample = [](ConstStateRef, StateRef out, Rng& rng) { out[0] = rng.next_gaussian(); };
  p.log_density = [](ConstStateRef, ConstStateRef) {
    return -std::numeric_limits<double>::infinity();
  };
  leaf.proposal = p;
  index_tree(leaf);
  CHECK_THROWS_AS(dc_sir(leaf, 4, SeedPath(1), DcConfig{}), ProposalUnsupported);
}

TEST_CASE("dc_sir: all-zero weights surface with node context") {
  auto root = two_spin_pair(0.1);
  root.coupling_log = nullptr;
  root.log_gamma = [](ConstStateRef) { return -std::numeric_limits<double>::infinity(); };
  index_tree(root);
  CHECK_THROWS_WITH_AS(dc_sir(root, 8, SeedPath(2), DcConfig{}),
                       doctest::Contains("node 0"), AllWeightsZero);
}

}  // TEST_SUITE
