#include <doctest.h>

#include <cmath>
#include <set>

#include "dcsmc/errors.hpp"
#include "dcsmc/models/lattice.hpp"
#include "dcsmc/models/oracles.hpp"
#include "dcsmc/stats.hpp"

using namespace dcsmc;

namespace {

// Independent edge-list oracle: enumerate the periodic edges by explicit
// neighbour arithmetic, duplicating the M = 2 doubled bonds.
double energy_oracle(int m, ConstStateRef config) {
  double e = 0.0;
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      const int s = r * m + c;
      const int right = r * m + (c + 1) % m;
      const int down = ((r + 1) % m) * m + c;
      e += config[s] * config[right] + config[s] * config[down];
    }
  }
  return -e;
}

}  // namespace

TEST_SUITE("ising") {

TEST_CASE("energy: ground state and checkerboard at M=4") {
  const IsingLattice lattice{4, 1.0};
  Eigen::RowVectorXd up = Eigen::RowVectorXd::Constant(16, 1.0);
  CHECK(ising_energy(lattice, up) == doctest::Approx(-32.0));
  Eigen::RowVectorXd checker(16);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) checker[r * 4 + c] = (r + c) % 2 == 0 ? 1.0 : -1.0;
  }
  CHECK(ising_energy(lattice, checker) == doctest::Approx(32.0));
}

TEST_CASE("energy: random configurations match the edge-list oracle") {
  Rng rng(11);
  for (int m : {2, 3, 4, 5}) {
    const IsingLattice lattice{m, 1.0};
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::RowVectorXd config(m * m);
      for (int i = 0; i < m * m; ++i) config[i] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
      CHECK(ising_energy(lattice, config) == doctest::Approx(energy_oracle(m, config)));
    }
  }
  Eigen::RowVectorXd wrong(7);
  CHECK_THROWS_AS(ising_energy(IsingLattice{3, 1.0}, wrong), DimensionMismatch);
}

TEST_CASE("decompose: level structure of the 64x64 bisection") {
  const auto tree = lattice_decompose(IsingLattice{64, 0.4407});
  // Edges reintroduced per non-leaf level, bottom-most merge first.
  std::vector<long> per_level;
  for (auto it = tree.added_edges_by_depth.rbegin(); it != tree.added_edges_by_depth.rend();
       ++it) {
    long value = it->second.front();
    for (long v : it->second) CHECK(v == value);
    per_level.push_back(value);
  }
  const std::vector<long> expected{1, 2, 2, 4, 4, 8, 8, 16, 16, 32, 64, 128};
  CHECK(per_level == expected);

  long total = 0;
  for (const auto& [depth, counts] : tree.added_edges_by_depth) {
    for (long v : counts) total += v;
  }
  CHECK(total == 2 * 64 * 64);
  CHECK(static_cast<long>(tree.root_edges.size()) == 2 * 64 * 64);
}

TEST_CASE("decompose: M=2 bookkeeping and M=1 single leaf") {
  const auto tree = lattice_decompose(IsingLattice{2, 0.5});
  int leaves = 0, internal = 0;
  std::function<void(const DecompositionNode&)> walk = [&](const DecompositionNode& n) {
    (n.is_leaf() ? leaves : internal) += 1;
    for (const auto& c : n.children) walk(c);
  };
  walk(tree.root);
  CHECK(leaves == 4);
  CHECK(internal == 3);
  long total = 0;
  for (const auto& [depth, counts] : tree.added_edges_by_depth) {
    for (long v : counts) total += v;
  }
  CHECK(total == 8);

  const auto tiny = lattice_decompose(IsingLattice{1, 0.5});
  CHECK(tiny.root.is_leaf());
  CHECK_THROWS_AS(lattice_decompose(IsingLattice{3, 0.5}), NotPowerOfTwo);
  CHECK_NOTHROW(lattice_decompose_general(IsingLattice{3, 0.5}));
}

TEST_CASE("decompose: root gamma equals the full model everywhere") {
  Rng rng(5);
  for (int m : {2, 4}) {
    const IsingLattice lattice{m, 0.4407};
    const auto tree = lattice_decompose(lattice);
    for (int rep = 0; rep < 25; ++rep) {
      Eigen::RowVectorXd local(m * m);
      for (int i = 0; i < m * m; ++i) local[i] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
      const double direct = -lattice.beta * ising_energy(lattice, tree.to_global(local));
      CHECK(tree.root.log_gamma(local) == doctest::Approx(direct).epsilon(1e-12));
      CHECK(tree.energy(local) == doctest::Approx(ising_energy(lattice, tree.to_global(local))));
    }
  }
  // The general splitter agrees too (3x3).
  const IsingLattice odd{3, 0.44};
  const auto tree = lattice_decompose_general(odd);
  for (int rep = 0; rep < 25; ++rep) {
    Eigen::RowVectorXd local(9);
    for (int i = 0; i < 9; ++i) local[i] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
    const double direct = -odd.beta * ising_energy(odd, tree.to_global(local));
    CHECK(tree.root.log_gamma(local) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("single-flip kernel: free spins accept every proposal") {
  const auto problem = ising_full_problem(IsingLattice{4, 0.0});
  Eigen::RowVectorXd state = Eigen::RowVectorXd::Constant(16, 1.0);
  Rng rng(9);
  long prop = 0, acc = 0;
  for (int sweep = 0; sweep < 50; ++sweep) {
    auto [p, a] = problem.ops.kernel_sweep(state, 1.0, rng);
    prop += p;
    acc += a;
  }
  CHECK(prop == acc);
}

TEST_CASE("single-flip kernel: stationary law on the 2x2 torus") {
  const IsingLattice lattice{2, 0.35};
  const auto problem = ising_full_problem(lattice);
  // Exact distribution over the 16 configurations.
  std::vector<double> density(16);
  Eigen::RowVectorXd config(4);
  double z = 0.0;
  for (int bits = 0; bits < 16; ++bits) {
    for (int i = 0; i < 4; ++i) config[i] = bits >> i & 1 ? 1.0 : -1.0;
    density[bits] = std::exp(-lattice.beta * ising_energy(lattice, config));
    z += density[bits];
  }
  Eigen::RowVectorXd state = Eigen::RowVectorXd::Constant(4, 1.0);
  Rng rng(123);
  std::vector<double> observed(16, 0.0);
  const int sweeps = 200000, burn = 2000;
  for (int s = 0; s < sweeps; ++s) {
    problem.ops.kernel_sweep(state, 1.0, rng);
    if (s < burn) continue;
    int bits = 0;
    for (int i = 0; i < 4; ++i) bits |= (state[i] > 0 ? 1 : 0) << i;
    observed[static_cast<std::size_t>(bits)] += 1.0;
  }
  std::vector<double> expected(16);
  for (int b = 0; b < 16; ++b) expected[b] = density[b] / z * (sweeps - burn);
  // Sweep samples are autocorrelated; compare cell frequencies coarsely.
  for (int b = 0; b < 16; ++b) {
    CHECK(observed[b] / (sweeps - burn) ==
          doctest::Approx(expected[b] / (sweeps - burn)).epsilon(0.1));
  }
}

TEST_CASE("enumeration agrees with the transfer matrix") {
  for (int m : {2, 3, 4}) {
    for (double beta : {0.2, 0.44, 0.4407}) {
      const IsingLattice lattice{m, beta};
      CHECK(ising_enumerate(lattice).log_z ==
            doctest::Approx(ising_transfer_matrix_log_z(lattice)).epsilon(1e-10));
    }
  }
  // 1-site torus: no edges, Z = 2.
  CHECK(brute_force_log_z(IsingLattice{1, 0.7}) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(ising_enumerate(IsingLattice{5, 0.4}), TooLarge);
}

TEST_CASE("full-space bridge gap matches the direct formula") {
  const IsingLattice lattice{4, 0.4407};
  const auto problem = ising_full_problem(lattice);
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::RowVectorXd config(16);
    for (int i = 0; i < 16; ++i) config[i] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
    const double expected =
        -lattice.beta * ising_energy(lattice, config) + 16.0 * std::numbers::ln2;
    CHECK(problem.ops.gap(config) == doctest::Approx(expected).epsilon(1e-12));
  }
}

}  // TEST_SUITE
