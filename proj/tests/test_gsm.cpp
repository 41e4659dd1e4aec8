#include <doctest.h>

#include <cmath>

#include "dcsmc/errors.hpp"
#include "dcsmc/models/lattice.hpp"
#include "dcsmc/models/oracles.hpp"
#include "dcsmc/stats.hpp"
#include "dcsmc/tree.hpp"

using namespace dcsmc;

namespace {

// Independent integrand for the site initializer (different code path).
double site_integrand_log(double x, double y, double lambda2, double sd) {
  const double r = y - x * x;
  return -0.5 * std::log(2.0 * std::numbers::pi * sd * sd) - r * r / (2.0 * sd * sd) -
         0.5 * lambda2 * x * x;
}

double golden_max(const std::function<double(double)>& f, double lo, double hi) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (f(c) > f(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - phi * (b - a);
    d = a + phi * (b - a);
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_SUITE("gsm") {

TEST_CASE("site init: y = 0 is symmetric and unimodal at 0") {
  GsmSiteInit init(0.0, 0.01, 0.05);
  for (double x : {0.3, 0.9, 2.0}) {
    CHECK(init.log_density(x) == doctest::Approx(init.log_density(-x)).epsilon(1e-12));
  }
  CHECK(init.log_density(0.0) > init.log_density(0.2));
}

TEST_CASE("site init: y = 1 is bimodal with modes near +-1") {
  GsmSiteInit init(1.0, 0.01, 0.05);
  const double mode_pos =
      golden_max([&](double x) { return init.log_density(x); }, 0.5, 1.5);
  const double oracle =
      golden_max([&](double x) { return site_integrand_log(x, 1.0, 0.01, 0.05); }, 0.5, 1.5);
  CHECK(std::abs(mode_pos - oracle) < 1e-4);
  CHECK(std::abs(mode_pos - 1.0) < 0.05);
  CHECK(init.log_density(mode_pos) > init.log_density(0.0));
  CHECK(init.log_density(mode_pos) == doctest::Approx(init.log_density(-mode_pos)).epsilon(1e-10));
}

TEST_CASE("site init: normalized density integrates to one") {
  for (double y : {-0.5, 0.0, 1.0, 3.7}) {
    GsmSiteInit init(y, 0.01, 0.05);
    const double mass = composite_quadrature(
        [&](double x) { return std::exp(init.log_density(x)); }, init.lower(), init.upper(),
        512, 1e-12);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("site init: density matches the unnormalized integrand pointwise") {
  GsmSiteInit init(2.0, 0.01, 0.05);
  for (double x : {-1.5, -0.4, 0.2, 1.4}) {
    const double diff = init.log_density(x) - init.log_density(0.1);
    const double oracle = site_integrand_log(x, 2.0, 0.01, 0.05) -
                          site_integrand_log(0.1, 2.0, 0.01, 0.05);
    CHECK(diff == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("site init: sampler law matches the density") {
  GsmSiteInit init(1.0, 0.01, 0.05);
  // Bin masses by quadrature of the reported density.
  const int bins = 24;
  const double lo = -1.6, hi = 1.6;
  std::vector<double> expected(bins + 2, 0.0);
  for (int b = 0; b < bins; ++b) {
    const double a = lo + (hi - lo) * b / bins;
    const double bb = lo + (hi - lo) * (b + 1) / bins;
    expected[b + 1] = composite_quadrature(
        [&](double x) { return std::exp(init.log_density(x)); }, a, bb, 32, 1e-12);
  }
  expected[0] = composite_quadrature(
      [&](double x) { return std::exp(init.log_density(x)); }, init.lower(), lo, 128, 1e-12);
  expected[bins + 1] = composite_quadrature(
      [&](double x) { return std::exp(init.log_density(x)); }, hi, init.upper(), 128, 1e-12);

  const int draws = 200000;
  std::vector<double> observed(bins + 2, 0.0);
  Rng rng(55);
  for (int i = 0; i < draws; ++i) {
    const double x = init.sample(rng);
    int b;
    if (x < lo) {
      b = 0;
    } else if (x >= hi) {
      b = bins + 1;
    } else {
      b = 1 + static_cast<int>((x - lo) / (hi - lo) * bins);
    }
    observed[static_cast<std::size_t>(b)] += 1.0;
  }
  std::vector<double> obs_used, exp_used;
  for (int b = 0; b < bins + 2; ++b) {
    if (expected[b] * draws < 8.0) continue;  // merge vanishing tails out
    obs_used.push_back(observed[b]);
    exp_used.push_back(expected[b] * draws);
  }
  CHECK(chi_square_gof_pvalue(obs_used, exp_used) > 1e-3);
}

TEST_CASE("decompose: root gamma equals the direct full-model density") {
  const auto model = make_synthetic_gsm(4, 10.0, 0.01, 0.05, 31);
  const auto tree = gsm_decompose(model);
  const auto problem = gsm_full_problem(model, 0.132);
  Rng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::RowVectorXd local(16);
    for (int i = 0; i < 16; ++i) local[i] = 2.0 * rng.next_gaussian();
    const Eigen::RowVectorXd global = tree.to_global(local);
    // gamma = gap + sum of initializer-normalized site logs; compare through
    // the independent site integrand instead.
    double direct = 0.0;
    for (int i = 0; i < 16; ++i) {
      direct += site_integrand_log(global[i], model.y[i], model.lambda2, model.obs_sd);
    }
    const int m = 4;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) {
        const double x = global[r * m + c];
        const double dr = x - global[r * m + (c + 1) % m];
        const double dd = x - global[((r + 1) % m) * m + c];
        direct -= 0.5 * model.lambda1 * (dr * dr + dd * dd);
      }
    }
    CHECK(tree.root.log_gamma(local) == doctest::Approx(direct).epsilon(1e-10));
  }
}

TEST_CASE("synthetic generator is deterministic in the seed") {
  const auto a = make_synthetic_gsm(4, 10.0, 0.01, 0.05, 99);
  const auto b = make_synthetic_gsm(4, 10.0, 0.01, 0.05, 99);
  const auto c = make_synthetic_gsm(4, 10.0, 0.01, 0.05, 100);
  CHECK((a.y - b.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.y - c.y).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("dc normalizer cross-checks an importance-sampling route (2x2, weak coupling)") {
  // Weak coupling so the product-measure IS oracle is accurate.
  auto model = make_synthetic_gsm(2, 2.0, 0.01, 0.05, 7);
  const auto tree = gsm_decompose(model);
  const auto problem = gsm_full_problem(model, 0.132);

  // Route 1: importance sampling from the product of site initializers.
  const Eigen::Index n_is = 200000;
  const SeedPath sp(1234);
  std::vector<double> ws;
  ws.reserve(n_is);
  {
    Eigen::RowVectorXd state(4);
    for (Eigen::Index i = 0; i < n_is; ++i) {
      auto rng = sp.stream(Stage::init, static_cast<std::uint64_t>(i));
      problem.init_sample(state, rng);
      ws.push_back(problem.ops.gap(state));
    }
  }
  Eigen::VectorXd lw = Eigen::Map<Eigen::VectorXd>(ws.data(), static_cast<Eigen::Index>(ws.size()));
  const double is_log_z = log_sum_exp(lw) - std::log(static_cast<double>(n_is));
  std::vector<double> linear(ws.size());
  for (std::size_t i = 0; i < ws.size(); ++i) linear[i] = std::exp(ws[i]);
  const double is_se = std_dev(linear) / std::sqrt(static_cast<double>(n_is));

  // Route 2: D&C over the bisection tree.
  std::vector<double> zs;
  for (int r = 0; r < 80; ++r) {
    auto [pop, log_z] = dc_sir(tree.root, 512, SeedPath(40 + r), DcConfig{});
    zs.push_back(std::exp(log_z));
  }
  const double dc_se = std_dev(zs) / std::sqrt(static_cast<double>(zs.size()));
  CHECK(std::abs(mean(zs) - std::exp(is_log_z)) < 3.0 * (dc_se + is_se));
}

TEST_CASE("grid io round trip") {
  const auto model = make_synthetic_gsm(4, 10.0, 0.01, 0.05, 3);
  const std::string path = "/tmp/dcsmc_grid_test.txt";
  save_grid(path, model.y, 4);
  const auto loaded = load_grid(path, 16);
  CHECK((loaded - model.y).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(load_grid(path, 9), DimensionMismatch);
  CHECK_THROWS_AS(load_grid("/tmp/definitely_missing_grid.txt"), ConfigError);
}

TEST_CASE("gsm model validation") {
  GaussianSquaredLattice bad = make_synthetic_gsm(2, 1.0, 0.01, 0.05, 1);
  bad.y.resize(3);
  CHECK_THROWS_AS(gsm_decompose(bad), DimensionMismatch);
  GaussianSquaredLattice neg = make_synthetic_gsm(2, 1.0, 0.01, 0.05, 1);
  neg.lambda1 = -1.0;
  CHECK_THROWS_AS(gsm_decompose(neg), ConfigError);
}

}  // TEST_SUITE
