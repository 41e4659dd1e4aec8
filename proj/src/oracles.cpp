#include "dcsmc/models/oracles.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dcsmc/errors.hpp"

namespace dcsmc {

namespace {

double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                   double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double flm = f(0.5 * (a + m)), frm = f(0.5 * (m + b));
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_quadrature(const std::function<double(double)>& f, double a, double b,
                           double tol) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48);
}

double composite_quadrature(const std::function<double(double)>& f, double a, double b,
                            int cells, double cell_tol, int depth) {
  double total = 0.0;
  for (int i = 0; i < cells; ++i) {
    const double lo = a + (b - a) * i / cells;
    const double hi = a + (b - a) * (i + 1) / cells;
    const double fa = f(lo), fb = f(hi), fm = f(0.5 * (lo + hi));
    const double whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    total += simpson_rec(f, lo, hi, fa, fm, fb, whole, cell_tol, depth);
  }
  return total;
}

double integrate_log(const std::function<double(double)>& log_f, double a, double b,
                     double tol) {
  double shift = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 128; ++i) {
    shift = std::max(shift, log_f(a + (b - a) * i / 128.0));
  }
  if (!std::isfinite(shift)) return -std::numeric_limits<double>::infinity();
  const double mass =
      adaptive_quadrature([&](double x) { return std::exp(log_f(x) - shift); }, a, b, tol);
  if (!(mass > 0.0)) return -std::numeric_limits<double>::infinity();
  return std::log(mass) + shift;
}

IsingExact ising_enumerate(const IsingLattice& lattice) {
  const int m = lattice.size;
  const int n = m * m;
  if (n > 16) throw TooLarge("ising enumeration limited to M <= 4");
  Eigen::RowVectorXd config(n);
  double max_neg_be = -std::numeric_limits<double>::infinity();
  std::vector<double> energies;
  energies.reserve(std::size_t{1} << n);
  for (std::uint32_t bits = 0; bits < (std::uint32_t{1} << n); ++bits) {
    for (int i = 0; i < n; ++i) config[i] = (bits >> i) & 1 ? 1.0 : -1.0;
    const double e = ising_energy(lattice, config);
    energies.push_back(e);
    max_neg_be = std::max(max_neg_be, -lattice.beta * e);
  }
  double z = 0.0, ez = 0.0;
  for (double e : energies) {
    const double w = std::exp(-lattice.beta * e - max_neg_be);
    z += w;
    ez += e * w;
  }
  return {std::log(z) + max_neg_be, ez / z};
}

double ising_transfer_matrix_log_z(const IsingLattice& lattice) {
  const int m = lattice.size;
  if (m > 5) throw TooLarge("transfer matrix limited to M <= 5");
  if (m < 2) return static_cast<double>(m) * std::numbers::ln2;
  const int rows = 1 << m;
  auto spin = [&](int r, int c) { return (r >> c) & 1 ? 1.0 : -1.0; };
  auto intra = [&](int r) {
    double e = 0.0;
    for (int c = 0; c < m; ++c) e += spin(r, c) * spin(r, (c + 1) % m);
    return e;
  };
  auto inter = [&](int r, int rp) {
    double e = 0.0;
    for (int c = 0; c < m; ++c) e += spin(r, c) * spin(rp, c);
    return e;
  };
  Eigen::MatrixXd t(rows, rows);
  for (int r = 0; r < rows; ++r) {
    for (int rp = 0; rp < rows; ++rp) {
      t(r, rp) = std::exp(lattice.beta * (intra(r) + inter(r, rp)));
    }
  }
  Eigen::MatrixXd power = t;
  for (int i = 1; i < m; ++i) power = power * t;
  return std::log(power.trace());
}

namespace {

// Fixed Simpson grid of a leaf's binomial-logistic factor. The factor has
// two-sided exponential tails with rates min(m, M-m) + 1, so a window of
// width 12 + 40/rate around the Beta-mean logit carries all the mass.
struct LeafFactorGrid {
  std::vector<double> theta;
  std::vector<double> log_f;  // log Binom + log Simpson weight * h / 3
  double m, trials, lchoose;
  double center, lo, hi;

  LeafFactorGrid(double m_, double trials_, int points) : m(m_), trials(trials_) {
    lchoose = std::lgamma(trials + 1.0) - std::lgamma(m + 1.0) - std::lgamma(trials - m + 1.0);
    const double p = (m + 1.0) / (trials + 2.0);
    center = std::log(p) - std::log1p(-p);
    const double rate = std::max(1.0, std::min(m, trials - m) + 1.0);
    const double width = 12.0 + 40.0 / rate;
    lo = center - width;
    hi = center + width;
    const double h = (hi - lo) / (points - 1);
    for (int j = 0; j < points; ++j) {
      const double t = lo + h * j;
      const double w = (j == 0 || j == points - 1) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
      theta.push_back(t);
      log_f.push_back(log_pmf(t) + std::log(w * h / 3.0));
    }
  }

  double log_pmf(double t) const {
    const double log_p = -std::log1p(std::exp(-std::abs(t))) + std::min(t, 0.0);
    const double log_1mp = -std::log1p(std::exp(-std::abs(t))) + std::min(-t, 0.0);
    return lchoose + m * log_p + (trials - m) * log_1mp;
  }
};

double logsumexp_acc(const std::vector<double>& terms) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double t : terms) mx = std::max(mx, t);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

}  // namespace

double hier_two_leaf_star_log_z(double m1, double trials1, double m2, double trials2,
                                double tol) {
  const int points = tol <= 5e-9 ? 801 : 501;
  const LeafFactorGrid g1(m1, trials1, points), g2(m2, trials2, points);
  constexpr double kHalfLog2Pi = 0.9189385332046727;

  // The root integral collapses analytically:
  //   ∫ (B1 * N_s2)(t) (B2 * N_s2)(t) dt = ∫∫ B1(a) B2(b) N(a - b; 0, 2 s2).
  const double h = (g1.hi - g1.lo) / (points - 1);
  auto pair_log = [&](double s2) {
    const double var = 2.0 * s2;
    std::vector<double> terms;
    if (std::sqrt(var) >= 3.0 * h) {
      terms.reserve(g1.theta.size() * g2.theta.size());
      const double norm = -kHalfLog2Pi - 0.5 * std::log(var);
      for (std::size_t a = 0; a < g1.theta.size(); ++a) {
        for (std::size_t b = 0; b < g2.theta.size(); ++b) {
          const double d = g1.theta[a] - g2.theta[b];
          terms.push_back(g1.log_f[a] + g2.log_f[b] + norm - 0.5 * d * d / var);
        }
      }
    } else {
      // Narrow kernel: substitute b = a + sqrt(var) u so the grid resolves it.
      const int un = 241;
      const double uh = 20.0 / (un - 1);
      const double sd = std::sqrt(var);
      terms.reserve(g1.theta.size() * un);
      for (std::size_t a = 0; a < g1.theta.size(); ++a) {
        for (int j = 0; j < un; ++j) {
          const double u = -10.0 + uh * j;
          const double w = (j == 0 || j == un - 1) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
          terms.push_back(g1.log_f[a] + g2.log_pmf(g1.theta[a] + sd * u) - kHalfLog2Pi -
                          0.5 * u * u + std::log(w * uh / 3.0));
        }
      }
    }
    return logsumexp_acc(terms);
  };

  return integrate_log([&](double s2) { return -s2 + pair_log(std::max(s2, 1e-9)); }, 1e-9,
                       42.0, std::max(tol, 1e-9) * 10.0);
}

double brute_force_log_z(const IsingLattice& lattice) { return ising_enumerate(lattice).log_z; }

double brute_force_log_z(const HierarchicalBinomial& model) {
  model.validate();
  const auto& root = model.nodes[model.root];
  auto leaves_of = [&](int id) {
    std::vector<int> out;
    for (int c : model.nodes[id].children) {
      if (model.nodes[c].is_leaf()) out.push_back(c);
    }
    return out;
  };
  // root -> (leaf, leaf): three continuous dimensions.
  if (root.children.size() == 2) {
    const auto ls = leaves_of(model.root);
    if (ls.size() == 2) {
      return hier_two_leaf_star_log_z(model.nodes[ls[0]].successes, model.nodes[ls[0]].trials,
                                      model.nodes[ls[1]].successes, model.nodes[ls[1]].trials);
    }
  }
  // root -> internal -> (leaf, leaf): the single-child root edge integrates
  // out exactly (the subtree is translation invariant in the root variable),
  // leaving the same three-dimensional integral.
  if (root.children.size() == 1) {
    const int mid = root.children[0];
    const auto ls = leaves_of(mid);
    if (ls.size() == 2 && model.nodes[mid].children.size() == 2) {
      return hier_two_leaf_star_log_z(model.nodes[ls[0]].successes, model.nodes[ls[0]].trials,
                                      model.nodes[ls[1]].successes, model.nodes[ls[1]].trials);
    }
  }
  throw TooLarge("hierarchical brute force supports shapes with <= 3 effective dimensions");
}

double brute_force_log_z(const GaussianSquaredLattice& model) {
  if (model.size != 1) throw TooLarge("GSM brute force supports the single-site model");
  GsmSiteInit init(model.y[0], model.lambda2, model.obs_sd);
  return init.log_normalizer();
}

}  // namespace dcsmc
