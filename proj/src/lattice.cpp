#include "dcsmc/models/lattice.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>

#include "dcsmc/errors.hpp"

namespace dcsmc {

namespace {

// Per-node block payload shared by the evaluator closures.
struct BlockGeom {
  std::vector<int> sites;                           // local -> global
  std::vector<std::pair<int, int>> internal_edges;  // local pairs, each edge once
  std::vector<std::pair<int, int>> added_edges;     // internal minus children's
  std::vector<std::pair<int, int>> cross_pairs;     // (child1-local, child2-local)
  std::vector<std::vector<std::pair<int, std::uint8_t>>> adj;  // neighbour, added flag
};

struct Block {
  int r0, c0, h, w;
};

int site_id(int m, int r, int c) { return r * m + c; }

// Builds the self-similar block tree, splitting the longer axis (ties split
// rows) with floor/ceil halves. Edges internal to a block are the global
// periodic edges with both endpoints inside it; an edge internal to the parent
// but to neither child always crosses the two children, so `added` == `cross`.
// Origin-site enumeration counts each torus edge once (for M = 2 the wrap
// neighbour repeats a pair, matching the two distinct edges there).
struct LatticeBuilder {
  int m;
  std::vector<int> local_of;
  std::map<int, std::vector<long>> added_by_depth;
  std::function<void(DecompositionNode&, const std::shared_ptr<BlockGeom>&)> attach;

  std::shared_ptr<BlockGeom> last_geom;

  DecompositionNode build(const Block& b, int depth) {
    DecompositionNode node;
    auto geom = std::make_shared<BlockGeom>();

    if (b.h == 1 && b.w == 1) {
      geom->sites = {site_id(m, b.r0, b.c0)};
      geom->adj.resize(1);
      node.state_dim = 1;
      node.incremental_dim = 1;
    } else {
      const bool split_rows = b.h >= b.w;
      Block b1 = b, b2 = b;
      if (split_rows) {
        b1.h = b.h / 2;
        b2.r0 = b.r0 + b1.h;
        b2.h = b.h - b1.h;
      } else {
        b1.w = b.w / 2;
        b2.c0 = b.c0 + b1.w;
        b2.w = b.w - b1.w;
      }
      node.children.push_back(build(b1, depth + 1));
      auto g1 = last_geom;
      node.children.push_back(build(b2, depth + 1));
      auto g2 = last_geom;

      geom->sites = g1->sites;
      geom->sites.insert(geom->sites.end(), g2->sites.begin(), g2->sites.end());
      const int n1 = static_cast<int>(g1->sites.size());
      const int n = static_cast<int>(geom->sites.size());

      for (int a = 0; a < n; ++a) local_of[geom->sites[a]] = a;
      if (m >= 2) {
        for (int a = 0; a < n; ++a) {
          const int s = geom->sites[a];
          const int r = s / m, c = s % m;
          const int right = local_of[site_id(m, r, (c + 1) % m)];
          const int down = local_of[site_id(m, (r + 1) % m, c)];
          if (right >= 0) geom->internal_edges.emplace_back(a, right);
          if (down >= 0) geom->internal_edges.emplace_back(a, down);
        }
      }
      for (int a = 0; a < n; ++a) local_of[geom->sites[a]] = -1;

      geom->adj.resize(n);
      for (auto [a, bb] : geom->internal_edges) {
        const bool cross = (a < n1) != (bb < n1);
        if (cross) {
          geom->added_edges.emplace_back(a, bb);
          geom->cross_pairs.emplace_back(a < n1 ? a : bb, (a < n1 ? bb : a) - n1);
        }
        const std::uint8_t flag = cross ? 1 : 0;
        geom->adj[a].emplace_back(bb, flag);
        geom->adj[bb].emplace_back(a, flag);
      }
      added_by_depth[depth].push_back(static_cast<long>(geom->added_edges.size()));

      node.state_dim = n;
      node.incremental_dim = 0;
    }

    attach(node, geom);
    last_geom = geom;
    return node;
  }
};

CouplingTable cross_table(const std::vector<std::pair<int, int>>& cross,
                          const ParticlePopulation& p1, const ParticlePopulation& p2,
                          bool squared_difference, double unit) {
  CouplingTable t;
  const Eigen::Index e = static_cast<Eigen::Index>(cross.size());
  Eigen::MatrixXf a(p1.size(), e), b(p2.size(), e);
  for (Eigen::Index j = 0; j < e; ++j) {
    a.col(j) = p1.states.col(cross[j].first).cast<float>();
    b.col(j) = p2.states.col(cross[j].second).cast<float>();
  }
  t.raw.noalias() = a * b.transpose();
  if (squared_difference) {
    // rho = -0.5 sum (x - y)^2 = sum xy - 0.5 sum x^2 - 0.5 sum y^2
    t.raw.colwise() -= 0.5f * a.rowwise().squaredNorm();
    t.raw.rowwise() -= 0.5f * b.rowwise().squaredNorm().transpose();
  }
  t.unit = unit;
  t.discrete = !squared_difference;  // spin sums are exact small integers
  return t;
}

template <typename AttachFn>
LatticeTree build_lattice_tree(int m, bool strict, AttachFn&& attach_fn) {
  if (m < 1) throw ConfigError("lattice size must be at least 1");
  if (strict && (m & (m - 1)) != 0) {
    throw NotPowerOfTwo("lattice bisection wants a power-of-2 side, got " + std::to_string(m));
  }
  LatticeBuilder builder;
  builder.m = m;
  builder.local_of.assign(static_cast<std::size_t>(m) * m, -1);
  builder.attach = attach_fn;

  LatticeTree tree;
  tree.root = builder.build(Block{0, 0, m, m}, 0);
  tree.added_edges_by_depth = std::move(builder.added_by_depth);
  tree.site_of_coord = builder.last_geom->sites;
  tree.coord_of_site.assign(static_cast<std::size_t>(m) * m, 0);
  for (int a = 0; a < static_cast<int>(tree.site_of_coord.size()); ++a) {
    tree.coord_of_site[tree.site_of_coord[a]] = a;
  }
  tree.root_edges = builder.last_geom->internal_edges;
  index_tree(tree.root);
  return tree;
}

}  // namespace

double ising_energy(const IsingLattice& lattice, ConstStateRef config) {
  const int m = lattice.size;
  if (config.size() != static_cast<Eigen::Index>(m) * m) {
    throw DimensionMismatch("ising_energy: config length is not M^2");
  }
  if (m < 2) return 0.0;
  double e = 0.0;
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      const double x = config[site_id(m, r, c)];
      e += x * config[site_id(m, r, (c + 1) % m)];
      e += x * config[site_id(m, (r + 1) % m, c)];
    }
  }
  return -e;
}

double LatticeTree::energy(ConstStateRef root_state) const {
  double e = 0.0;
  for (auto [a, b] : root_edges) e += root_state[a] * root_state[b];
  return -e;
}

Eigen::RowVectorXd LatticeTree::to_global(ConstStateRef root_state) const {
  Eigen::RowVectorXd out(root_state.size());
  for (Eigen::Index a = 0; a < root_state.size(); ++a) out[site_of_coord[a]] = root_state[a];
  return out;
}

namespace {

void attach_ising_node(DecompositionNode& node, const std::shared_ptr<BlockGeom>& geom,
                       double beta) {
  if (node.is_leaf()) {
    node.log_gamma = [](ConstStateRef) { return 0.0; };
    DecompositionNode::Proposal p;
    p.sample = [](ConstStateRef, StateRef out, Rng& rng) {
      out[0] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
    };
    p.log_density = [](ConstStateRef, ConstStateRef) { return -std::numbers::ln2; };
    node.proposal = p;
    return;
  }
  node.log_gamma = [geom, beta](ConstStateRef s) {
    double e = 0.0;
    for (auto [a, b] : geom->internal_edges) e += s[a] * s[b];
    return beta * e;
  };
  node.merge_target = node.log_gamma;
  node.coupling_log = [geom, beta](ConstStateRef s) {
    double e = 0.0;
    for (auto [a, b] : geom->added_edges) e += s[a] * s[b];
    return beta * e;
  };
  node.kernel_sweep = [geom, beta](StateRef s, double alpha, Rng& rng) -> std::pair<long, long> {
    long accepts = 0;
    const long nsites = static_cast<long>(geom->adj.size());
    for (long i = 0; i < nsites; ++i) {
      double in_child = 0.0, added = 0.0;
      for (auto [nb, fl] : geom->adj[i]) (fl ? added : in_child) += s[nb];
      const double delta = -2.0 * s[i] * beta * (in_child + alpha * added);
      if (delta >= 0.0 || rng.next_uniform() < std::exp(delta)) {
        s[i] = -s[i];
        ++accepts;
      }
    }
    return {nsites, accepts};
  };
  const auto cross = geom->cross_pairs;
  node.pairwise_coupling = [cross, beta](const ParticlePopulation& p1,
                                         const ParticlePopulation& p2) {
    return cross_table(cross, p1, p2, false, beta);
  };
}

struct GsmShared {
  GaussianSquaredLattice model;
  std::vector<std::shared_ptr<GsmSiteInit>> inits;
  double proposal_sd;

  double site_term(double x, int global_site) const {
    const double r = model.y[global_site] - x * x;
    return -0.5 * std::log(2.0 * std::numbers::pi * model.obs_sd * model.obs_sd) -
           r * r / (2.0 * model.obs_sd * model.obs_sd) - 0.5 * model.lambda2 * x * x;
  }
};

void attach_gsm_node(DecompositionNode& node, const std::shared_ptr<BlockGeom>& geom,
                     const std::shared_ptr<GsmShared>& sh) {
  if (node.is_leaf()) {
    const int site = geom->sites[0];
    auto init = sh->inits[site];
    node.log_gamma = [sh, site](ConstStateRef s) { return sh->site_term(s[0], site); };
    DecompositionNode::Proposal p;
    p.sample = [init](ConstStateRef, StateRef out, Rng& rng) { out[0] = init->sample(rng); };
    p.log_density = [init](ConstStateRef, ConstStateRef x) { return init->log_density(x[0]); };
    node.proposal = p;
    return;
  }
  node.log_gamma = [sh, geom](ConstStateRef s) {
    double v = 0.0;
    for (int a = 0; a < static_cast<int>(geom->sites.size()); ++a) {
      v += sh->site_term(s[a], geom->sites[a]);
    }
    const double l1 = sh->model.lambda1;
    for (auto [a, b] : geom->internal_edges) {
      const double d = s[a] - s[b];
      v -= 0.5 * l1 * d * d;
    }
    return v;
  };
  node.merge_target = node.log_gamma;
  node.coupling_log = [sh, geom](ConstStateRef s) {
    double v = 0.0;
    const double l1 = sh->model.lambda1;
    for (auto [a, b] : geom->added_edges) {
      const double d = s[a] - s[b];
      v -= 0.5 * l1 * d * d;
    }
    return v;
  };
  node.kernel_sweep = [sh, geom](StateRef s, double alpha, Rng& rng) -> std::pair<long, long> {
    long accepts = 0;
    const double l1 = sh->model.lambda1;
    const long nsites = static_cast<long>(geom->adj.size());
    for (long i = 0; i < nsites; ++i) {
      const double x = s[i];
      const double xp = x + sh->proposal_sd * rng.next_gaussian();
      double delta = sh->site_term(xp, geom->sites[i]) - sh->site_term(x, geom->sites[i]);
      for (auto [nb, fl] : geom->adj[i]) {
        const double dn = xp - s[nb], dold = x - s[nb];
        const double contrib = -0.5 * l1 * (dn * dn - dold * dold);
        delta += fl ? alpha * contrib : contrib;
      }
      if (delta >= 0.0 || rng.next_uniform() < std::exp(delta)) {
        s[i] = xp;
        ++accepts;
      }
    }
    return {nsites, accepts};
  };
  const auto cross = geom->cross_pairs;
  const double l1 = sh->model.lambda1;
  node.pairwise_coupling = [cross, l1](const ParticlePopulation& p1,
                                       const ParticlePopulation& p2) {
    return cross_table(cross, p1, p2, true, l1);
  };
}

}  // namespace

LatticeTree lattice_decompose(const IsingLattice& lattice, LatticeScheme scheme) {
  (void)scheme;  // the lattice bisection is already binary under both schemes
  const double beta = lattice.beta;
  return build_lattice_tree(lattice.size, true,
                            [beta](DecompositionNode& n, const std::shared_ptr<BlockGeom>& g) {
                              attach_ising_node(n, g, beta);
                            });
}

LatticeTree lattice_decompose_general(const IsingLattice& lattice) {
  const double beta = lattice.beta;
  return build_lattice_tree(lattice.size, false,
                            [beta](DecompositionNode& n, const std::shared_ptr<BlockGeom>& g) {
                              attach_ising_node(n, g, beta);
                            });
}

MarkovKernelSpec single_flip_kernel() { return {MarkovKernelSpec::Kind::single_flip, 0.0}; }
MarkovKernelSpec random_walk_kernel(double step_sd) {
  return {MarkovKernelSpec::Kind::random_walk, step_sd};
}

namespace {

double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                            double fa, double fm, double fb, double whole, double tol,
                            int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double simpson(const std::function<double(double)>& f, double a, double b, double tol,
               int depth = 42) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth);
}

// The squared-observation likelihood puts near-delta spikes at +-sqrt(y) with
// double-exponential shoulders; a cell partition keeps the spikes from being
// missed and the depth cap keeps the shoulders from being over-refined.
double composite_simpson(const std::function<double(double)>& f, double a, double b,
                         int cells, double cell_tol, int depth) {
  double total = 0.0;
  for (int i = 0; i < cells; ++i) {
    const double lo = a + (b - a) * i / cells;
    const double hi = a + (b - a) * (i + 1) / cells;
    total += simpson(f, lo, hi, cell_tol, depth);
  }
  return total;
}

}  // namespace

GsmSiteInit::GsmSiteInit(double y, double lambda2, double obs_sd, int grid_points)
    : y_(y), lambda2_(lambda2), sd_(obs_sd) {
  const double b = std::sqrt(std::max(y + 6.0 * obs_sd, 0.0)) + 6.0;
  lo_ = -b;
  hi_ = b;

  // Shift by the coarse-scan maximum so the quadrature integrand is O(1).
  double shift = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 512; ++i) {
    shift = std::max(shift, unnormalized_log(lo_ + (hi_ - lo_) * i / 512.0));
  }
  if (!std::isfinite(shift)) throw QuadratureNonFinite("site initializer has no mass");
  const double sh = shift;
  auto f = [this, sh](double x) { return std::exp(unnormalized_log(x) - sh); };
  const double mass = composite_simpson(f, lo_, hi_, 512, 1e-12, 14);
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw QuadratureNonFinite("site initializer normalization underflowed");
  }
  log_z_ = std::log(mass) + shift;

  grid_f_.resize(grid_points + 1);
  cdf_.resize(grid_points + 1);
  cell_ = (hi_ - lo_) / grid_points;
  for (int i = 0; i <= grid_points; ++i) {
    grid_f_[i] = std::exp(unnormalized_log(lo_ + cell_ * i) - log_z_);
  }
  cdf_[0] = 0.0;
  double acc = 0.0;
  for (int i = 1; i <= grid_points; ++i) {
    acc += 0.5 * (grid_f_[i - 1] + grid_f_[i]) * cell_;
    cdf_[i] = acc;
  }
}

double GsmSiteInit::unnormalized_log(double x) const {
  const double r = y_ - x * x;
  return -0.5 * std::log(2.0 * std::numbers::pi * sd_ * sd_) - r * r / (2.0 * sd_ * sd_) -
         0.5 * lambda2_ * x * x;
}

double GsmSiteInit::log_density(double x) const {
  if (x < lo_ || x > hi_) return -std::numeric_limits<double>::infinity();
  return unnormalized_log(x) - log_z_;
}

double GsmSiteInit::sample(Rng& rng) const {
  const double u = rng.next_uniform() * cdf_[cdf_.size() - 1];
  const double* beg = cdf_.data();
  const double* pos = std::lower_bound(beg + 1, beg + cdf_.size(), u);
  const Eigen::Index i = pos - beg - 1;  // cell [i, i+1]
  const double u0 = u - cdf_[i];
  const double f0 = grid_f_[i], f1 = grid_f_[i + 1];
  const double slope = (f1 - f0) / cell_;
  double t;
  if (std::abs(slope) < 1e-300) {
    t = f0 > 0.0 ? u0 / f0 : 0.5 * cell_;
  } else {
    const double disc = f0 * f0 + 2.0 * slope * u0;
    t = (std::sqrt(std::max(disc, 0.0)) - f0) / slope;
  }
  t = std::min(std::max(t, 0.0), cell_);
  return lo_ + cell_ * static_cast<double>(i) + t;
}

LatticeTree gsm_decompose(const GaussianSquaredLattice& model, MarkovKernelSpec kernel) {
  const int m = model.size;
  if (model.y.size() != static_cast<Eigen::Index>(m) * m) {
    throw DimensionMismatch("gsm: observation grid length is not M^2");
  }
  if (!(model.lambda1 > 0.0 && model.lambda2 > 0.0 && model.obs_sd > 0.0)) {
    throw ConfigError("gsm: lambda1, lambda2, obs_sd must be positive");
  }
  auto sh = std::make_shared<GsmShared>();
  sh->model = model;
  sh->proposal_sd =
      kernel.kind == MarkovKernelSpec::Kind::random_walk && kernel.step_sd > 0.0 ? kernel.step_sd
                                                                                 : 0.132;
  sh->inits.reserve(static_cast<std::size_t>(m) * m);
  for (Eigen::Index k = 0; k < model.y.size(); ++k) {
    sh->inits.push_back(std::make_shared<GsmSiteInit>(model.y[k], model.lambda2, model.obs_sd));
  }
  return build_lattice_tree(m, true,
                            [sh](DecompositionNode& n, const std::shared_ptr<BlockGeom>& g) {
                              attach_gsm_node(n, g, sh);
                            });
}

FullSpaceProblem ising_full_problem(const IsingLattice& lattice) {
  const int m = lattice.size;
  const double beta = lattice.beta;
  FullSpaceProblem p;
  p.dim = static_cast<Eigen::Index>(m) * m;
  p.init_sample = [](StateRef s, Rng& rng) {
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
  };
  IsingLattice model = lattice;
  p.energy = [model](ConstStateRef s) { return ising_energy(model, s); };
  const double log_u = -static_cast<double>(p.dim) * std::numbers::ln2;
  p.ops.gap = [model, log_u](ConstStateRef s) {
    return -model.beta * ising_energy(model, s) - log_u;
  };
  // The four-direction neighbour sum already counts M = 2 torus edges twice;
  // the single-site torus has no edges at all.
  p.ops.kernel_sweep = [beta, m](StateRef s, double alpha, Rng& rng) -> std::pair<long, long> {
    long accepts = 0;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) {
        const int i = site_id(m, r, c);
        const double nb =
            m < 2 ? 0.0
                  : s[site_id(m, r, (c + 1) % m)] + s[site_id(m, r, (c + m - 1) % m)] +
                        s[site_id(m, (r + 1) % m, c)] + s[site_id(m, (r + m - 1) % m, c)];
        const double delta = -2.0 * s[i] * beta * alpha * nb;
        if (delta >= 0.0 || rng.next_uniform() < std::exp(delta)) {
          s[i] = -s[i];
          ++accepts;
        }
      }
    }
    return {static_cast<long>(m) * m, accepts};
  };
  return p;
}

FullSpaceProblem gsm_full_problem(const GaussianSquaredLattice& model, double proposal_sd) {
  const int m = model.size;
  FullSpaceProblem p;
  p.dim = static_cast<Eigen::Index>(m) * m;
  auto sh = std::make_shared<GsmShared>();
  sh->model = model;
  sh->proposal_sd = proposal_sd;
  for (Eigen::Index k = 0; k < model.y.size(); ++k) {
    sh->inits.push_back(std::make_shared<GsmSiteInit>(model.y[k], model.lambda2, model.obs_sd));
  }
  p.init_sample = [sh](StateRef s, Rng& rng) {
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = sh->inits[i]->sample(rng);
  };
  // Site terms cancel between gamma and the initializer, leaving the edge
  // quadratic plus the initializer normalizers.
  p.ops.gap = [sh, m](ConstStateRef s) {
    double v = 0.0;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) {
        const double x = s[site_id(m, r, c)];
        const double dr = x - s[site_id(m, r, (c + 1) % m)];
        const double dd = x - s[site_id(m, (r + 1) % m, c)];
        v -= 0.5 * sh->model.lambda1 * (dr * dr + dd * dd);
      }
    }
    for (const auto& init : sh->inits) v += init->log_normalizer();
    return v;
  };
  p.energy = [sh, m](ConstStateRef s) {
    double v = 0.0;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) {
        const double x = s[site_id(m, r, c)];
        const double dr = x - s[site_id(m, r, (c + 1) % m)];
        const double dd = x - s[site_id(m, (r + 1) % m, c)];
        v += 0.5 * sh->model.lambda1 * (dr * dr + dd * dd) + 0.5 * sh->model.lambda2 * x * x;
      }
    }
    return v;
  };
  p.ops.kernel_sweep = [sh, m](StateRef s, double alpha, Rng& rng) -> std::pair<long, long> {
    const double sd2 = sh->model.obs_sd * sh->model.obs_sd;
    long accepts = 0;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) {
        const int i = site_id(m, r, c);
        const double x = s[i];
        const double xp = x + sh->proposal_sd * rng.next_gaussian();
        const double yk = sh->model.y[i];
        const double rn = yk - xp * xp, ro = yk - x * x;
        double delta = -(rn * rn - ro * ro) / (2.0 * sd2) -
                       0.5 * sh->model.lambda2 * (xp * xp - x * x);
        if (m >= 2) {
          const int nbs[4] = {site_id(m, r, (c + 1) % m), site_id(m, r, (c + m - 1) % m),
                              site_id(m, (r + 1) % m, c), site_id(m, (r + m - 1) % m, c)};
          for (int nb : nbs) {
            const double dn = xp - s[nb], dold = x - s[nb];
            delta -= alpha * 0.5 * sh->model.lambda1 * (dn * dn - dold * dold);
          }
        }
        if (delta >= 0.0 || rng.next_uniform() < std::exp(delta)) {
          s[i] = xp;
          ++accepts;
        }
      }
    }
    return {static_cast<long>(m) * m, accepts};
  };
  return p;
}

GaussianSquaredLattice make_synthetic_gsm(int size, double lambda1, double lambda2,
                                          double obs_sd, std::uint64_t seed,
                                          Eigen::VectorXd* truth) {
  const int n = size * size;
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(n, n);
  if (size >= 2) {
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const int i = site_id(size, r, c);
        for (int nb : {site_id(size, r, (c + 1) % size), site_id(size, (r + 1) % size, c)}) {
          prec(i, i) += lambda1;
          prec(nb, nb) += lambda1;
          prec(i, nb) -= lambda1;
          prec(nb, i) -= lambda1;
        }
      }
    }
  }
  prec.diagonal().array() += lambda2;

  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw Error("synthetic GSM precision not SPD");

  SeedPath sp(seed);
  Rng rng = sp.stream(Stage::init);
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.next_gaussian();
  const Eigen::VectorXd x = llt.matrixU().solve(z);

  GaussianSquaredLattice model;
  model.size = size;
  model.lambda1 = lambda1;
  model.lambda2 = lambda2;
  model.obs_sd = obs_sd;
  model.y.resize(n);
  for (int i = 0; i < n; ++i) model.y[i] = x[i] * x[i] + obs_sd * rng.next_gaussian();
  if (truth) *truth = x;
  return model;
}

Eigen::VectorXd load_grid(const std::string& path, Eigen::Index expected_size) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file " + path);
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  if (expected_size >= 0 && static_cast<Eigen::Index>(values.size()) != expected_size) {
    throw DimensionMismatch("grid file " + path + " has " + std::to_string(values.size()) +
                            " values, expected " + std::to_string(expected_size));
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void save_grid(const std::string& path, const Eigen::VectorXd& values, int per_row) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write grid file " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    out << values[i] << ((i + 1) % per_row == 0 ? '\n' : ' ');
  }
}

}  // namespace dcsmc
