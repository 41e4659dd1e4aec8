#pragma once

#include <functional>

#include "dcsmc/models/hierarchical.hpp"
#include "dcsmc/models/lattice.hpp"

namespace dcsmc {

/// Adaptive Simpson quadrature of a plain integrand.
double adaptive_quadrature(const std::function<double(double)>& f, double a, double b,
                           double tol);

/// Cell-partitioned adaptive Simpson with a per-cell depth cap; robust for
/// integrands with near-delta spikes the global rule would miss.
double composite_quadrature(const std::function<double(double)>& f, double a, double b,
                            int cells, double cell_tol, int depth = 14);

/// log ∫ exp(log_f) over [a, b], shift-stabilized by a coarse scan.
double integrate_log(const std::function<double(double)>& log_f, double a, double b,
                     double tol);

struct IsingExact {
  double log_z = 0.0;
  double mean_energy = 0.0;
};

/// Full 2^(M^2) enumeration; M <= 4.
IsingExact ising_enumerate(const IsingLattice& lattice);

/// Independent route: trace of the M-fold transfer-matrix product; M <= 5.
double ising_transfer_matrix_log_z(const IsingLattice& lattice);

/// Quadrature value for the root-plus-two-leaves model (3 continuous dims).
double hier_two_leaf_star_log_z(double m1, double trials1, double m2, double trials2,
                                double tol = 1e-9);

/// Exact log normalizers for small instances; throws TooLarge beyond the
/// documented sizes (Ising M <= 4; hierarchical shapes reducible to <= 3
/// dims; GSM single site).
double brute_force_log_z(const IsingLattice& lattice);
double brute_force_log_z(const HierarchicalBinomial& model);
double brute_force_log_z(const GaussianSquaredLattice& model);

}  // namespace dcsmc
