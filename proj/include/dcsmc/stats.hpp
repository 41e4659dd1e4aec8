#pragma once

#include <vector>

namespace dcsmc {

/// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);

/// Upper-tail p-value of a chi-square statistic.
double chi_square_pvalue(double stat, int dof);

/// Pearson statistic against expected counts; p-value with dof = cells - 1.
double chi_square_gof_pvalue(const std::vector<double>& observed,
                             const std::vector<double>& expected);

/// Initial-positive-sequence autocovariance truncation (Geyer): n / (1 + 2 Σ ρ_k)
/// with the sum cut at the first non-positive even-odd pair.
double autoregressive_ess(const std::vector<double>& series);

struct Quartiles {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
Quartiles quartiles(std::vector<double> values);

double mean(const std::vector<double>& values);
double std_dev(const std::vector<double>& values);

}  // namespace dcsmc
