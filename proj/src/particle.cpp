#include "dcsmc/particle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dcsmc/errors.hpp"

namespace dcsmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double max_finite_or_throw(const Eigen::VectorXd& v) {
  double m = kNegInf;
  for (Eigen::Index i = 0; i < v.size(); ++i) m = std::max(m, v[i]);
  if (!(m > kNegInf)) throw AllWeightsZero();
  return m;
}

void permute_inplace(std::vector<Eigen::Index>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.next_below(static_cast<std::uint32_t>(i))]);
  }
}

}  // namespace

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = max_finite_or_throw(v);
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] > kNegInf) s += std::exp(v[i] - m);
  }
  return m + std::log(s);
}

Eigen::VectorXd normalize_weights(const Eigen::VectorXd& log_weights) {
  const double lse = log_sum_exp(log_weights);
  Eigen::VectorXd out(log_weights.size());
  for (Eigen::Index i = 0; i < log_weights.size(); ++i) {
    out[i] = log_weights[i] > kNegInf ? std::exp(log_weights[i] - lse) : 0.0;
  }
  return out;
}

double ess(const Eigen::VectorXd& log_weights) {
  const double m = max_finite_or_throw(log_weights);
  double s1 = 0.0, s2 = 0.0;
  for (Eigen::Index i = 0; i < log_weights.size(); ++i) {
    if (log_weights[i] == kNegInf) continue;
    const double w = std::exp(log_weights[i] - m);
    s1 += w;
    s2 += w * w;
  }
  return s1 * s1 / s2;
}

double cess(const Eigen::VectorXd& prev_norm_weights,
            const Eigen::VectorXd& incremental_log_weights) {
  if (prev_norm_weights.size() != incremental_log_weights.size()) {
    throw DimensionMismatch("cess: weight vectors differ in length");
  }
  const double n = static_cast<double>(prev_norm_weights.size());
  const double m = max_finite_or_throw(incremental_log_weights);
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < prev_norm_weights.size(); ++i) {
    if (incremental_log_weights[i] == kNegInf) continue;
    const double a = std::exp(incremental_log_weights[i] - m);
    num += prev_norm_weights[i] * a;
    den += prev_norm_weights[i] * a * a;
  }
  if (den <= 0.0) throw AllWeightsZero("cess: all increments have zero mass");
  return n * num * num / den;
}

std::vector<Eigen::Index> resample_indices(const Eigen::VectorXd& log_weights,
                                           ResampleScheme scheme, Rng rng) {
  const Eigen::Index n = log_weights.size();
  const Eigen::VectorXd w = normalize_weights(log_weights);
  Eigen::VectorXd cum(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += w[i];
    cum[i] = acc;
  }
  cum[n - 1] = 1.0;

  std::vector<Eigen::Index> idx;
  idx.reserve(n);

  switch (scheme) {
    case ResampleScheme::multinomial: {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u = rng.next_uniform();
        const double* beg = cum.data();
        idx.push_back(std::lower_bound(beg, beg + n, u) - beg);
      }
      return idx;  // iid draws, no permutation needed
    }
    case ResampleScheme::residual: {
      Eigen::Index assigned = 0;
      Eigen::VectorXd residual(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double scaled = w[i] * static_cast<double>(n);
        const double flo = std::floor(scaled);
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(flo); ++k) idx.push_back(i);
        assigned += static_cast<Eigen::Index>(flo);
        residual[i] = scaled - flo;
      }
      const Eigen::Index remaining = n - assigned;
      if (remaining > 0) {
        const double rsum = residual.sum();
        Eigen::VectorXd rcum(n);
        double racc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          racc += residual[i] / rsum;
          rcum[i] = racc;
        }
        rcum[n - 1] = 1.0;
        for (Eigen::Index k = 0; k < remaining; ++k) {
          const double u = rng.next_uniform();
          const double* beg = rcum.data();
          idx.push_back(std::lower_bound(beg, beg + n, u) - beg);
        }
      }
      break;
    }
    case ResampleScheme::systematic: {
      const double u0 = rng.next_uniform() / static_cast<double>(n);
      Eigen::Index j = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u = u0 + static_cast<double>(i) / static_cast<double>(n);
        while (cum[j] < u) ++j;
        idx.push_back(j);
      }
      break;
    }
  }
  permute_inplace(idx, rng);
  return idx;
}

ParticlePopulation resample(const ParticlePopulation& pop, ResampleScheme scheme, Rng rng) {
  const auto idx = resample_indices(pop.log_weights, scheme, rng);
  ParticlePopulation out;
  out.states.resize(pop.states.rows(), pop.states.cols());
  for (Eigen::Index i = 0; i < pop.size(); ++i) out.states.row(i) = pop.states.row(idx[i]);
  out.log_weights.setZero(pop.size());
  out.log_z_hat = pop.log_z_hat;
  return out;
}

double fold_logz(const ParticlePopulation& pop) {
  return pop.log_z_hat + log_sum_exp(pop.log_weights) -
         std::log(static_cast<double>(pop.size()));
}

}  // namespace dcsmc
