#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dcsmc/random.hpp"

namespace dcsmc {

/// Weighted particle population: the universal currency of the engine.
///
/// `states` holds one particle per row (row-major so rows serialize as
/// contiguous byte spans). Weights live in natural-log space throughout;
/// `log_z_hat` is the running normalizing-constant estimate *excluding* the
/// current weights, so the full estimate of Z is `fold_logz(pop)`.
struct ParticlePopulation {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> states;
  Eigen::VectorXd log_weights;
  double log_z_hat = 0.0;

  Eigen::Index size() const { return log_weights.size(); }
  Eigen::Index dim() const { return states.cols(); }

  static ParticlePopulation uniform(Eigen::Index n, Eigen::Index dim) {
    ParticlePopulation p;
    p.states.setZero(n, dim);
    p.log_weights.setZero(n);
    return p;
  }
};

enum class ResampleScheme { multinomial, residual, systematic };

double log_sum_exp(const Eigen::VectorXd& v);

/// Normalized probabilities from log-weights, max-shifted. Throws
/// AllWeightsZero when every entry is -inf.
Eigen::VectorXd normalize_weights(const Eigen::VectorXd& log_weights);

/// Effective sample size (Σw)²/Σw², computed in log space; in [1, N].
double ess(const Eigen::VectorXd& log_weights);

/// Conditional ESS of a one-step reweighting: N(Σ W a)²/(Σ W a²) with
/// a_i = exp(incremental_log_weights_i); in (0, N].
double cess(const Eigen::VectorXd& prev_norm_weights,
            const Eigen::VectorXd& incremental_log_weights);

/// Ancestor indices with marginal copy probabilities ∝ weights. Residual and
/// systematic output is uniformly permuted so index-aligned pairings are
/// exchangeable (multinomial draws are already iid).
std::vector<Eigen::Index> resample_indices(const Eigen::VectorXd& log_weights,
                                           ResampleScheme scheme, Rng rng);

/// Unweighted copy of `pop` drawn by `scheme`; log_z_hat carried unchanged
/// (callers fold the weight mean first when they need it kept).
ParticlePopulation resample(const ParticlePopulation& pop, ResampleScheme scheme, Rng rng);

/// Full running estimate: log_z_hat + log mean(exp(log_weights)).
double fold_logz(const ParticlePopulation& pop);

}  // namespace dcsmc
