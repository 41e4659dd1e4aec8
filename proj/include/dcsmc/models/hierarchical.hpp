#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dcsmc/tree.hpp"

namespace dcsmc {

/// Scaled Gaussian c * N(theta; mean, 1/precision) in natural parameters;
/// precision 0 encodes a flat message of height exp(log_scale).
struct GaussianMessage {
  double precision = 0.0;
  double precision_times_mean = 0.0;
  double log_scale = 0.0;
};

/// Edge factor N(theta_leaf; theta_parent, sigma2) viewed as a message in the
/// parent variable (the leaf's sampled value substitutes directly).
GaussianMessage leaf_edge_message(double theta_leaf, double sigma2);

/// Pushes a child message through its parent edge: the convolution
/// ∫ m(theta_c) N(theta_c; theta_p, sigma2) dtheta_c.
GaussianMessage convolve_edge(const GaussianMessage& child, double sigma2);

GaussianMessage multiply_messages(const GaussianMessage& a, const GaussianMessage& b);

/// log ∫ m(theta) dtheta; throws RootImproperPosterior on a flat message.
double integrate_message(const GaussianMessage& m);

/// One child's contribution to an upward message: either an instantiated leaf
/// value or an internal child's message.
struct ChildTerm {
  bool is_leaf = false;
  double theta = 0.0;
  GaussianMessage message;
};

/// m_t(theta_t) = ∫ Π_c m_c(theta_c) N(theta_c; theta_t, sigma2) dtheta_c with
/// the node's shared edge variance. Throws NonPositiveVariance.
GaussianMessage hier_upward_message(const std::vector<ChildTerm>& children, double sigma2);

/// Binomial-logistic hierarchy: leaves observe m_t successes of M_t trials
/// with p_t = logistic(theta_t); edges add N(0, sigma_t^2) increments with the
/// variance shared across a node's out-edges and Exp(1) priors; the root
/// theta gets an improper flat prior. Internal thetas are marginalized.
struct HierModelNode {
  std::string name;
  int parent = -1;
  std::vector<int> children;
  double successes = 0.0;
  double trials = 0.0;
  bool is_leaf() const { return children.empty(); }
};

struct HierarchicalBinomial {
  std::vector<HierModelNode> nodes;
  int root = 0;

  int leaf_count() const;
  void validate() const;  // propriety + bookkeeping; throws ProprietyViolation
};

struct HierRecord {
  std::string county, district, school;
  int year = 0;
  double trials = 0.0, successes = 0.0;
};

/// root -> county -> district -> school -> year-leaf.
HierarchicalBinomial build_hier_model(const std::vector<HierRecord>& rows);

double log_logistic(double theta);        // log p
double log_logistic_prime(double theta);  // log p(1-p)
double binomial_log_pmf(double successes, double trials, double theta);

/// Beta(1+m, 1+M-m) draw mapped through logit, with the change-of-variables
/// log-density. The gamma/q ratio is the constant -log(M+1).
std::pair<double, double> hier_leaf_proposal(double m, double M, Rng& rng);
double hier_leaf_proposal_log_density(double m, double M, double theta);
double hier_leaf_log_gamma(double m, double M, double theta);
double hier_leaf_log_weight(double M);

/// Decomposition mirroring the model tree. Node states are the post-order
/// concatenation of the subtree's parameters (leaf thetas, internal sigma^2
/// last), so the root state lists every parameter in model post-order.
struct HierTree {
  DecompositionNode root;
  std::shared_ptr<const HierarchicalBinomial> model;
  std::vector<int> postorder;      // model node per root coordinate
  std::vector<int> coord_of_node;  // model node -> root coordinate
};

HierTree hier_decompose(const HierarchicalBinomial& model, bool binarize = false);

/// Per post-order step: the mirrored tree node and the slice of the root
/// layout its subtree occupies (the post-order baseline weights on it).
/// Pointers reference `tree`; recompute after moving it.
struct PostorderStep {
  const DecompositionNode* dc_node = nullptr;
  int model_node = -1;
  bool leaf = false;
  double m = 0.0, M = 0.0;
  int span_start = 0, span_len = 0;
};
std::vector<PostorderStep> postorder_plan(const HierTree& tree);

}  // namespace dcsmc
