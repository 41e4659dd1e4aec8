#include "dcsmc/models/hierarchical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "dcsmc/errors.hpp"

namespace dcsmc {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kHalfLog2Pi = 0.9189385332046727;  // log sqrt(2 pi)

double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -kHalfLog2Pi - 0.5 * std::log(var) - 0.5 * d * d / var;
}
}  // namespace

GaussianMessage leaf_edge_message(double theta_leaf, double sigma2) {
  if (!(sigma2 > 0.0)) throw NonPositiveVariance("edge variance must be positive");
  return {1.0 / sigma2, theta_leaf / sigma2, 0.0};
}

GaussianMessage convolve_edge(const GaussianMessage& child, double sigma2) {
  if (!(sigma2 > 0.0)) throw NonPositiveVariance("edge variance must be positive");
  if (child.precision == 0.0) return child;  // flat stays flat
  const double var = 1.0 / child.precision + sigma2;
  return {1.0 / var, (child.precision_times_mean / child.precision) / var, child.log_scale};
}

GaussianMessage multiply_messages(const GaussianMessage& a, const GaussianMessage& b) {
  GaussianMessage out;
  out.precision = a.precision + b.precision;
  out.precision_times_mean = a.precision_times_mean + b.precision_times_mean;
  out.log_scale = a.log_scale + b.log_scale;
  if (a.precision > 0.0 && b.precision > 0.0) {
    // N(.; mu_a, va) N(.; mu_b, vb) = N(mu_a; mu_b, va + vb) N(.; ., .)
    const double mu_a = a.precision_times_mean / a.precision;
    const double mu_b = b.precision_times_mean / b.precision;
    out.log_scale += log_normal(mu_a, mu_b, 1.0 / a.precision + 1.0 / b.precision);
  }
  return out;
}

double integrate_message(const GaussianMessage& m) {
  if (!(m.precision > 0.0)) {
    throw RootImproperPosterior("flat message cannot be integrated");
  }
  return m.log_scale;
}

GaussianMessage hier_upward_message(const std::vector<ChildTerm>& children, double sigma2) {
  if (!(sigma2 > 0.0)) throw NonPositiveVariance("hier_upward_message: sigma2 <= 0");
  GaussianMessage acc;  // flat unit start
  for (const auto& c : children) {
    const GaussianMessage crossed =
        c.is_leaf ? leaf_edge_message(c.theta, sigma2) : convolve_edge(c.message, sigma2);
    acc = multiply_messages(acc, crossed);
  }
  return acc;
}

int HierarchicalBinomial::leaf_count() const {
  int n = 0;
  for (const auto& node : nodes) n += node.is_leaf() ? 1 : 0;
  return n;
}

void HierarchicalBinomial::validate() const {
  if (nodes.empty()) throw ProprietyViolation("empty hierarchical model");
  if (nodes[root].is_leaf()) {
    throw ProprietyViolation("root must have children (a lone leaf has no proper posterior)");
  }
  bool proper = false;
  for (const auto& node : nodes) {
    if (!node.is_leaf()) continue;
    if (node.successes < 0 || node.trials < node.successes) {
      throw ProprietyViolation("leaf with successes outside [0, trials]");
    }
    proper = proper || (node.successes > 0 && node.successes < node.trials);
  }
  if (!proper) {
    throw ProprietyViolation("no leaf with 0 < successes < trials; posterior is improper");
  }
}

HierarchicalBinomial build_hier_model(const std::vector<HierRecord>& rows) {
  HierarchicalBinomial model;
  model.nodes.push_back({"root", -1, {}, 0.0, 0.0});
  std::map<std::string, int> index;
  auto child_of = [&](int parent, const std::string& key, const std::string& name) {
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(model.nodes.size());
    model.nodes.push_back({name, parent, {}, 0.0, 0.0});
    model.nodes[parent].children.push_back(id);
    index.emplace(key, id);
    return id;
  };
  for (const auto& r : rows) {
    const std::string ck = "c/" + r.county;
    const std::string dk = ck + "/d/" + r.district;
    const std::string sk = dk + "/s/" + r.school;
    const std::string yk = sk + "/y/" + std::to_string(r.year);
    const int county = child_of(0, ck, r.county);
    const int district = child_of(county, dk, r.district);
    const int school = child_of(district, sk, r.school);
    const int leaf = child_of(school, yk, std::to_string(r.year));
    model.nodes[leaf].trials += r.trials;
    model.nodes[leaf].successes += r.successes;
  }
  model.validate();
  return model;
}

double log_logistic(double theta) { return -std::log1p(std::exp(-std::abs(theta))) +
                                           std::min(theta, 0.0); }

double log_logistic_prime(double theta) {
  const double a = std::abs(theta);
  return -a - 2.0 * std::log1p(std::exp(-a));
}

double binomial_log_pmf(double successes, double trials, double theta) {
  const double log_p = log_logistic(theta);
  const double log_1mp = log_logistic(-theta);
  return std::lgamma(trials + 1.0) - std::lgamma(successes + 1.0) -
         std::lgamma(trials - successes + 1.0) + successes * log_p +
         (trials - successes) * log_1mp;
}

std::pair<double, double> hier_leaf_proposal(double m, double M, Rng& rng) {
  const double p = rng.next_beta(1.0 + m, 1.0 + M - m);
  const double theta = std::log(p) - std::log1p(-p);
  return {theta, hier_leaf_proposal_log_density(m, M, theta)};
}

double hier_leaf_proposal_log_density(double m, double M, double theta) {
  const double log_p = log_logistic(theta);
  const double log_1mp = log_logistic(-theta);
  const double lbeta = std::lgamma(1.0 + m) + std::lgamma(1.0 + M - m) - std::lgamma(M + 2.0);
  return m * log_p + (M - m) * log_1mp - lbeta + log_logistic_prime(theta);
}

double hier_leaf_log_gamma(double m, double M, double theta) {
  return binomial_log_pmf(m, M, theta) + log_logistic_prime(theta);
}

double hier_leaf_log_weight(double M) { return -std::log(M + 1.0); }

namespace {

// Post-order description of one mirrored subtree; coordinate j of the node
// state belongs to entry j.
struct HierEval {
  struct Entry {
    bool leaf;
    double m, M;
    int nchildren;
  };
  std::vector<Entry> post;

  struct Contribution {
    bool is_point;
    double theta = 0.0;
    GaussianMessage message;
    double own_log_gamma = 0.0;  // leaf prior term or message integral
  };

  // Returns log I_t plus per-direct-child subtree terms; -inf on sigma^2
  // outside the Exp(1) support.
  double walk(ConstStateRef s, double* coupling) const {
    std::vector<Contribution> stack;
    stack.reserve(post.size());
    double site_terms = 0.0;
    for (std::size_t j = 0; j < post.size(); ++j) {
      const Entry& e = post[j];
      if (e.leaf) {
        Contribution c;
        c.is_point = true;
        c.theta = s[static_cast<Eigen::Index>(j)];
        c.own_log_gamma = log_logistic_prime(c.theta);
        site_terms += binomial_log_pmf(e.m, e.M, c.theta);
        stack.push_back(c);
        continue;
      }
      const double sigma2 = s[static_cast<Eigen::Index>(j)];
      if (!(sigma2 > 0.0)) return kNegInf;
      site_terms += -sigma2;  // Exp(1) log prior
      GaussianMessage acc;
      double child_terms = 0.0;
      for (int k = 0; k < e.nchildren; ++k) {
        const Contribution c = stack.back();
        stack.pop_back();
        child_terms += c.own_log_gamma;
        const GaussianMessage crossed =
            c.is_point ? leaf_edge_message(c.theta, sigma2) : convolve_edge(c.message, sigma2);
        acc = multiply_messages(acc, crossed);
      }
      Contribution out;
      out.is_point = false;
      out.message = acc;
      out.own_log_gamma = integrate_message(acc);
      if (j + 1 == post.size() && coupling) *coupling = out.own_log_gamma - child_terms;
      stack.push_back(out);
    }
    return site_terms + stack.back().own_log_gamma;
  }
};

struct TreeBuildState {
  const HierarchicalBinomial* model;
  std::vector<int> postorder;
  std::vector<int> coord_of_node;
};

DecompositionNode build_dc_node(TreeBuildState& st, int model_node, bool binarize);

DecompositionNode make_dummy(std::vector<DecompositionNode> pair) {
  DecompositionNode dummy;
  dummy.incremental_dim = 0;
  int dim = 0;
  for (const auto& c : pair) dim += c.state_dim;
  dummy.state_dim = dim;
  std::vector<std::function<double(ConstStateRef)>> gammas;
  std::vector<int> dims;
  for (const auto& c : pair) {
    gammas.push_back(c.log_gamma);
    dims.push_back(c.state_dim);
  }
  dummy.log_gamma = [gammas, dims](ConstStateRef s) {
    double v = 0.0;
    int off = 0;
    for (std::size_t i = 0; i < gammas.size(); ++i) {
      v += gammas[i](s.segment(off, dims[i]));
      off += dims[i];
    }
    return v;
  };
  dummy.coupling_log = [](ConstStateRef) { return 0.0; };
  dummy.children = std::move(pair);
  return dummy;
}

DecompositionNode build_dc_node(TreeBuildState& st, int model_node, bool binarize) {
  const HierModelNode& mn = st.model->nodes[model_node];
  DecompositionNode node;

  if (mn.is_leaf()) {
    node.state_dim = 1;
    node.incremental_dim = 1;
    const double m = mn.successes, M = mn.trials;
    node.log_gamma = [m, M](ConstStateRef s) { return hier_leaf_log_gamma(m, M, s[0]); };
    DecompositionNode::Proposal p;
    p.sample = [m, M](ConstStateRef, StateRef out, Rng& rng) {
      out[0] = hier_leaf_proposal(m, M, rng).first;
    };
    p.log_density = [m, M](ConstStateRef, ConstStateRef x) {
      return hier_leaf_proposal_log_density(m, M, x[0]);
    };
    node.proposal = p;
    st.coord_of_node[model_node] = static_cast<int>(st.postorder.size());
    st.postorder.push_back(model_node);
    return node;
  }

  auto eval = std::make_shared<HierEval>();
  std::vector<DecompositionNode> children;
  for (int c : mn.children) {
    children.push_back(build_dc_node(st, c, binarize));
    // Children contribute their whole post-order layout.
  }
  // Assemble this node's post-order from the model structure directly.
  std::function<void(int)> emit = [&](int id) {
    for (int c : st.model->nodes[id].children) emit(c);
    const HierModelNode& n = st.model->nodes[id];
    eval->post.push_back(
        {n.is_leaf(), n.successes, n.trials, static_cast<int>(n.children.size())});
  };
  emit(model_node);

  st.coord_of_node[model_node] = static_cast<int>(st.postorder.size());
  st.postorder.push_back(model_node);

  int dim = 0;
  for (const auto& c : children) dim += c.state_dim;
  node.state_dim = dim + 1;
  node.incremental_dim = 1;
  node.log_gamma = [eval](ConstStateRef s) { return eval->walk(s, nullptr); };
  node.coupling_log = [eval](ConstStateRef s) {
    double coupling = kNegInf;
    const double g = eval->walk(s, &coupling);
    return g == kNegInf ? kNegInf : coupling;
  };
  DecompositionNode::Proposal p;
  p.sample = [](ConstStateRef, StateRef out, Rng& rng) { out[0] = rng.next_exponential(); };
  p.log_density = [](ConstStateRef, ConstStateRef x) {
    return x[0] >= 0.0 ? -x[0] : kNegInf;
  };
  node.proposal = p;

  if (binarize) {
    while (children.size() > 2) {
      std::vector<DecompositionNode> reduced;
      for (std::size_t i = 0; i + 1 < children.size(); i += 2) {
        std::vector<DecompositionNode> pair;
        pair.push_back(std::move(children[i]));
        pair.push_back(std::move(children[i + 1]));
        reduced.push_back(make_dummy(std::move(pair)));
      }
      if (children.size() % 2 == 1) reduced.push_back(std::move(children.back()));
      children = std::move(reduced);
    }
  }
  node.children = std::move(children);
  return node;
}

}  // namespace

HierTree hier_decompose(const HierarchicalBinomial& model, bool binarize) {
  model.validate();
  HierTree tree;
  tree.model = std::make_shared<HierarchicalBinomial>(model);

  TreeBuildState st;
  st.model = tree.model.get();
  st.coord_of_node.assign(model.nodes.size(), -1);
  tree.root = build_dc_node(st, model.root, binarize);
  tree.postorder = std::move(st.postorder);
  tree.coord_of_node = std::move(st.coord_of_node);
  index_tree(tree.root);
  return tree;
}

std::vector<PostorderStep> postorder_plan(const HierTree& tree) {
  std::vector<PostorderStep> steps;
  // Dummy nodes (binarize) flatten transparently: they carry no parameter.
  std::function<void(const DecompositionNode*, int, int*)> collect =
      [&](const DecompositionNode* dc, int model_node, int* cursor) {
        const HierModelNode& mn = tree.model->nodes[model_node];
        const int start = *cursor;
        std::vector<const DecompositionNode*> real;
        std::function<void(const DecompositionNode*)> flatten =
            [&](const DecompositionNode* n) {
              for (const auto& c : n->children) {
                if (!c.proposal && !c.children.empty()) {
                  flatten(&c);  // dummy product node
                } else {
                  real.push_back(&c);
                }
              }
            };
        flatten(dc);
        for (std::size_t i = 0; i < real.size(); ++i) {
          collect(real[i], mn.children[i], cursor);
        }
        PostorderStep step;
        step.dc_node = dc;
        step.model_node = model_node;
        step.leaf = mn.is_leaf();
        step.m = mn.successes;
        step.M = mn.trials;
        step.span_start = start;
        *cursor += 1;
        step.span_len = *cursor - start;
        steps.push_back(step);
      };
  int cursor = 0;
  collect(&tree.root, tree.model->root, &cursor);
  return steps;
}

}  // namespace dcsmc
