#include "greylag/regression.hpp"

#include <algorithm>
#include <cmath>

#include "greylag/errors.hpp"

namespace greylag {

// ---------------------------------------------------------------- B-splines

BSplineBasis::BSplineBasis(double lo, double hi, int n_basis, int degree)
    : lo_(lo), hi_(hi), n_basis_(n_basis), degree_(degree) {
  if (degree < 0) throw DomainError("spline degree must be non-negative");
  if (n_basis < degree + 1) {
    throw DomainError("a degree-" + std::to_string(degree) + " basis needs at least " +
                      std::to_string(degree + 1) + " functions, got " + std::to_string(n_basis));
  }
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) {
    throw DomainError("the covariate range must be finite and non-degenerate");
  }
  const int intervals = n_basis - degree;
  const double h = (hi - lo) / double(intervals);
  knots_.resize(n_basis + degree + 1);
  for (Eigen::Index j = 0; j < knots_.size(); ++j) knots_[j] = lo + double(j - degree) * h;
  knots_[degree] = lo;
  knots_[n_basis] = hi;
}

BSplineBasis BSplineBasis::from_data(const Eigen::VectorXd& x, int n_basis, int degree) {
  if (x.size() == 0) throw DomainError("no covariate values");
  if (!x.allFinite()) throw DomainError("covariate values must be finite");
  return BSplineBasis(x.minCoeff(), x.maxCoeff(), n_basis, degree);
}

Eigen::MatrixXd BSplineBasis::evaluate(const Eigen::VectorXd& x) const {
  const int p = n_basis_, d = degree_;
  const double h = (hi_ - lo_) / double(p - d);
  const double tol = 1e-12 * (hi_ - lo_);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.size(), p);
  std::vector<double> n_val(std::size_t(d) + 1), left(std::size_t(d) + 1), right(std::size_t(d) + 1);
  const Eigen::VectorXd& t = knots_;
  for (Eigen::Index r = 0; r < x.size(); ++r) {
    const double xr = x[r];
    if (!std::isfinite(xr) || xr < lo_ - tol || xr > hi_ + tol) {
      throw DomainError("covariate value " + std::to_string(xr) + " lies outside the knot span [" +
                        std::to_string(lo_) + ", " + std::to_string(hi_) + "]");
    }
    const double xc = std::clamp(xr, lo_, hi_);
    // Knot interval [t_i, t_i+1) holding xc, with i in [d, p - 1].
    int i = d + int(std::floor((xc - lo_) / h));
    i = std::clamp(i, d, p - 1);
    if (xc < t[i]) --i;
    else if (i + 1 < p && xc >= t[i + 1]) ++i;
    i = std::clamp(i, d, p - 1);
    // Cox-de Boor, triangular form.
    n_val[0] = 1.0;
    for (int j = 1; j <= d; ++j) {
      left[std::size_t(j)] = xc - t[i + 1 - j];
      right[std::size_t(j)] = t[i + j] - xc;
      double saved = 0.0;
      for (int k = 0; k < j; ++k) {
        const double tmp = n_val[std::size_t(k)] / (right[std::size_t(k + 1)] + left[std::size_t(j - k)]);
        n_val[std::size_t(k)] = saved + right[std::size_t(k + 1)] * tmp;
        saved = left[std::size_t(j - k)] * tmp;
      }
      n_val[std::size_t(j)] = saved;
    }
    for (int k = 0; k <= d; ++k) out(r, i - d + k) = std::max(0.0, n_val[std::size_t(k)]);
  }
  return out;
}

Eigen::MatrixXd bspline_basis(const Eigen::VectorXd& x, int n_basis, int degree) {
  return BSplineBasis::from_data(x, n_basis, degree).evaluate(x);
}

Eigen::MatrixXd difference_penalty(int p, int order) {
  if (order < 1) throw DomainError("difference order must be at least 1");
  if (p <= order) {
    throw DomainError("a difference penalty of order " + std::to_string(order) + " needs more than " +
                      std::to_string(order) + " coefficients, got " + std::to_string(p));
  }
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(p, p);
  for (int r = 0; r < order; ++r) {
    const Eigen::Index rows = d.rows() - 1;
    d = (d.bottomRows(rows) - d.topRows(rows)).eval();
  }
  return d.transpose() * d;
}

SumToZero apply_sum_to_zero(const Eigen::MatrixXd& basis, const Eigen::MatrixXd& penalty) {
  if (basis.size() == 0) throw DegenerateError("empty basis");
  const Eigen::Index p = basis.cols();
  if (penalty.rows() != p || penalty.cols() != p) {
    throw ShapeError("penalty is " + std::to_string(penalty.rows()) + "x" +
                     std::to_string(penalty.cols()) + " but the basis has " + std::to_string(p) +
                     " columns");
  }
  const Eigen::VectorXd c = basis.colwise().sum().transpose();
  if (p < 2) throw DegenerateError("the constraint leaves no free coefficient");
  if (c.norm() == 0.0) throw DegenerateError("basis columns already sum to zero");
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(p, p);
  SumToZero out;
  out.back_transform = q.rightCols(p - 1);
  out.basis = basis * out.back_transform;
  out.penalty = out.back_transform.transpose() * penalty * out.back_transform;
  out.penalty = (0.5 * (out.penalty + out.penalty.transpose())).eval();
  return out;
}

double tau2_gibbs_draw(const PrngKey& key, const Eigen::VectorXd& beta, const Eigen::MatrixXd& penalty,
                       int rank, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("inverse gamma hyperparameters must be positive");
  if (rank < 0) throw DomainError("penalty rank must be non-negative");
  double q = beta.dot(penalty * beta);
  const double tol = 1e-10 * (1.0 + penalty.cwiseAbs().maxCoeff() * beta.squaredNorm());
  if (!std::isfinite(q) || q < -tol) throw DomainError("beta' K beta is negative or not finite");
  q = std::max(q, 0.0);
  RandomStream rng(key);
  const double shape = a + 0.5 * double(rank);
  const double scale = b + 0.5 * q;
  return scale / rng.gamma(shape);
}

// ---------------------------------------------------------------- terms

std::string_view link_name(InverseLink link) {
  switch (link) {
    case InverseLink::Identity: return "identity";
    case InverseLink::Exp: return "exp";
    case InverseLink::Logistic: return "logistic";
  }
  return "?";
}

InverseLink link_from_name(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  if (lower == "identity") return InverseLink::Identity;
  if (lower == "exp") return InverseLink::Exp;
  if (lower == "logistic" || lower == "sigmoid") return InverseLink::Logistic;
  throw DomainError("unknown inverse link '" + std::string(name) +
                    "' (expected identity, exp or logistic)");
}

Eigen::MatrixXd SmoothTerm::design(const Eigen::VectorXd& x) const {
  if (!spline) throw StateError("term has no spline basis to evaluate");
  return spline->evaluate(x) * back_transform;
}

SmoothTerm pspline_term(const Eigen::VectorXd& x, int n_basis, int degree, int order,
                        Constraint constraint) {
  SmoothTerm term;
  term.spline = BSplineBasis::from_data(x, n_basis, degree);
  const Eigen::MatrixXd b = term.spline->evaluate(x);
  const Eigen::MatrixXd k = difference_penalty(n_basis, order);
  term.constraint = constraint;
  if (constraint == Constraint::SumToZero) {
    SumToZero c = apply_sum_to_zero(b, k);
    term.basis = std::move(c.basis);
    term.penalty = std::move(c.penalty);
    term.back_transform = std::move(c.back_transform);
  } else {
    term.basis = b;
    term.penalty = k;
    term.back_transform = Eigen::MatrixXd::Identity(n_basis, n_basis);
  }
  term.rank = numeric_rank(term.penalty);
  return term;
}

SmoothTerm custom_term(Eigen::MatrixXd basis, Eigen::MatrixXd penalty, Constraint constraint) {
  SmoothTerm term;
  term.constraint = constraint;
  if (constraint == Constraint::SumToZero) {
    SumToZero c = apply_sum_to_zero(basis, penalty);
    term.basis = std::move(c.basis);
    term.penalty = std::move(c.penalty);
    term.back_transform = std::move(c.back_transform);
  } else {
    if (penalty.rows() != basis.cols() || penalty.cols() != basis.cols()) {
      throw ShapeError("penalty does not match the basis columns");
    }
    term.back_transform = Eigen::MatrixXd::Identity(basis.cols(), basis.cols());
    term.basis = std::move(basis);
    term.penalty = std::move(penalty);
  }
  term.rank = numeric_rank(term.penalty);
  return term;
}

// ---------------------------------------------------------------- graph builder

TermIds term_ids(const std::string& predictor, std::size_t term) {
  const std::string base = predictor + "_np" + std::to_string(term);
  return {base + "_beta", base + "_tau2", base + "_a", base + "_b", base + "_X", base + "_fx"};
}

NodeId intercept_id(const std::string& predictor) { return predictor + "_p0_beta"; }
NodeId eta_id(const std::string& predictor) { return predictor + "_eta"; }

namespace {

WeakFnPtr link_fn(InverseLink link) {
  switch (link) {
    case InverseLink::Identity: return weak::identity();
    case InverseLink::Exp: return weak::exp();
    case InverseLink::Logistic: return weak::logistic();
  }
  return weak::identity();
}

}  // namespace

ModelGraph build_distreg_model(const DistRegModel& model) {
  const auto& names = param_names(model.family);
  if (model.predictors.size() != names.size()) {
    throw DomainError(std::string(family_name(model.family)) + " has " +
                      std::to_string(names.size()) + " parameters but " +
                      std::to_string(model.predictors.size()) + " predictors were given");
  }
  const Eigen::Index n = model.response.size();
  if (n == 0) throw ShapeError("empty response");

  std::vector<Node> nodes;
  std::vector<std::pair<std::string, ParamSource>> response_params;
  for (const auto& name : names) {
    const auto it = std::find_if(model.predictors.begin(), model.predictors.end(),
                                 [&](const Predictor& p) { return p.name == name; });
    if (it == model.predictors.end()) {
      throw DomainError("no predictor for parameter '" + name + "' of " +
                        std::string(family_name(model.family)));
    }
    const Predictor& pred = *it;
    std::vector<NodeId> summands{intercept_id(pred.name)};
    nodes.push_back(Node::strong(intercept_id(pred.name), Value::scalar(pred.intercept), Role::Parameter));
    for (std::size_t j = 0; j < pred.terms.size(); ++j) {
      const SmoothTerm& term = pred.terms[j];
      const TermIds ids = term_ids(pred.name, j);
      if (term.basis.rows() != n) {
        throw ShapeError("term " + std::to_string(j) + " of '" + pred.name + "' has " +
                         std::to_string(term.basis.rows()) + " rows, the response has " +
                         std::to_string(n));
      }
      const Eigen::Index p = term.basis.cols();
      if (term.penalty.rows() != p || term.penalty.cols() != p) {
        throw ShapeError("penalty of term " + std::to_string(j) + " of '" + pred.name +
                         "' does not match its basis");
      }
      nodes.push_back(Node::strong(ids.a, Value::scalar(term.a)));
      nodes.push_back(Node::strong(ids.b, Value::scalar(term.b)));
      nodes.push_back(Node::strong(ids.basis, Value::matrix(term.basis)));
      nodes.push_back(Node::parameter(ids.tau2, Value::scalar(1.0),
                                      DistributionSpec::inverse_gamma(ids.a, ids.b)));
      DistributionSpec prior = DistributionSpec::mvn_degenerate(
          ids.tau2, Value::matrix(term.penalty), Value::scalar(term.rank),
          Value::scalar(log_pseudo_determinant(term.penalty)));
      nodes.push_back(Node::parameter(ids.beta, Value::vector(Eigen::VectorXd::Zero(p)), prior));
      nodes.push_back(Node::weak(ids.fitted, weak::matvec(), {ids.basis, ids.beta}));
      summands.push_back(ids.fitted);
    }
    // A lone intercept still yields an n-vector.
    if (summands.size() == 1) {
      const NodeId zero = pred.name + "_zero";
      nodes.push_back(Node::strong(zero, Value::vector(Eigen::VectorXd::Zero(n))));
      summands.push_back(zero);
    }
    nodes.push_back(Node::weak(eta_id(pred.name), weak::add(), summands));
    nodes.push_back(Node::weak(pred.name, link_fn(pred.link), {eta_id(pred.name)}));
    response_params.emplace_back(name, ParamSource(pred.name));
  }
  DistributionSpec likelihood;
  likelihood.family = model.family;
  likelihood.params = std::move(response_params);
  likelihood.validate();
  nodes.push_back(Node::observed(model.response_id, Value::vector(model.response), likelihood));

  ModelGraph graph(std::move(nodes));
  if (std::isinf(graph.node_log_prob(model.response_id))) {
    throw LinkDomainError("the initial predictors map outside the parameter domain of " +
                          std::string(family_name(model.family)));
  }
  return graph;
}

// ---------------------------------------------------------------- Gibbs

namespace {

double resolve(const ParamSource& src, const ModelState& state) {
  if (const auto* id = std::get_if<NodeId>(&src)) return state.value(*id).item();
  return std::get<Value>(src).item();
}

const ParamSource& param(const DistributionSpec& spec, const std::string& name) {
  for (const auto& [n, src] : spec.params) {
    if (n == name) return src;
  }
  throw DomainError("distribution has no parameter '" + name + "'");
}

}  // namespace

std::shared_ptr<GibbsKernel> tau2_gibbs_kernel(const ModelGraph& graph, const NodeId& beta,
                                               const NodeId& tau2) {
  if (!graph.contains(beta) || !graph.contains(tau2)) {
    throw StateError("unknown node '" + (graph.contains(beta) ? tau2 : beta) + "'");
  }
  if (graph.kind(tau2) != NodeKind::Strong) {
    throw StateError("'" + tau2 + "' is not a strong node (transformed variances need a gradient kernel)");
  }
  const auto& prior = graph.distribution(beta);
  if (!prior || prior->family != Family::MultivariateNormalDegenerate) {
    throw StateError("'" + beta + "' has no degenerate normal prior");
  }
  const auto* var = std::get_if<NodeId>(&param(*prior, "variance"));
  if (!var || *var != tau2) throw StateError("the prior of '" + beta + "' is not scaled by '" + tau2 + "'");
  const auto* k = std::get_if<Value>(&param(*prior, "penalty"));
  const auto* r = std::get_if<Value>(&param(*prior, "rank"));
  if (!k || !r) throw StateError("the penalty and rank of '" + beta + "' must be constants");
  const auto& hyper = graph.distribution(tau2);
  if (!hyper || hyper->family != Family::InverseGamma || hyper->transform) {
    throw StateError("'" + tau2 + "' needs an untransformed inverse gamma prior");
  }
  const Eigen::MatrixXd penalty = k->mat();
  const int rank = int(std::lround(r->item()));
  const ParamSource a = param(*hyper, "concentration");
  const ParamSource b = param(*hyper, "scale");
  return std::make_shared<GibbsKernel>(
      std::vector<NodeId>{tau2},
      [beta, tau2, penalty, rank, a, b](const PrngKey& key, const ModelState& state) {
        const Eigen::VectorXd coef = state.value(beta).vec();
        Position out;
        out.set(tau2, Value::scalar(tau2_gibbs_draw(key, coef, penalty, rank, resolve(a, state),
                                                    resolve(b, state))));
        return out;
      });
}

}  // namespace greylag
