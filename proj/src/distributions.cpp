#include "greylag/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/digamma.hpp>

#include "greylag/errors.hpp"

namespace greylag {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double log1p_exp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_broadcast(const Value& param, std::size_t n, const char* name) {
  if (param.size() != 1 && param.size() != n) {
    throw ShapeError(std::string("parameter '") + name + "' of size " +
                     std::to_string(param.size()) + " does not broadcast to size " +
                     std::to_string(n));
  }
}

void require_positive(const Value& param, const char* name) {
  for (double v : param.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError(std::string("parameter '") + name + "' must be positive and finite");
    }
  }
}

std::size_t broadcast_size(ParamValues params) {
  std::size_t n = 1;
  for (const Value* p : params) n = std::max(n, p->size());
  return n;
}

/// Per-element derivative reduced to the parameter's shape.
Value reduce_to(const std::vector<double>& per_element, const Value& param) {
  if (param.size() == 1 && per_element.size() != 1) {
    double total = 0.0;
    for (double d : per_element) total += d;
    return Value(param.shape(), {total});
  }
  return Value(param.shape(), per_element);
}

double quad_form(const Value& x, const Value& penalty) {
  const auto k = penalty.mat();
  const auto b = x.vec();
  return b.dot(k * b);
}

void check_mvn(const Value& x, ParamValues p) {
  const Value& penalty = *p[1];
  if (penalty.rank() != 2 || penalty.shape()[0] != penalty.shape()[1]) {
    throw ShapeError("penalty must be a square matrix");
  }
  if (x.size() != penalty.shape()[0]) {
    throw ShapeError("MVN-degenerate value of size " + std::to_string(x.size()) +
                     " does not match penalty of size " + std::to_string(penalty.shape()[0]));
  }
  require_positive(*p[0], "variance");
}

double base_log_prob(Family family, const Value& x, ParamValues p) {
  const std::size_t n = x.size();
  switch (family) {
    case Family::Normal: {
      check_broadcast(*p[0], n, "loc");
      check_broadcast(*p[1], n, "scale");
      require_positive(*p[1], "scale");
      double lp = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double s = p[1]->bcast(i);
        const double z = (x[i] - p[0]->bcast(i)) / s;
        lp += -kHalfLog2Pi - std::log(s) - 0.5 * z * z;
      }
      return lp;
    }
    case Family::InverseGamma: {
      check_broadcast(*p[0], n, "concentration");
      check_broadcast(*p[1], n, "scale");
      require_positive(*p[0], "concentration");
      require_positive(*p[1], "scale");
      double lp = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0)) return kNegInf;
        const double a = p[0]->bcast(i), b = p[1]->bcast(i);
        lp += a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x[i]) - b / x[i];
      }
      return lp;
    }
    case Family::Gamma: {
      check_broadcast(*p[0], n, "concentration");
      check_broadcast(*p[1], n, "rate");
      require_positive(*p[0], "concentration");
      require_positive(*p[1], "rate");
      double lp = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0)) return kNegInf;
        const double a = p[0]->bcast(i), r = p[1]->bcast(i);
        lp += a * std::log(r) - std::lgamma(a) + (a - 1.0) * std::log(x[i]) - r * x[i];
      }
      return lp;
    }
    case Family::MultivariateNormalDegenerate: {
      check_mvn(x, p);
      const double tau2 = p[0]->item();
      const double rank = p[2]->item();
      const double log_pdet = p[3]->item();
      return -0.5 * rank * std::log(2.0 * std::numbers::pi * tau2) + 0.5 * log_pdet -
             quad_form(x, *p[1]) / (2.0 * tau2);
    }
    case Family::Uniform: {
      check_broadcast(*p[0], n, "low");
      check_broadcast(*p[1], n, "high");
      double lp = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double lo = p[0]->bcast(i), hi = p[1]->bcast(i);
        if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
          throw DomainError("uniform requires finite low < high");
        }
        if (x[i] < lo || x[i] > hi) return kNegInf;
        lp -= std::log(hi - lo);
      }
      return lp;
    }
    case Family::Bernoulli: {
      check_broadcast(*p[0], n, "probs");
      double lp = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double q = p[0]->bcast(i);
        if (!(q >= 0.0 && q <= 1.0)) throw DomainError("bernoulli probs must lie in [0, 1]");
        if (x[i] == 1.0) {
          lp += std::log(q);
        } else if (x[i] == 0.0) {
          lp += std::log1p(-q);
        } else {
          return kNegInf;
        }
      }
      return lp;
    }
    case Family::Categorical: {
      const Value& probs = *p[0];
      double total = 0.0;
      for (double q : probs.data()) {
        if (!(q >= 0.0)) throw DomainError("categorical probs must be non-negative");
        total += q;
      }
      if (std::abs(total - 1.0) > 1e-8) throw DomainError("categorical probs must sum to 1");
      double lp = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double k = x[i];
        if (k != std::floor(k) || k < 0 || k >= double(probs.size())) return kNegInf;
        lp += std::log(probs[std::size_t(k)]);
      }
      return lp;
    }
  }
  return kNegInf;
}

Score base_score(Family family, const Value& x, ParamValues p) {
  const std::size_t n = x.size();
  Score out;
  out.params.resize(p.size());
  switch (family) {
    case Family::Normal: {
      check_broadcast(*p[0], n, "loc");
      check_broadcast(*p[1], n, "scale");
      require_positive(*p[1], "scale");
      std::vector<double> dx(n), dloc(n), dscale(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double s = p[1]->bcast(i);
        const double r = x[i] - p[0]->bcast(i);
        dx[i] = -r / (s * s);
        dloc[i] = r / (s * s);
        dscale[i] = -1.0 / s + r * r / (s * s * s);
      }
      out.x = Value(x.shape(), std::move(dx));
      out.params[0] = reduce_to(dloc, *p[0]);
      out.params[1] = reduce_to(dscale, *p[1]);
      return out;
    }
    case Family::InverseGamma: {
      require_positive(*p[0], "concentration");
      require_positive(*p[1], "scale");
      std::vector<double> dx(n), da(n), db(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0)) throw DomainError("inverse gamma score outside the support");
        const double a = p[0]->bcast(i), b = p[1]->bcast(i);
        dx[i] = -(a + 1.0) / x[i] + b / (x[i] * x[i]);
        da[i] = std::log(b) - boost::math::digamma(a) - std::log(x[i]);
        db[i] = a / b - 1.0 / x[i];
      }
      out.x = Value(x.shape(), std::move(dx));
      out.params[0] = reduce_to(da, *p[0]);
      out.params[1] = reduce_to(db, *p[1]);
      return out;
    }
    case Family::Gamma: {
      require_positive(*p[0], "concentration");
      require_positive(*p[1], "rate");
      std::vector<double> dx(n), da(n), dr(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0)) throw DomainError("gamma score outside the support");
        const double a = p[0]->bcast(i), r = p[1]->bcast(i);
        dx[i] = (a - 1.0) / x[i] - r;
        da[i] = std::log(r) - boost::math::digamma(a) + std::log(x[i]);
        dr[i] = a / r - x[i];
      }
      out.x = Value(x.shape(), std::move(dx));
      out.params[0] = reduce_to(da, *p[0]);
      out.params[1] = reduce_to(dr, *p[1]);
      return out;
    }
    case Family::MultivariateNormalDegenerate: {
      check_mvn(x, p);
      const double tau2 = p[0]->item();
      const double rank = p[2]->item();
      const auto k = p[1]->mat();
      const Eigen::VectorXd kb = 0.5 * (k * x.vec() + k.transpose() * x.vec());
      out.x = Value::vector(Eigen::VectorXd(-kb / tau2));
      const double q = x.vec().dot(kb);
      out.params[0] = Value(p[0]->shape(), {-0.5 * rank / tau2 + q / (2.0 * tau2 * tau2)});
      return out;
    }
    case Family::Uniform: {
      std::vector<double> dlo(n), dhi(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double w = p[1]->bcast(i) - p[0]->bcast(i);
        if (!(w > 0.0)) throw DomainError("uniform requires low < high");
        dlo[i] = 1.0 / w;
        dhi[i] = -1.0 / w;
      }
      out.x = Value::zeros(x.shape());
      out.params[0] = reduce_to(dlo, *p[0]);
      out.params[1] = reduce_to(dhi, *p[1]);
      return out;
    }
    case Family::Bernoulli: {
      std::vector<double> dq(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double q = p[0]->bcast(i);
        dq[i] = x[i] / q - (1.0 - x[i]) / (1.0 - q);
      }
      out.params[0] = reduce_to(dq, *p[0]);
      return out;
    }
    case Family::Categorical: {
      std::vector<double> dq(p[0]->size(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = std::size_t(x[i]);
        dq[k] += 1.0 / (*p[0])[k];
      }
      out.params[0] = Value(p[0]->shape(), std::move(dq));
      return out;
    }
  }
  return out;
}

Value apply_forward(const Bijector& b, const Value& u) {
  Value x(u.shape(), std::vector<double>(u.data().begin(), u.data().end()));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = b.forward(u[i]);
  return x;
}

}  // namespace

std::string_view family_name(Family family) {
  switch (family) {
    case Family::Normal: return "Normal";
    case Family::InverseGamma: return "InverseGamma";
    case Family::Gamma: return "Gamma";
    case Family::MultivariateNormalDegenerate: return "MultivariateNormalDegenerate";
    case Family::Uniform: return "Uniform";
    case Family::Bernoulli: return "Bernoulli";
    case Family::Categorical: return "Categorical";
  }
  return "?";
}

Family family_from_name(std::string_view name) {
  for (Family f : {Family::Normal, Family::InverseGamma, Family::Gamma,
                   Family::MultivariateNormalDegenerate, Family::Uniform, Family::Bernoulli,
                   Family::Categorical}) {
    if (family_name(f) == name) return f;
  }
  throw DomainError("unknown distribution family '" + std::string(name) + "'");
}

const std::vector<std::string>& param_names(Family family) {
  static const std::vector<std::string> normal{"loc", "scale"};
  static const std::vector<std::string> inverse_gamma{"concentration", "scale"};
  static const std::vector<std::string> gamma{"concentration", "rate"};
  static const std::vector<std::string> mvn{"variance", "penalty", "rank", "log_pdet"};
  static const std::vector<std::string> uniform{"low", "high"};
  static const std::vector<std::string> probs{"probs"};
  switch (family) {
    case Family::Normal: return normal;
    case Family::InverseGamma: return inverse_gamma;
    case Family::Gamma: return gamma;
    case Family::MultivariateNormalDegenerate: return mvn;
    case Family::Uniform: return uniform;
    case Family::Bernoulli:
    case Family::Categorical: return probs;
  }
  return normal;
}

bool is_discrete(Family family) {
  return family == Family::Bernoulli || family == Family::Categorical;
}

std::string_view bijector_name(BijectorKind kind) {
  switch (kind) {
    case BijectorKind::Identity: return "Identity";
    case BijectorKind::Exp: return "Exp";
    case BijectorKind::Log: return "Log";
    case BijectorKind::Softplus: return "Softplus";
  }
  return "?";
}

double Bijector::forward(double u) const {
  switch (kind) {
    case BijectorKind::Identity: return u;
    case BijectorKind::Exp: return std::exp(u);
    case BijectorKind::Log: return std::log(u);
    case BijectorKind::Softplus: return log1p_exp(u);
  }
  return u;
}

double Bijector::inverse(double x) const {
  switch (kind) {
    case BijectorKind::Identity: return x;
    case BijectorKind::Exp: return std::log(x);
    case BijectorKind::Log: return std::exp(x);
    case BijectorKind::Softplus: return x + std::log(-std::expm1(-x));
  }
  return x;
}

double Bijector::log_det_jacobian(double u) const {
  switch (kind) {
    case BijectorKind::Identity: return 0.0;
    case BijectorKind::Exp: return u;
    case BijectorKind::Log: return -std::log(u);
    case BijectorKind::Softplus: return -log1p_exp(-u);
  }
  return 0.0;
}

double Bijector::forward_derivative(double u) const {
  switch (kind) {
    case BijectorKind::Identity: return 1.0;
    case BijectorKind::Exp: return std::exp(u);
    case BijectorKind::Log: return 1.0 / u;
    case BijectorKind::Softplus: return sigmoid(u);
  }
  return 1.0;
}

double Bijector::log_det_jacobian_derivative(double u) const {
  switch (kind) {
    case BijectorKind::Identity: return 0.0;
    case BijectorKind::Exp: return 1.0;
    case BijectorKind::Log: return -1.0 / u;
    case BijectorKind::Softplus: return sigmoid(-u);
  }
  return 0.0;
}

DistributionSpec DistributionSpec::normal(ParamSource loc, ParamSource scale) {
  return {Family::Normal, {{"loc", std::move(loc)}, {"scale", std::move(scale)}}, {}};
}

DistributionSpec DistributionSpec::inverse_gamma(ParamSource concentration, ParamSource scale) {
  return {Family::InverseGamma,
          {{"concentration", std::move(concentration)}, {"scale", std::move(scale)}},
          {}};
}

DistributionSpec DistributionSpec::gamma(ParamSource concentration, ParamSource rate) {
  return {Family::Gamma,
          {{"concentration", std::move(concentration)}, {"rate", std::move(rate)}},
          {}};
}

DistributionSpec DistributionSpec::uniform(ParamSource low, ParamSource high) {
  return {Family::Uniform, {{"low", std::move(low)}, {"high", std::move(high)}}, {}};
}

DistributionSpec DistributionSpec::bernoulli(ParamSource probs) {
  return {Family::Bernoulli, {{"probs", std::move(probs)}}, {}};
}

DistributionSpec DistributionSpec::categorical(ParamSource probs) {
  return {Family::Categorical, {{"probs", std::move(probs)}}, {}};
}

DistributionSpec DistributionSpec::mvn_degenerate(ParamSource variance, ParamSource penalty,
                                                  ParamSource rank, ParamSource log_pdet) {
  return {Family::MultivariateNormalDegenerate,
          {{"variance", std::move(variance)},
           {"penalty", std::move(penalty)},
           {"rank", std::move(rank)},
           {"log_pdet", std::move(log_pdet)}},
          {}};
}

void DistributionSpec::validate() const {
  const auto& names = param_names(family);
  if (names.size() != params.size()) {
    throw DomainError(std::string(family_name(family)) + " expects " +
                      std::to_string(names.size()) + " parameters");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (params[i].first != names[i]) {
      throw DomainError(std::string(family_name(family)) + " parameter " + std::to_string(i) +
                        " must be '" + names[i] + "', got '" + params[i].first + "'");
    }
  }
}

DistributionSpec penalty_prior(ParamSource variance, const Eigen::MatrixXd& penalty) {
  return DistributionSpec::mvn_degenerate(std::move(variance), Value::matrix(penalty),
                                          Value::scalar(numeric_rank(penalty)),
                                          Value::scalar(log_pseudo_determinant(penalty)));
}

double log_prob(const DistributionSpec& spec, const Value& x, ParamValues params) {
  if (!spec.transform) return base_log_prob(spec.family, x, params);
  const Bijector& b = *spec.transform;
  const double lp = base_log_prob(spec.family, apply_forward(b, x), params);
  if (lp == kNegInf) return lp;
  double ldj = 0.0;
  for (double u : x.data()) ldj += b.log_det_jacobian(u);
  return lp + ldj;
}

double log_prob_or_neg_inf(const DistributionSpec& spec, const Value& x,
                           ParamValues params) {
  try {
    const double lp = log_prob(spec, x, params);
    return std::isnan(lp) ? kNegInf : lp;
  } catch (const DomainError&) {
    return kNegInf;
  }
}

Score score(const DistributionSpec& spec, const Value& x, ParamValues params) {
  if (!spec.transform) return base_score(spec.family, x, params);
  const Bijector& b = *spec.transform;
  Score s = base_score(spec.family, apply_forward(b, x), params);
  if (s.x) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      (*s.x)[i] = (*s.x)[i] * b.forward_derivative(x[i]) + b.log_det_jacobian_derivative(x[i]);
    }
  }
  return s;
}

Value sample(const DistributionSpec& spec, ParamValues p, const PrngKey& key,
             std::optional<Shape> shape) {
  RandomStream rng(key);
  const std::size_t n = shape ? shape_size(*shape) : broadcast_size(p);
  const Shape out_shape = shape ? *shape : (n == 1 ? Shape{} : Shape{n});
  std::vector<double> draws(n);
  DType dtype = DType::Real;

  switch (spec.family) {
    case Family::Normal:
      check_broadcast(*p[0], n, "loc");
      check_broadcast(*p[1], n, "scale");
      require_positive(*p[1], "scale");
      for (std::size_t i = 0; i < n; ++i) draws[i] = p[0]->bcast(i) + p[1]->bcast(i) * rng.normal();
      break;
    case Family::InverseGamma:
      require_positive(*p[0], "concentration");
      require_positive(*p[1], "scale");
      for (std::size_t i = 0; i < n; ++i) draws[i] = p[1]->bcast(i) / rng.gamma(p[0]->bcast(i));
      break;
    case Family::Gamma:
      require_positive(*p[0], "concentration");
      require_positive(*p[1], "rate");
      for (std::size_t i = 0; i < n; ++i) draws[i] = rng.gamma(p[0]->bcast(i)) / p[1]->bcast(i);
      break;
    case Family::Uniform:
      for (std::size_t i = 0; i < n; ++i) {
        const double lo = p[0]->bcast(i), hi = p[1]->bcast(i);
        if (!(lo < hi)) throw DomainError("uniform requires low < high");
        draws[i] = lo + (hi - lo) * rng.uniform();
      }
      break;
    case Family::Bernoulli:
      dtype = DType::Integer;
      for (std::size_t i = 0; i < n; ++i) {
        const double q = p[0]->bcast(i);
        if (!(q >= 0.0 && q <= 1.0)) throw DomainError("bernoulli probs must lie in [0, 1]");
        draws[i] = rng.uniform() < q ? 1.0 : 0.0;
      }
      break;
    case Family::Categorical: {
      dtype = DType::Integer;
      const std::size_t m = shape ? n : 1;
      draws.assign(m, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        double u = rng.uniform(), acc = 0.0;
        std::size_t k = 0;
        for (; k + 1 < p[0]->size(); ++k) {
          acc += (*p[0])[k];
          if (u < acc) break;
        }
        draws[i] = double(k);
      }
      return Value(shape ? *shape : Shape{}, std::move(draws), dtype);
    }
    case Family::MultivariateNormalDegenerate: {
      require_positive(*p[0], "variance");
      const Eigen::MatrixXd k = p[1]->mat();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (k + k.transpose()));
      const double tol = double(k.rows()) * eig.eigenvalues().cwiseAbs().maxCoeff() *
                         std::numeric_limits<double>::epsilon();
      Eigen::VectorXd beta = Eigen::VectorXd::Zero(k.rows());
      const double tau2 = p[0]->item();
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        const double lambda = eig.eigenvalues()[j];
        if (lambda > tol) beta += std::sqrt(tau2 / lambda) * rng.normal() * eig.eigenvectors().col(j);
      }
      return Value::vector(beta);
    }
  }

  Value out(out_shape, std::move(draws), dtype);
  if (spec.transform) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = spec.transform->inverse(out[i]);
  }
  return out;
}

int numeric_rank(const Eigen::MatrixXd& matrix) {
  if (matrix.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix);
  const auto& sv = svd.singularValues();
  const double tol = double(std::max(matrix.rows(), matrix.cols())) * sv.maxCoeff() *
                     std::numeric_limits<double>::epsilon();
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv[i] > tol;
  return rank;
}

double log_pseudo_determinant(const Eigen::MatrixXd& matrix) {
  if (matrix.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (matrix + matrix.transpose()),
                                                     Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  const double tol = double(matrix.rows()) * ev.cwiseAbs().maxCoeff() *
                     std::numeric_limits<double>::epsilon();
  double total = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > tol) total += std::log(ev[i]);
  }
  return total;
}

}  // namespace greylag
