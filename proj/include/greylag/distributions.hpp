#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "greylag/random.hpp"
#include "greylag/value.hpp"

namespace greylag {

using NodeId = std::string;

enum class Family {
  Normal,                        // loc, scale
  InverseGamma,                  // concentration, scale
  Gamma,                         // concentration, rate
  MultivariateNormalDegenerate,  // variance, penalty, rank, log_pdet
  Uniform,                       // low, high
  Bernoulli,                     // probs
  Categorical,                   // probs
};

std::string_view family_name(Family family);
Family family_from_name(std::string_view name);

/// Parameter names of a family, in evaluation order.
const std::vector<std::string>& param_names(Family family);

bool is_discrete(Family family);

enum class BijectorKind { Identity, Exp, Log, Softplus };

std::string_view bijector_name(BijectorKind kind);

/// Elementwise invertible map with log |d forward / du|.
struct Bijector {
  BijectorKind kind = BijectorKind::Identity;

  double forward(double u) const;
  double inverse(double x) const;
  double log_det_jacobian(double u) const;
  /// d forward / du
  double forward_derivative(double u) const;
  /// d log_det_jacobian / du
  double log_det_jacobian_derivative(double u) const;
};

/// Where a distribution parameter comes from: another node or a constant.
using ParamSource = std::variant<NodeId, Value>;

struct DistributionSpec {
  Family family = Family::Normal;
  /// Ordered (name -> source); names must match `param_names(family)`.
  std::vector<std::pair<std::string, ParamSource>> params;
  /// Set on strong nodes created by `transform_node`: the node holds
  /// u = inverse(x) and its density includes the Jacobian term.
  std::optional<Bijector> transform;

  static DistributionSpec normal(ParamSource loc, ParamSource scale);
  static DistributionSpec inverse_gamma(ParamSource concentration, ParamSource scale);
  static DistributionSpec gamma(ParamSource concentration, ParamSource rate);
  static DistributionSpec uniform(ParamSource low, ParamSource high);
  static DistributionSpec bernoulli(ParamSource probs);
  static DistributionSpec categorical(ParamSource probs);
  /// Rank-deficient Gaussian smoothness prior with zero mean and precision
  /// K / variance. Rank and log pseudo-determinant may be node ids or
  /// constants; `penalty_prior` fills them from K.
  static DistributionSpec mvn_degenerate(ParamSource variance, ParamSource penalty,
                                         ParamSource rank, ParamSource log_pdet);

  /// Checks parameter names against the family; throws DomainError.
  void validate() const;
};

/// MVN-degenerate prior on K with the rank and pseudo-determinant computed
/// once here and stored as constants.
DistributionSpec penalty_prior(ParamSource variance, const Eigen::MatrixXd& penalty);

/// Resolved parameter values in `param_names` order.
using ParamValues = std::span<const Value* const>;

/// Log density at x. Throws DomainError for parameters outside the family's
/// domain; returns -inf when x lies outside the support.
double log_prob(const DistributionSpec& spec, const Value& x, ParamValues params);

/// As log_prob, but parameter-domain violations also yield -inf. Shape
/// errors still throw.
double log_prob_or_neg_inf(const DistributionSpec& spec, const Value& x,
                           ParamValues params);

struct Score {
  /// d/dx, absent for discrete families.
  std::optional<Value> x;
  /// d/d(param) reduced to each parameter's shape; absent where the family
  /// is not differentiable in that parameter.
  std::vector<std::optional<Value>> params;
};

Score score(const DistributionSpec& spec, const Value& x, ParamValues params);

/// Draw with the shape implied by the parameters (or `shape` if given).
Value sample(const DistributionSpec& spec, ParamValues params, const PrngKey& key,
             std::optional<Shape> shape = std::nullopt);

/// Numeric rank with tolerance p * sigma_max * machine epsilon.
int numeric_rank(const Eigen::MatrixXd& matrix);

/// Log of the product of the nonzero eigenvalues of a symmetric PSD matrix.
double log_pseudo_determinant(const Eigen::MatrixXd& matrix);

}  // namespace greylag
