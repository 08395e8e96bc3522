#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "greylag/graph.hpp"
#include "greylag/kernels.hpp"

namespace greylag {

// ---------------------------------------------------------------- bases and penalties

/// B-spline basis on equidistant knots. The knot grid covers [lo, hi] with
/// p - d intervals and is extended by d intervals on each side.
class BSplineBasis {
 public:
  BSplineBasis(double lo, double hi, int n_basis, int degree);
  /// Basis spanning [min x, max x].
  static BSplineBasis from_data(const Eigen::VectorXd& x, int n_basis, int degree);

  /// n x p design matrix. Throws DomainError for points outside [lo, hi].
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& x) const;

  int n_basis() const noexcept { return n_basis_; }
  int degree() const noexcept { return degree_; }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  const Eigen::VectorXd& knots() const noexcept { return knots_; }

 private:
  double lo_, hi_;
  int n_basis_, degree_;
  Eigen::VectorXd knots_;
};

Eigen::MatrixXd bspline_basis(const Eigen::VectorXd& x, int n_basis, int degree);

/// K = D_r' D_r with D_r the r-th order difference matrix.
Eigen::MatrixXd difference_penalty(int p, int order);

struct SumToZero {
  Eigen::MatrixXd basis;
  Eigen::MatrixXd penalty;
  /// beta = Z beta_tilde, Z orthonormal with 1' B Z = 0.
  Eigen::MatrixXd back_transform;
};

/// Reparameterizes a term so its fitted values sum to zero over the rows of B.
SumToZero apply_sum_to_zero(const Eigen::MatrixXd& basis, const Eigen::MatrixXd& penalty);

/// tau2 ~ InverseGamma(a + rank/2, b + beta' K beta / 2).
double tau2_gibbs_draw(const PrngKey& key, const Eigen::VectorXd& beta, const Eigen::MatrixXd& penalty,
                       int rank, double a, double b);

// ---------------------------------------------------------------- model description

enum class Constraint { None, SumToZero };
enum class InverseLink { Identity, Exp, Logistic };

std::string_view link_name(InverseLink link);
InverseLink link_from_name(std::string_view name);

struct SmoothTerm {
  Eigen::MatrixXd basis;
  Eigen::MatrixXd penalty;
  int rank = 0;
  Constraint constraint = Constraint::None;
  /// Maps the sampled coefficients to the spline coefficients.
  Eigen::MatrixXd back_transform;
  std::optional<BSplineBasis> spline;
  double a = 0.01;
  double b = 0.01;

  /// Design rows for new covariate values, constraint applied.
  Eigen::MatrixXd design(const Eigen::VectorXd& x) const;
};

/// Cubic P-spline with a second-order penalty by default.
SmoothTerm pspline_term(const Eigen::VectorXd& x, int n_basis = 20, int degree = 3, int order = 2,
                        Constraint constraint = Constraint::SumToZero);

/// Term from a user-supplied basis and penalty.
SmoothTerm custom_term(Eigen::MatrixXd basis, Eigen::MatrixXd penalty,
                       Constraint constraint = Constraint::None);

struct Predictor {
  /// Family parameter this predictor drives ("loc", "scale", ...).
  std::string name;
  InverseLink link = InverseLink::Identity;
  std::vector<SmoothTerm> terms;
  double intercept = 0.0;
};

struct DistRegModel {
  Eigen::VectorXd response;
  Family family = Family::Normal;
  /// One per family parameter.
  std::vector<Predictor> predictors;
  NodeId response_id = "y";
};

/// Node ids of term j of a predictor: "<name>_np<j>_beta" and so on.
struct TermIds {
  NodeId beta, tau2, a, b, basis, fitted;
};
TermIds term_ids(const std::string& predictor, std::size_t term);
/// "<name>_p0_beta"
NodeId intercept_id(const std::string& predictor);
/// "<name>_eta"; the predictor's parameter node itself is "<name>".
NodeId eta_id(const std::string& predictor);

/// Intercepts get no prior; every term gets beta ~ MVN-degenerate(tau2, K)
/// with the rank of K stored as a constant and tau2 ~ InverseGamma(a, b).
/// Throws ShapeError for mismatched rows, DomainError for predictors that
/// do not match the family, and LinkDomainError when the initial linked
/// parameters fall outside the family's domain.
ModelGraph build_distreg_model(const DistRegModel& model);

/// Gibbs kernel drawing an untransformed tau2 from its inverse gamma full
/// conditional, reading beta, K and rank from the graph.
std::shared_ptr<GibbsKernel> tau2_gibbs_kernel(const ModelGraph& graph, const NodeId& beta,
                                               const NodeId& tau2);

}  // namespace greylag
