#pragma once

#include <Eigen/Dense>

namespace greylag {

/// Nesterov dual averaging of the log step size toward a target
/// acceptance rate.
struct DualAveraging {
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;

  double target = 0.8;
  double mu = 0.0;
  double log_step = 0.0;
  double log_step_avg = 0.0;
  double h_bar = 0.0;
  long t = 0;

  /// Fresh state shrinking toward log(10 * step).
  static DualAveraging start(double step, double target);

  void update(double accept_prob);
  double current_step() const;
  /// Step size after adaptation: exp(log_step_avg).
  double final_step() const;

  friend bool operator==(const DualAveraging&, const DualAveraging&) = default;
};

/// Welford's online mean and (co)variance.
struct Welford {
  long count = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd m2;
  Eigen::MatrixXd m2_dense;
  bool dense = false;

  static Welford start(Eigen::Index dim, bool dense = false);

  void update(const Eigen::VectorXd& x);
  /// Unbiased variance; throws DomainError for fewer than two samples.
  Eigen::VectorXd variance() const;
  Eigen::MatrixXd covariance() const;
};

/// Shrinks an estimated variance toward 1e-3 with weight 5 / (n + 5).
Eigen::VectorXd regularized_variance(const Welford& w);
Eigen::MatrixXd regularized_covariance(const Welford& w);

}  // namespace greylag
