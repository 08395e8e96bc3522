#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace greylag {

/// Central differences of a gradient with h = 1e-5 * max(1, |theta_i|),
/// symmetrized.
template <typename Grad>
Eigen::MatrixXd fd_hessian(Grad&& grad, const Eigen::VectorXd& theta) {
  const Eigen::Index p = theta.size();
  Eigen::MatrixXd h(p, p);
  Eigen::VectorXd probe = theta;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double step = 1e-5 * std::max(1.0, std::abs(theta[j]));
    probe[j] = theta[j] + step;
    const Eigen::VectorXd up = grad(probe);
    probe[j] = theta[j] - step;
    const Eigen::VectorXd down = grad(probe);
    probe[j] = theta[j];
    h.col(j) = (up - down) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace greylag
