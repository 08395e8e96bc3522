#include "greylag/adaptation.hpp"

#include <cmath>

#include "greylag/errors.hpp"

namespace greylag {

DualAveraging DualAveraging::start(double step, double target) {
  DualAveraging da;
  da.target = target;
  da.mu = std::log(10.0 * step);
  da.log_step = std::log(step);
  da.log_step_avg = 0.0;
  da.h_bar = 0.0;
  da.t = 0;
  return da;
}

void DualAveraging::update(double accept_prob) {
  ++t;
  const double td = double(t);
  const double eta = 1.0 / (td + kT0);
  h_bar = (1.0 - eta) * h_bar + eta * (target - accept_prob);
  log_step = mu - std::sqrt(td) / kGamma * h_bar;
  const double w = std::pow(td, -kKappa);
  log_step_avg = w * log_step + (1.0 - w) * log_step_avg;
}

double DualAveraging::current_step() const { return std::exp(log_step); }

double DualAveraging::final_step() const {
  return t > 0 ? std::exp(log_step_avg) : std::exp(log_step);
}

Welford Welford::start(Eigen::Index dim, bool dense) {
  Welford w;
  w.dense = dense;
  w.mean = Eigen::VectorXd::Zero(dim);
  w.m2 = Eigen::VectorXd::Zero(dim);
  if (dense) w.m2_dense = Eigen::MatrixXd::Zero(dim, dim);
  return w;
}

void Welford::update(const Eigen::VectorXd& x) {
  ++count;
  const Eigen::VectorXd delta = x - mean;
  mean += delta / double(count);
  const Eigen::VectorXd delta2 = x - mean;
  m2 += delta.cwiseProduct(delta2);
  if (dense) m2_dense += delta * delta2.transpose();
}

Eigen::VectorXd Welford::variance() const {
  if (count < 2) throw DomainError("variance needs at least two samples");
  return m2 / double(count - 1);
}

Eigen::MatrixXd Welford::covariance() const {
  if (count < 2) throw DomainError("covariance needs at least two samples");
  if (!dense) return variance().asDiagonal();
  return m2_dense / double(count - 1);
}

Eigen::VectorXd regularized_variance(const Welford& w) {
  const double n = double(w.count);
  return (n / (n + 5.0)) * w.variance().array() + 1e-3 * (5.0 / (n + 5.0));
}

Eigen::MatrixXd regularized_covariance(const Welford& w) {
  const double n = double(w.count);
  Eigen::MatrixXd cov = (n / (n + 5.0)) * w.covariance();
  cov.diagonal().array() += 1e-3 * (5.0 / (n + 5.0));
  return cov;
}

}  // namespace greylag
