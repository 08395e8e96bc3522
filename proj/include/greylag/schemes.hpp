#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "greylag/engine.hpp"
#include "greylag/regression.hpp"

namespace greylag {

enum class Scheme { IwlsGibbs, NutsGibbs, Nuts1, Nuts2, Hmc2 };

/// "iwls-gibbs", "nuts-gibbs", "nuts1", "nuts2", "hmc2"
const std::vector<std::string>& scheme_names();
std::string_view scheme_name(Scheme scheme);
/// Throws ConfigError listing the valid names.
Scheme scheme_from_name(std::string_view name);

struct KernelAssignment {
  /// "iwls", "nuts", "hmc" or "gibbs"
  std::string kind;
  std::vector<NodeId> position;
};

struct SchemeSetup {
  std::vector<KernelAssignment> assignments;
  std::vector<std::shared_ptr<Kernel>> kernels;
};

/// Kernel blocks of a distributional regression graph:
///   iwls-gibbs  IWLS per intercept and per coefficient vector, Gibbs per tau2
///   nuts-gibbs  the same with NUTS in place of IWLS
///   nuts1       one NUTS kernel on everything
///   nuts2       one NUTS kernel per predictor
///   hmc2        one HMC kernel per predictor
/// Variances moved by NUTS or HMC are log-transformed in `graph` first and
/// appear as "<tau2>_transformed".
SchemeSetup configure_scheme(Scheme scheme, ModelGraph& graph,
                             const std::vector<std::string>& predictors);

/// Adds U(-width, width) noise to every element of the listed nodes.
JitterFn uniform_jitter(std::shared_ptr<const GraphStructure> structure, std::vector<NodeId> ids,
                        double width);

// ---------------------------------------------------------------- location-scale case study

struct SimulatedData {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// Smooth decreasing step with a slight slope, on ranges 390..720.
double lidar_like_mean(double x);
/// Log standard deviation rising from about log(0.02) to log(0.16).
double lidar_like_log_sd(double x);

/// x on an equidistant grid over [lo, hi]; y ~ N(mean(x), exp(log_sd(x))^2).
SimulatedData simulate_location_scale(std::size_t n, double lo, double hi,
                                      const std::function<double(double)>& mean,
                                      const std::function<double(double)>& log_sd,
                                      std::uint64_t seed);

struct LocationScaleOptions {
  int n_basis = 10;
  int degree = 3;
  int order = 2;
};

/// y ~ N(beta0 + f(x), exp(gamma0 + g(x))^2) with P-splines f and g,
/// predictors "loc" and "scale". Intercepts start at the sample mean and
/// the log sample standard deviation.
DistRegModel location_scale_model(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                  const LocationScaleOptions& options = {});

struct SchemeRun {
  SamplingResults results;
  SchemeSetup setup;
  double setup_seconds = 0.0;
};

struct SchemeRunOptions {
  int chains = 4;
  long warmup = 1000;
  long posterior = 1000;
  std::uint64_t seed = 1337;
  int threads = 0;
  /// Half-width of the uniform jitter on coefficients and intercepts.
  double jitter = 0.1;
};

/// Builds the graph, configures the scheme and runs the Stan-style warmup
/// schedule followed by the posterior.
SchemeRun run_scheme(Scheme scheme, const DistRegModel& model, const SchemeRunOptions& options);

/// Posterior draws (chains*draws x grid) of the predictor `name` at new
/// covariate values, intercept plus every term.
Eigen::MatrixXd predictor_draws(const SamplingResults& results, const DistRegModel& model,
                                const std::string& name, const Eigen::VectorXd& grid);

}  // namespace greylag
