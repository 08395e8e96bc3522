#pragma once

#include <functional>
#include <utility>

#include "greylag/kernel.hpp"

namespace greylag {

// ---------------------------------------------------------------- Hamiltonian dynamics

/// Euclidean metric given by the inverse mass matrix (diagonal or dense).
class Metric {
 public:
  static Metric diagonal(Eigen::VectorXd inv_mass);
  static Metric dense(Eigen::MatrixXd inv_mass);
  /// Metric stored in a kernel state; identity of dimension `dim` if unset.
  static Metric from_state(const KernelState& ks, Eigen::Index dim);

  /// M^-1 p
  Eigen::VectorXd velocity(const Eigen::VectorXd& p) const;
  /// p' M^-1 p / 2
  double kinetic_energy(const Eigen::VectorXd& p) const;
  /// p ~ N(0, M)
  Eigen::VectorXd sample_momentum(RandomStream& rng) const;
  Eigen::Index dim() const noexcept { return dim_; }

 private:
  bool dense_ = false;
  Eigen::Index dim_ = 0;
  Eigen::VectorXd inv_diag_;
  Eigen::MatrixXd inv_dense_;
  Eigen::MatrixXd inv_chol_;
};

/// Log density and its gradient at q.
using LogDensityFn = std::function<double(const Eigen::VectorXd& q, Eigen::VectorXd& grad)>;

/// Divergence threshold on the energy error.
inline constexpr double kMaxEnergyError = 1000.0;

/// `n_steps` velocity-leapfrog steps. Throws DivergenceError when the energy
/// error exceeds 1000 or becomes non-finite.
std::pair<Eigen::VectorXd, Eigen::VectorXd> leapfrog(const Eigen::VectorXd& q,
                                                     const Eigen::VectorXd& p, double step,
                                                     int n_steps, const LogDensityFn& log_density,
                                                     const Metric& metric);

/// Shared pieces of HMC and NUTS: step-size initialization and diagonal or
/// dense mass adaptation from the slow-adaptation history.
class HamiltonianKernel : public StepSizeKernel {
 public:
  struct MassOptions {
    bool adapt_mass = true;
    bool dense_mass = false;
  };

  HamiltonianKernel(std::vector<NodeId> position_ids, StepSizeKernel::Options step,
                    MassOptions mass)
      : StepSizeKernel(std::move(position_ids), step), mass_(mass) {}

  KernelState init_state(const ModelState& state) const override;
  TuningResult tune(const PrngKey& key, KernelState ks, const ModelState& state,
                    const EpochState& epoch, const PositionHistory* history) const override;
  bool needs_history(const EpochState& epoch) const override;

  const MassOptions& mass_options() const noexcept { return mass_; }

 protected:
  void validate_block(const PositionBlock& block) const override;
  double restart_step(const PrngKey& key, const KernelState& ks,
                      const ModelState& state) const override;

  struct Point {
    Eigen::VectorXd q;
    Eigen::VectorXd p;
    Eigen::VectorXd grad;
    double log_prob = 0.0;
    ModelState state;
  };

  Point evaluate(const Eigen::VectorXd& q, const ModelState& base) const;
  /// One leapfrog step; the returned point keeps `base`'s other nodes.
  Point step(const Point& from, double eps, const Metric& metric) const;
  double hamiltonian(const Point& x, const Metric& metric) const;

 private:
  MassOptions mass_;
};

struct HMCOptions {
  StepSizeKernel::Options step{1.0, 0.8, true};
  HamiltonianKernel::MassOptions mass{};
  int n_steps = 64;
  /// Step size drawn uniformly from step * (1 +/- jitter) per transition.
  double jitter = 0.1;
};

class HMCKernel : public HamiltonianKernel {
 public:
  using Options = HMCOptions;

  HMCKernel(std::vector<NodeId> position_ids, Options options = {})
      : HamiltonianKernel(std::move(position_ids), options.step, options.mass),
        options_(options) {}

  std::string name() const override { return "hmc"; }
  TransitionResult transition(const PrngKey& key, const KernelState& ks, const ModelState& state,
                              const EpochState& epoch) const override;
  const Options& options() const noexcept { return options_; }

 private:
  Options options_;
};

struct NUTSOptions {
  StepSizeKernel::Options step{1.0, 0.8, true};
  HamiltonianKernel::MassOptions mass{};
  int max_tree_depth = 10;
};

class NUTSKernel : public HamiltonianKernel {
 public:
  using Options = NUTSOptions;

  NUTSKernel(std::vector<NodeId> position_ids, Options options = {})
      : HamiltonianKernel(std::move(position_ids), options.step, options.mass),
        options_(options) {}

  std::string name() const override { return "nuts"; }
  TransitionResult transition(const PrngKey& key, const KernelState& ks, const ModelState& state,
                              const EpochState& epoch) const override;
  const Options& options() const noexcept { return options_; }

 private:
  struct Tree;
  struct Trajectory;
  bool build_tree(Trajectory& traj, const Point& from, int depth, int direction, double eps,
                  const Metric& metric, double h0, RandomStream& rng, Tree& out) const;

  Options options_;
};

// ---------------------------------------------------------------- other kernels

class RandomWalkKernel : public StepSizeKernel {
 public:
  using Options = StepSizeKernel::Options;
  static Options default_options() { return {1.0, 0.234, true}; }

  RandomWalkKernel(std::vector<NodeId> position_ids, Options options = default_options())
      : StepSizeKernel(std::move(position_ids), options) {}

  std::string name() const override { return "rw"; }
  TransitionResult transition(const PrngKey& key, const KernelState& ks, const ModelState& state,
                              const EpochState& epoch) const override;

 protected:
  void validate_block(const PositionBlock& block) const override;
};

/// Metropolis-Hastings with a Gaussian proposal built from the score and the
/// observed information F = -Hessian:
/// theta' ~ N(theta + s^2/2 F^-1 grad, s^2 F^-1).
class IWLSKernel : public StepSizeKernel {
 public:
  using Options = StepSizeKernel::Options;

  IWLSKernel(std::vector<NodeId> position_ids, Options options = {})
      : StepSizeKernel(std::move(position_ids), options) {}

  std::string name() const override { return "iwls"; }
  TransitionResult transition(const PrngKey& key, const KernelState& ks, const ModelState& state,
                              const EpochState& epoch) const override;

  struct Proposal {
    Eigen::VectorXd mean;
    /// Lower Cholesky factor of F.
    Eigen::MatrixXd chol;
    double step = 1.0;
  };
  /// Proposal moments at `state`; nullopt when F is not positive definite.
  std::optional<Proposal> proposal(const ModelState& state, double step) const;
  /// log N(theta; proposal.mean, s^2 F^-1)
  static double proposal_log_density(const Proposal& proposal, const Eigen::VectorXd& theta);

 protected:
  void validate_block(const PositionBlock& block) const override;
};

/// Draws the position from a user-supplied full conditional.
class GibbsKernel : public Kernel {
 public:
  using FullConditional = std::function<Position(const PrngKey& key, const ModelState& state)>;

  GibbsKernel(std::vector<NodeId> position_ids, FullConditional draw)
      : Kernel(std::move(position_ids)), draw_(std::move(draw)) {}

  std::string name() const override { return "gibbs"; }
  TransitionResult transition(const PrngKey& key, const KernelState& ks, const ModelState& state,
                              const EpochState& epoch) const override;

 private:
  FullConditional draw_;
};

struct MHOptions {
  StepSizeKernel::Options step{1.0, 0.8, false};
};

/// Metropolis-Hastings with a user-supplied proposal.
class MHKernel : public StepSizeKernel {
 public:
  struct Proposal {
    Position position;
    /// log q(theta | theta') - log q(theta' | theta); zero when symmetric.
    double log_correction = 0.0;
  };
  using ProposalFn =
      std::function<Proposal(const PrngKey& key, const ModelState& state, double step_size)>;

  using Options = MHOptions;

  MHKernel(std::vector<NodeId> position_ids, ProposalFn proposal, Options options = {})
      : StepSizeKernel(std::move(position_ids), options.step), proposal_(std::move(proposal)) {}

  std::string name() const override { return "mh"; }
  TransitionResult transition(const PrngKey& key, const KernelState& ks, const ModelState& state,
                              const EpochState& epoch) const override;

 private:
  ProposalFn proposal_;
};

/// Accept/reject helper shared by the Metropolis-type kernels: returns the
/// acceptance probability and whether the proposal was accepted.
std::pair<double, bool> metropolis_accept(double log_ratio, RandomStream& rng);

}  // namespace greylag
