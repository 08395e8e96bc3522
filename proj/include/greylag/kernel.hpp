#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "greylag/adaptation.hpp"
#include "greylag/graph.hpp"
#include "greylag/model_interface.hpp"
#include "greylag/random.hpp"

namespace greylag {

namespace error_code {
inline constexpr int kOk = 0;
inline constexpr int kNegInfPosterior = 1;
inline constexpr int kDivergence = 2;
inline constexpr int kMaxTreeDepth = 3;
inline constexpr int kIndefiniteFisher = 4;
/// Exception raised inside a kernel and caught by the engine.
inline constexpr int kKernelException = 100;
}  // namespace error_code

std::string_view error_code_name(int code);

enum class EpochType { FastAdaptation, SlowAdaptation, Burnin, Posterior };

std::string_view epoch_type_name(EpochType type);

constexpr bool is_adaptation(EpochType type) {
  return type == EpochType::FastAdaptation || type == EpochType::SlowAdaptation;
}

struct EpochState {
  EpochType type = EpochType::Posterior;
  long duration = 1;
  /// Position of the epoch in the schedule.
  std::size_t index = 0;
  /// Iteration within the epoch.
  long iteration = 0;
};

/// Tunable parameters of a kernel. Shapes are fixed after `init_state`.
struct KernelState {
  double step_size = 1.0;
  DualAveraging dual_averaging;
  /// Restart dual averaging (and, for gradient kernels, re-initialize the
  /// step size) at the next adaptation epoch.
  bool restart_adaptation = true;
  bool warmup_done = false;
  /// Inverse mass (the metric). Empty when unused.
  Eigen::VectorXd inv_mass_diag;
  Eigen::MatrixXd inv_mass_dense;
  /// Lower Cholesky factor of `inv_mass_dense`.
  Eigen::MatrixXd inv_mass_chol;
  /// Number of mass updates applied.
  int mass_updates = 0;

  friend bool operator==(const KernelState&, const KernelState&) = default;
};

struct TransitionInfo {
  int error_code = error_code::kOk;
  double acceptance_prob = 1.0;
  bool position_moved = false;
  bool divergent = false;
  int tree_depth = 0;
  int n_leapfrog = 0;

  friend bool operator==(const TransitionInfo&, const TransitionInfo&) = default;
};

struct TransitionResult {
  KernelState kernel_state;
  ModelState model_state;
  TransitionInfo info;
};

struct TuningInfo {
  int error_code = error_code::kOk;
  double step_size = 0.0;

  friend bool operator==(const TuningInfo&, const TuningInfo&) = default;
};

struct TuningResult {
  KernelState kernel_state;
  TuningInfo info;
};

/// Flattened positions of one kernel's block over an epoch.
using PositionHistory = std::vector<Eigen::VectorXd>;

/// MCMC transition kernel. All methods are const and pure: randomness
/// comes from the key, tuned parameters from the kernel state. A kernel is
/// bound to a model once, when the engine is built, and may then be shared
/// by all chains.
class Kernel {
 public:
  explicit Kernel(std::vector<NodeId> position_ids) : position_(std::move(position_ids)) {}
  virtual ~Kernel() = default;

  virtual std::string name() const = 0;
  const std::vector<NodeId>& position_ids() const noexcept { return position_; }

  void bind(std::shared_ptr<const ModelInterface> model);
  bool bound() const noexcept { return block_ != nullptr; }
  const PositionBlock& block() const;
  const ModelInterface& model() const;

  virtual KernelState init_state(const ModelState& state) const;
  virtual KernelState start_epoch(const PrngKey& key, KernelState ks, const ModelState& state,
                                  const EpochState& epoch) const;
  virtual TransitionResult transition(const PrngKey& key, const KernelState& ks,
                                      const ModelState& state, const EpochState& epoch) const = 0;
  virtual KernelState end_epoch(const PrngKey& key, KernelState ks, const ModelState& state,
                                const EpochState& epoch) const;
  /// Called after each adaptation epoch. `history` holds the epoch's
  /// positions when `needs_history()` is true, otherwise it is null.
  virtual TuningResult tune(const PrngKey& key, KernelState ks, const ModelState& state,
                            const EpochState& epoch, const PositionHistory* history) const;
  virtual KernelState end_warmup(const PrngKey& key, KernelState ks, const ModelState& state,
                                 const EpochState& epoch) const;
  virtual bool needs_history(const EpochState&) const { return false; }

 protected:
  /// Checks the bound block; throws on unsupported positions.
  virtual void validate_block(const PositionBlock&) const {}

 private:
  std::vector<NodeId> position_;
  std::shared_ptr<const ModelInterface> model_;
  std::shared_ptr<const PositionBlock> block_;
};

/// Base for kernels with a dual-averaged step size.
class StepSizeKernel : public Kernel {
 public:
  struct Options {
    double initial_step_size = 1.0;
    double target_accept = 0.8;
    bool adapt_step_size = true;
  };

  StepSizeKernel(std::vector<NodeId> position_ids, Options options)
      : Kernel(std::move(position_ids)), options_(options) {}

  KernelState init_state(const ModelState& state) const override;
  KernelState start_epoch(const PrngKey& key, KernelState ks, const ModelState& state,
                          const EpochState& epoch) const override;
  TuningResult tune(const PrngKey& key, KernelState ks, const ModelState& state,
                    const EpochState& epoch, const PositionHistory* history) const override;
  KernelState end_warmup(const PrngKey& key, KernelState ks, const ModelState& state,
                         const EpochState& epoch) const override;

  const Options& step_options() const noexcept { return options_; }

 protected:
  /// Feeds an acceptance probability into dual averaging during adaptation.
  void adapt(KernelState& ks, double accept_prob, const EpochState& epoch) const;
  /// Step size to start dual averaging from after a restart.
  virtual double restart_step(const PrngKey& key, const KernelState& ks,
                              const ModelState& state) const;

 private:
  Options options_;
};

}  // namespace greylag
