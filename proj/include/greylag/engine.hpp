#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "greylag/kernel.hpp"
#include "greylag/model_interface.hpp"

namespace greylag {

struct EpochConfig {
  EpochType type = EpochType::Posterior;
  long duration = 1;
  /// Keep every `thinning`-th draw; posterior epochs only.
  long thinning = 1;
};

/// Warmup windows: fast 75, slow 25, 50, 100, ... (the last slow window
/// absorbs the remainder), fast 50, then Posterior(n_posterior). Window
/// sizes shrink to 15% / 75% / 10% of the warmup when it is below 150.
std::vector<EpochConfig> stan_warmup_schedule(long n_warmup, long n_posterior);

/// Throws ScheduleError unless durations are positive, thinning is only set
/// on posterior epochs and nothing but posterior epochs follows a
/// posterior epoch.
void validate_schedule(const std::vector<EpochConfig>& epochs);

/// Derived per-iteration quantity recorded with every posterior draw.
struct Quantity {
  std::string name;
  std::function<double(const ModelState&)> fn;
};

struct DebugOptions {
  bool store_kernel_states = false;
  bool store_transition_infos = false;
  bool store_warmup_history = false;
  /// Record log_prob, log_lik and log_prior with every posterior draw.
  bool track_log_prob = true;
  std::vector<Quantity> quantities;
  /// Draws are buffered per chain and flushed in batches of this size.
  std::size_t batch_size = 25;
};

struct ErrorLogEntry {
  int code = 0;
  std::size_t kernel = 0;
  std::string kernel_name;
  int chain = 0;
  std::size_t epoch = 0;
  /// Iteration counted from the start of sampling.
  long iteration = 0;
  std::string message;
};

struct ErrorSummary {
  int code = 0;
  std::size_t kernel = 0;
  std::string kernel_name;
  std::size_t epoch = 0;
  long count = 0;
};

struct TransitionRecord {
  std::size_t epoch = 0;
  long iteration = 0;
  std::size_t kernel = 0;
  TransitionInfo info;
};

struct TuningRecord {
  std::size_t epoch = 0;
  std::size_t kernel = 0;
  TuningInfo info;
};

struct KernelStateRecord {
  std::size_t epoch = 0;
  std::size_t kernel = 0;
  KernelState state;
};

/// Per chain, epoch and kernel.
struct EpochSummary {
  std::size_t epoch = 0;
  EpochType type = EpochType::Posterior;
  std::size_t kernel = 0;
  long transitions = 0;
  double mean_acceptance = 0.0;
  long errors = 0;
  double step_size = 0.0;
};

struct SamplingResults {
  int num_chains = 0;
  /// Sampled nodes and their flat column ranges.
  std::vector<NodeId> parameters;
  std::vector<Shape> shapes;
  std::vector<Eigen::Index> offsets;
  /// Flat column names: "x" for scalars, "x[i]" or "x[i,j]" otherwise.
  std::vector<std::string> columns;
  std::vector<std::string> kernel_names;

  /// One [draws x columns] matrix per chain.
  std::vector<Eigen::MatrixXd> posterior;
  /// Warmup positions, when requested.
  std::vector<Eigen::MatrixXd> warmup;
  std::vector<std::string> tracked_names;
  std::vector<Eigen::MatrixXd> tracked;

  std::vector<std::vector<TransitionRecord>> transition_infos;
  std::vector<std::vector<TuningRecord>> tuning_infos;
  std::vector<std::vector<KernelStateRecord>> kernel_states;
  std::vector<std::vector<EpochSummary>> epoch_summaries;
  std::vector<ErrorLogEntry> error_log;
  std::vector<EpochConfig> epochs;
  /// Wall time spent in posterior epochs, all chains together.
  double posterior_seconds = 0.0;

  long num_draws() const { return posterior.empty() ? 0 : long(posterior.front().rows()); }
  Eigen::Index column(const std::string& name) const;
  /// [draws x size] block of one node for one chain.
  Eigen::MatrixXd draws(const NodeId& id, int chain) const;
  /// Chains x draws matrix of one flat column.
  Eigen::MatrixXd column_draws(const std::string& name) const;
  /// Error log aggregated by (code, kernel, epoch).
  std::vector<ErrorSummary> error_summary() const;
  /// Mean acceptance of `kernel` over all posterior transitions of all chains.
  double posterior_acceptance(std::size_t kernel) const;
};

/// Maps a chain key and its initial state to a perturbed initial state.
using JitterFn = std::function<ModelState(const PrngKey& key, const ModelState& state)>;

class Engine;

class EngineBuilder {
 public:
  EngineBuilder& set_model(const ModelGraph& graph);
  EngineBuilder& set_model(std::shared_ptr<const ModelInterface> model, ModelState initial);
  EngineBuilder& set_initial_state(ModelState state);
  /// One initial state per chain; overrides the single initial state.
  EngineBuilder& set_initial_states(std::vector<ModelState> states);
  EngineBuilder& add_kernel(std::shared_ptr<Kernel> kernel);
  EngineBuilder& set_epochs(std::vector<EpochConfig> epochs);
  EngineBuilder& add_epoch(EpochConfig epoch);
  EngineBuilder& set_seed(std::uint64_t seed);
  EngineBuilder& set_num_chains(int n);
  EngineBuilder& set_debug(DebugOptions debug);
  EngineBuilder& set_jitter(JitterFn jitter);
  /// Worker threads for the chains; 0 reads GREYLAG_THREADS, then the
  /// OpenMP default.
  EngineBuilder& set_threads(int n);

  /// Binds the kernels, checks coverage and the schedule and initializes
  /// every chain. Throws CoverageError, InitError or ScheduleError.
  Engine build();

 private:
  std::shared_ptr<const ModelInterface> model_;
  std::vector<ModelState> initial_;
  std::vector<std::shared_ptr<Kernel>> kernels_;
  std::vector<EpochConfig> epochs_;
  std::uint64_t seed_ = 0;
  int num_chains_ = 1;
  int threads_ = 0;
  DebugOptions debug_;
  JitterFn jitter_;
};

class Engine {
 public:
  /// Runs the next epoch on every chain. Throws ExhaustedError when the
  /// schedule is consumed. Kernel failures are logged, never raised.
  void sample_next_epoch();
  void sample_all_epochs();
  /// Throws ScheduleError when the ordering would be broken.
  void append_epoch(EpochConfig epoch);

  SamplingResults get_results() const;

  int num_chains() const noexcept { return int(chains_.size()); }
  int threads() const noexcept { return threads_; }
  std::size_t epochs_done() const noexcept { return next_epoch_; }
  std::size_t epochs_remaining() const noexcept { return epochs_.size() - next_epoch_; }
  const std::vector<EpochConfig>& epochs() const noexcept { return epochs_; }
  const ModelState& state(int chain) const { return chains_.at(chain).model; }
  const KernelState& kernel_state(int chain, std::size_t kernel) const {
    return chains_.at(chain).kernels.at(kernel);
  }
  const std::vector<std::shared_ptr<Kernel>>& kernels() const noexcept { return kernels_; }
  const ModelInterface& model() const { return *model_; }

  /// Key derivation, exposed for tests.
  PrngKey chain_key(int chain) const;
  PrngKey transition_key(int chain, std::size_t epoch, long iteration, std::size_t kernel) const;
  /// stage: 0 start_epoch, 1 end_epoch, 2 tune, 3 end_warmup.
  PrngKey lifecycle_key(int chain, std::size_t epoch, int stage, std::size_t kernel) const;

 private:
  friend class EngineBuilder;
  Engine() = default;

  struct Chain {
    ModelState model;
    std::vector<KernelState> kernels;
    long iteration = 0;
    std::vector<Eigen::VectorXd> posterior, warmup, tracked;
    std::vector<Eigen::VectorXd> buffer, tracked_buffer;
    std::vector<TransitionRecord> transitions;
    std::vector<TuningRecord> tunings;
    std::vector<KernelStateRecord> states;
    std::vector<EpochSummary> summaries;
    std::vector<ErrorLogEntry> errors;
  };

  void run_epoch(int chain_index, std::size_t epoch_index, bool first_posterior);
  void flush(Chain& chain) const;
  Eigen::VectorXd flat_position(const ModelState& state) const;
  Eigen::VectorXd tracked_row(const ModelState& state) const;

  std::shared_ptr<const ModelInterface> model_;
  std::vector<std::shared_ptr<Kernel>> kernels_;
  std::vector<EpochConfig> epochs_;
  std::size_t next_epoch_ = 0;
  bool warmup_ended_ = false;
  double posterior_seconds_ = 0.0;
  PrngKey root_;
  int threads_ = 1;
  DebugOptions debug_;
  std::vector<NodeId> parameters_;
  std::shared_ptr<const PositionBlock> all_params_;
  std::vector<Chain> chains_;
};

}  // namespace greylag
