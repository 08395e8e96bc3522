#include "greylag/kernel.hpp"

#include <cmath>

#include "greylag/errors.hpp"

namespace greylag {

std::string_view error_code_name(int code) {
  switch (code) {
    case error_code::kOk: return "ok";
    case error_code::kNegInfPosterior: return "log-posterior is -inf";
    case error_code::kDivergence: return "divergent transition";
    case error_code::kMaxTreeDepth: return "maximum tree depth reached";
    case error_code::kIndefiniteFisher: return "information matrix not positive definite";
    case error_code::kKernelException: return "exception raised by kernel";
    default: return code >= 100 ? "user-defined error" : "unknown error";
  }
}

std::string_view epoch_type_name(EpochType type) {
  switch (type) {
    case EpochType::FastAdaptation: return "fast_adaptation";
    case EpochType::SlowAdaptation: return "slow_adaptation";
    case EpochType::Burnin: return "burnin";
    case EpochType::Posterior: return "posterior";
  }
  return "?";
}

void Kernel::bind(std::shared_ptr<const ModelInterface> model) {
  auto block = model->block(position_);
  validate_block(*block);
  model_ = std::move(model);
  block_ = std::move(block);
}

const PositionBlock& Kernel::block() const {
  if (!block_) throw StateError("kernel '" + name() + "' is not bound to a model");
  return *block_;
}

const ModelInterface& Kernel::model() const {
  if (!model_) throw StateError("kernel '" + name() + "' is not bound to a model");
  return *model_;
}

KernelState Kernel::init_state(const ModelState&) const { return KernelState{}; }

KernelState Kernel::start_epoch(const PrngKey&, KernelState ks, const ModelState&,
                                const EpochState&) const {
  return ks;
}

KernelState Kernel::end_epoch(const PrngKey&, KernelState ks, const ModelState&,
                              const EpochState&) const {
  return ks;
}

TuningResult Kernel::tune(const PrngKey&, KernelState ks, const ModelState&, const EpochState&,
                          const PositionHistory*) const {
  TuningResult out{std::move(ks), {}};
  out.info.step_size = out.kernel_state.step_size;
  return out;
}

KernelState Kernel::end_warmup(const PrngKey&, KernelState ks, const ModelState&,
                               const EpochState&) const {
  ks.warmup_done = true;
  return ks;
}

// ---------------------------------------------------------------- StepSizeKernel

KernelState StepSizeKernel::init_state(const ModelState&) const {
  KernelState ks;
  ks.step_size = options_.initial_step_size;
  ks.dual_averaging = DualAveraging::start(ks.step_size, options_.target_accept);
  ks.restart_adaptation = true;
  return ks;
}

KernelState StepSizeKernel::start_epoch(const PrngKey& key, KernelState ks,
                                        const ModelState& state, const EpochState& epoch) const {
  if (!options_.adapt_step_size || !is_adaptation(epoch.type)) return ks;
  if (ks.restart_adaptation) {
    ks.step_size = restart_step(key, ks, state);
    ks.dual_averaging = DualAveraging::start(ks.step_size, options_.target_accept);
    ks.restart_adaptation = false;
  }
  return ks;
}

TuningResult StepSizeKernel::tune(const PrngKey&, KernelState ks, const ModelState&,
                                  const EpochState&, const PositionHistory*) const {
  if (options_.adapt_step_size && ks.dual_averaging.t > 0) {
    ks.step_size = ks.dual_averaging.final_step();
  }
  TuningResult out{std::move(ks), {}};
  out.info.step_size = out.kernel_state.step_size;
  return out;
}

KernelState StepSizeKernel::end_warmup(const PrngKey&, KernelState ks, const ModelState&,
                                       const EpochState&) const {
  if (options_.adapt_step_size && ks.dual_averaging.t > 0) {
    ks.step_size = ks.dual_averaging.final_step();
  }
  ks.warmup_done = true;
  return ks;
}

void StepSizeKernel::adapt(KernelState& ks, double accept_prob, const EpochState& epoch) const {
  if (!options_.adapt_step_size || !is_adaptation(epoch.type)) return;
  ks.dual_averaging.update(accept_prob);
  ks.step_size = ks.dual_averaging.current_step();
}

double StepSizeKernel::restart_step(const PrngKey&, const KernelState& ks,
                                    const ModelState&) const {
  return ks.step_size;
}

}  // namespace greylag
