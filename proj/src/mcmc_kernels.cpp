#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "greylag/errors.hpp"
#include "greylag/kernels.hpp"

namespace greylag {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::pair<double, bool> metropolis_accept(double log_ratio, RandomStream& rng) {
  const double u = rng.uniform();
  if (std::isnan(log_ratio)) return {0.0, false};
  const double prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
  return {prob, std::log(u) < log_ratio};
}

// ---------------------------------------------------------------- random walk

void RandomWalkKernel::validate_block(const PositionBlock& block) const {
  if (!block.continuous()) throw DomainError("random walk needs a real-valued position");
}

TransitionResult RandomWalkKernel::transition(const PrngKey& key, const KernelState& ks,
                                              const ModelState& state,
                                              const EpochState& epoch) const {
  TransitionResult out{ks, state, {}};
  RandomStream rng(key);
  const Eigen::VectorXd theta = block().flatten(state);
  const Eigen::VectorXd proposal = theta + ks.step_size * rng.normal_vector(theta.size());
  ModelState next = block().inject(proposal, state);
  const double lp = next.total_log_prob();
  if (!(lp > -kInf)) {
    out.info.error_code = error_code::kNegInfPosterior;
    out.info.acceptance_prob = 0.0;
    adapt(out.kernel_state, 0.0, epoch);
    return out;
  }
  const auto [prob, accepted] = metropolis_accept(lp - state.total_log_prob(), rng);
  out.info.acceptance_prob = prob;
  if (accepted) {
    out.info.position_moved = proposal != theta;
    out.model_state = std::move(next);
  }
  adapt(out.kernel_state, prob, epoch);
  return out;
}

// ---------------------------------------------------------------- IWLS

void IWLSKernel::validate_block(const PositionBlock& block) const {
  if (!block.continuous()) {
    throw NonDifferentiableError("kernel 'iwls' needs a real-valued position");
  }
}

std::optional<IWLSKernel::Proposal> IWLSKernel::proposal(const ModelState& state,
                                                         double step) const {
  const Eigen::VectorXd grad = block().gradient(state);
  const Eigen::MatrixXd fisher = -block().hessian(state);
  Eigen::LLT<Eigen::MatrixXd> llt(fisher);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Proposal p;
  p.chol = llt.matrixL();
  if (!(p.chol.diagonal().array() > 0.0).all() || !p.chol.allFinite()) return std::nullopt;
  p.step = step;
  p.mean = block().flatten(state) + 0.5 * step * step * llt.solve(grad);
  return p;
}

double IWLSKernel::proposal_log_density(const Proposal& proposal, const Eigen::VectorXd& theta) {
  const Eigen::VectorXd r = proposal.chol.transpose() * (theta - proposal.mean);
  const double k = double(theta.size());
  const double s = proposal.step;
  return -0.5 * k * std::log(2.0 * std::numbers::pi) - k * std::log(s) +
         proposal.chol.diagonal().array().log().sum() - r.squaredNorm() / (2.0 * s * s);
}

TransitionResult IWLSKernel::transition(const PrngKey& key, const KernelState& ks,
                                        const ModelState& state, const EpochState& epoch) const {
  TransitionResult out{ks, state, {}};
  auto reject = [&](int code) {
    out.info.error_code = code;
    out.info.acceptance_prob = 0.0;
    adapt(out.kernel_state, 0.0, epoch);
    return out;
  };
  RandomStream rng(key);
  const double s = ks.step_size;
  const auto forward = proposal(state, s);
  if (!forward) return reject(error_code::kIndefiniteFisher);

  const Eigen::VectorXd z = rng.normal_vector(forward->mean.size());
  const Eigen::VectorXd theta_new =
      forward->mean + s * forward->chol.transpose().triangularView<Eigen::Upper>().solve(z);
  ModelState next = block().inject(theta_new, state);
  const double lp_new = next.total_log_prob();
  if (!(lp_new > -kInf)) return reject(error_code::kNegInfPosterior);
  const auto backward = proposal(next, s);
  if (!backward) return reject(error_code::kIndefiniteFisher);

  const Eigen::VectorXd theta = block().flatten(state);
  const double log_ratio = lp_new - state.total_log_prob() +
                           proposal_log_density(*backward, theta) -
                           proposal_log_density(*forward, theta_new);
  const auto [prob, accepted] = metropolis_accept(log_ratio, rng);
  out.info.acceptance_prob = prob;
  if (accepted) {
    out.info.position_moved = theta_new != theta;
    out.model_state = std::move(next);
  }
  adapt(out.kernel_state, prob, epoch);
  return out;
}

// ---------------------------------------------------------------- Gibbs

TransitionResult GibbsKernel::transition(const PrngKey& key, const KernelState& ks,
                                         const ModelState& state, const EpochState&) const {
  TransitionResult out{ks, state, {}};
  const Position draw = draw_(key, state);
  for (const auto& id : draw.ids()) {
    const auto& ids = position_ids();
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
      throw StateError("full conditional of kernel 'gibbs' returned foreign node '" + id + "'");
    }
  }
  const Position before = block().position(state);
  out.model_state = block().inject(draw, state);
  out.info.acceptance_prob = 1.0;
  out.info.position_moved = !(block().position(out.model_state) == before);
  return out;
}

// ---------------------------------------------------------------- MH

TransitionResult MHKernel::transition(const PrngKey& key, const KernelState& ks,
                                      const ModelState& state, const EpochState& epoch) const {
  TransitionResult out{ks, state, {}};
  const Proposal proposal = proposal_(key.fold_in(0), state, ks.step_size);
  RandomStream rng(key.fold_in(1));
  ModelState next = block().inject(proposal.position, state);
  const double lp = next.total_log_prob();
  if (!(lp > -kInf)) {
    out.info.error_code = error_code::kNegInfPosterior;
    out.info.acceptance_prob = 0.0;
    adapt(out.kernel_state, 0.0, epoch);
    return out;
  }
  const auto [prob, accepted] =
      metropolis_accept(lp - state.total_log_prob() + proposal.log_correction, rng);
  out.info.acceptance_prob = prob;
  if (accepted) {
    out.info.position_moved = !(block().position(next) == block().position(state));
    out.model_state = std::move(next);
  }
  adapt(out.kernel_state, prob, epoch);
  return out;
}

}  // namespace greylag
