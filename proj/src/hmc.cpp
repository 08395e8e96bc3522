#include <cmath>
#include <limits>

#include "greylag/errors.hpp"
#include "greylag/kernels.hpp"

namespace greylag {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------- Metric

Metric Metric::diagonal(Eigen::VectorXd inv_mass) {
  Metric m;
  m.dim_ = inv_mass.size();
  m.inv_diag_ = std::move(inv_mass);
  return m;
}

Metric Metric::dense(Eigen::MatrixXd inv_mass) {
  Metric m;
  m.dense_ = true;
  m.dim_ = inv_mass.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(inv_mass);
  if (llt.info() != Eigen::Success) throw DomainError("inverse mass matrix is not positive definite");
  m.inv_chol_ = llt.matrixL();
  m.inv_dense_ = std::move(inv_mass);
  return m;
}

Metric Metric::from_state(const KernelState& ks, Eigen::Index dim) {
  if (ks.inv_mass_dense.size() > 0) {
    Metric m;
    m.dense_ = true;
    m.dim_ = ks.inv_mass_dense.rows();
    m.inv_dense_ = ks.inv_mass_dense;
    m.inv_chol_ = ks.inv_mass_chol;
    return m;
  }
  if (ks.inv_mass_diag.size() > 0) return diagonal(ks.inv_mass_diag);
  return diagonal(Eigen::VectorXd::Ones(dim));
}

Eigen::VectorXd Metric::velocity(const Eigen::VectorXd& p) const {
  if (dense_) return inv_dense_ * p;
  return inv_diag_.cwiseProduct(p);
}

double Metric::kinetic_energy(const Eigen::VectorXd& p) const { return 0.5 * p.dot(velocity(p)); }

Eigen::VectorXd Metric::sample_momentum(RandomStream& rng) const {
  const Eigen::VectorXd z = rng.normal_vector(dim_);
  if (dense_) return inv_chol_.transpose().triangularView<Eigen::Upper>().solve(z);
  return z.cwiseQuotient(inv_diag_.cwiseSqrt());
}

// ---------------------------------------------------------------- leapfrog

std::pair<Eigen::VectorXd, Eigen::VectorXd> leapfrog(const Eigen::VectorXd& q,
                                                     const Eigen::VectorXd& p, double step,
                                                     int n_steps, const LogDensityFn& log_density,
                                                     const Metric& metric) {
  Eigen::VectorXd grad(q.size());
  Eigen::VectorXd qn = q, pn = p;
  double lp = log_density(qn, grad);
  const double h0 = -lp + metric.kinetic_energy(pn);
  for (int i = 0; i < n_steps; ++i) {
    pn += 0.5 * step * grad;
    qn += step * metric.velocity(pn);
    lp = log_density(qn, grad);
    pn += 0.5 * step * grad;
    const double h = -lp + metric.kinetic_energy(pn);
    if (!(std::abs(h - h0) <= kMaxEnergyError)) {
      throw DivergenceError("energy error " + std::to_string(h - h0) + " after " +
                            std::to_string(i + 1) + " leapfrog steps");
    }
  }
  return {qn, pn};
}

// ---------------------------------------------------------------- HamiltonianKernel

void HamiltonianKernel::validate_block(const PositionBlock& block) const {
  if (!block.continuous()) {
    throw NonDifferentiableError("kernel '" + name() + "' needs a real-valued position");
  }
}

KernelState HamiltonianKernel::init_state(const ModelState& state) const {
  KernelState ks = StepSizeKernel::init_state(state);
  const Eigen::Index d = block().dim();
  if (mass_.dense_mass) {
    ks.inv_mass_dense = Eigen::MatrixXd::Identity(d, d);
    ks.inv_mass_chol = Eigen::MatrixXd::Identity(d, d);
  } else {
    ks.inv_mass_diag = Eigen::VectorXd::Ones(d);
  }
  return ks;
}

bool HamiltonianKernel::needs_history(const EpochState& epoch) const {
  return mass_.adapt_mass && epoch.type == EpochType::SlowAdaptation;
}

TuningResult HamiltonianKernel::tune(const PrngKey& key, KernelState ks, const ModelState& state,
                                     const EpochState& epoch,
                                     const PositionHistory* history) const {
  TuningResult out = StepSizeKernel::tune(key, std::move(ks), state, epoch, history);
  if (!needs_history(epoch) || history == nullptr || history->size() < 3) return out;
  KernelState& k = out.kernel_state;
  Welford w = Welford::start(block().dim(), mass_.dense_mass);
  for (const auto& x : *history) w.update(x);
  if (mass_.dense_mass) {
    const Eigen::MatrixXd cov = regularized_covariance(w);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      out.info.error_code = error_code::kIndefiniteFisher;
      return out;
    }
    k.inv_mass_dense = cov;
    k.inv_mass_chol = llt.matrixL();
  } else {
    k.inv_mass_diag = regularized_variance(w);
  }
  ++k.mass_updates;
  return out;
}

HamiltonianKernel::Point HamiltonianKernel::evaluate(const Eigen::VectorXd& q,
                                                     const ModelState& base) const {
  Point x;
  x.q = q;
  x.state = block().inject(q, base);
  x.log_prob = x.state.total_log_prob();
  if (std::isnan(x.log_prob)) x.log_prob = -kInf;
  if (x.log_prob > -kInf) {
    x.grad = block().gradient(x.state);
  } else {
    x.grad = Eigen::VectorXd::Zero(q.size());
  }
  return x;
}

HamiltonianKernel::Point HamiltonianKernel::step(const Point& from, double eps,
                                                 const Metric& metric) const {
  const Eigen::VectorXd p_half = from.p + 0.5 * eps * from.grad;
  Point x = evaluate(from.q + eps * metric.velocity(p_half), from.state);
  x.p = x.log_prob > -kInf ? Eigen::VectorXd(p_half + 0.5 * eps * x.grad) : p_half;
  return x;
}

double HamiltonianKernel::hamiltonian(const Point& x, const Metric& metric) const {
  if (!(x.log_prob > -kInf)) return kInf;
  const double h = -x.log_prob + metric.kinetic_energy(x.p);
  return std::isnan(h) ? kInf : h;
}

double HamiltonianKernel::restart_step(const PrngKey& key, const KernelState& ks,
                                       const ModelState& state) const {
  const Metric metric = Metric::from_state(ks, block().dim());
  RandomStream rng(key);
  Point x0;
  x0.q = block().flatten(state);
  x0.state = state;
  x0.log_prob = state.total_log_prob();
  if (!(x0.log_prob > -kInf)) return ks.step_size;
  x0.grad = block().gradient(state);
  const double log_target = std::log(0.8);

  double eps = ks.step_size;
  auto energy_drop = [&]() {
    x0.p = metric.sample_momentum(rng);
    const double h0 = hamiltonian(x0, metric);
    return h0 - hamiltonian(step(x0, eps, metric), metric);
  };
  double delta = energy_drop();
  const int direction = delta > log_target ? 1 : -1;
  for (int i = 0; i < 100; ++i) {
    if (direction == 1 && !(delta > log_target)) break;
    if (direction == -1 && !(delta < log_target)) break;
    eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
    if (eps > 1e7 || eps < 1e-12) break;
    delta = energy_drop();
  }
  return eps;
}

// ---------------------------------------------------------------- HMC

TransitionResult HMCKernel::transition(const PrngKey& key, const KernelState& ks,
                                       const ModelState& state, const EpochState& epoch) const {
  TransitionResult out{ks, state, {}};
  const Metric metric = Metric::from_state(ks, block().dim());
  RandomStream rng(key);

  Point x;
  x.q = block().flatten(state);
  x.state = state;
  x.log_prob = state.total_log_prob();
  x.grad = block().gradient(state);
  x.p = metric.sample_momentum(rng);
  double eps = ks.step_size;
  if (options_.jitter > 0.0) eps *= 1.0 + options_.jitter * (2.0 * rng.uniform() - 1.0);

  const double h0 = hamiltonian(x, metric);
  for (int i = 0; i < options_.n_steps; ++i) {
    x = step(x, eps, metric);
    ++out.info.n_leapfrog;
    if (!(hamiltonian(x, metric) - h0 <= kMaxEnergyError)) {
      out.info.error_code = error_code::kDivergence;
      out.info.divergent = true;
      out.info.acceptance_prob = 0.0;
      adapt(out.kernel_state, 0.0, epoch);
      return out;
    }
  }
  const auto [accept_prob, accepted] = metropolis_accept(h0 - hamiltonian(x, metric), rng);
  out.info.acceptance_prob = accept_prob;
  if (accepted) {
    out.info.position_moved = x.q != block().flatten(state);
    out.model_state = std::move(x.state);
  }
  adapt(out.kernel_state, accept_prob, epoch);
  return out;
}

}  // namespace greylag
