#include <cmath>
#include <limits>

#include "greylag/kernels.hpp"

namespace greylag {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Generalized no-U-turn criterion between two trajectory ends.
bool no_u_turn(const Eigen::VectorXd& sharp_a, const Eigen::VectorXd& sharp_b,
               const Eigen::VectorXd& rho) {
  return sharp_a.dot(rho) > 0 && sharp_b.dot(rho) > 0;
}

}  // namespace

/// Subtree summary, oriented along the build direction: `beg` is adjacent
/// to the point the subtree was grown from, `end` is the outer edge.
struct NUTSKernel::Tree {
  Point end;
  Eigen::VectorXd p_beg, p_end, sharp_beg, sharp_end, rho;
  Point proposal;
  double log_weight = -kInf;
};

struct NUTSKernel::Trajectory {
  int n_leapfrog = 0;
  double sum_accept = 0.0;
  bool divergent = false;
};

bool NUTSKernel::build_tree(Trajectory& traj, const Point& from, int depth, int direction,
                            double eps, const Metric& metric, double h0, RandomStream& rng,
                            Tree& out) const {
  if (depth == 0) {
    Point x = step(from, direction * eps, metric);
    ++traj.n_leapfrog;
    const double h = hamiltonian(x, metric);
    if (h - h0 > kMaxEnergyError) traj.divergent = true;
    traj.sum_accept += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
    if (traj.divergent) return false;
    out.log_weight = h0 - h;
    out.p_beg = out.p_end = out.rho = x.p;
    out.sharp_beg = out.sharp_end = metric.velocity(x.p);
    out.proposal = x;
    out.end = std::move(x);
    return true;
  }

  Tree init;
  if (!build_tree(traj, from, depth - 1, direction, eps, metric, h0, rng, init)) return false;
  Tree final;
  if (!build_tree(traj, init.end, depth - 1, direction, eps, metric, h0, rng, final)) return false;

  out.log_weight = log_sum_exp(init.log_weight, final.log_weight);
  if (final.log_weight > out.log_weight) {
    out.proposal = std::move(final.proposal);
  } else if (rng.uniform() < std::exp(final.log_weight - out.log_weight)) {
    out.proposal = std::move(final.proposal);
  } else {
    out.proposal = std::move(init.proposal);
  }
  out.rho = init.rho + final.rho;
  bool persist = no_u_turn(init.sharp_beg, final.sharp_end, out.rho);
  persist = persist && no_u_turn(init.sharp_beg, final.sharp_beg, init.rho + final.p_beg);
  persist = persist && no_u_turn(init.sharp_end, final.sharp_end, final.rho + init.p_end);
  out.p_beg = std::move(init.p_beg);
  out.sharp_beg = std::move(init.sharp_beg);
  out.p_end = std::move(final.p_end);
  out.sharp_end = std::move(final.sharp_end);
  out.end = std::move(final.end);
  return persist;
}

TransitionResult NUTSKernel::transition(const PrngKey& key, const KernelState& ks,
                                        const ModelState& state, const EpochState& epoch) const {
  TransitionResult out{ks, state, {}};
  const Metric metric = Metric::from_state(ks, block().dim());
  RandomStream rng(key);
  const double eps = ks.step_size;

  Point x0;
  x0.q = block().flatten(state);
  x0.state = state;
  x0.log_prob = state.total_log_prob();
  x0.grad = block().gradient(state);
  x0.p = metric.sample_momentum(rng);
  const double h0 = hamiltonian(x0, metric);

  Point left = x0, right = x0;
  Eigen::VectorXd p_left = x0.p, p_right = x0.p;
  Eigen::VectorXd sharp_left = metric.velocity(x0.p), sharp_right = sharp_left;
  Eigen::VectorXd rho = x0.p;
  Point sample = x0;
  double log_sum_weight = 0.0;
  Trajectory traj;
  int depth = 0;

  while (depth < options_.max_tree_depth) {
    const int direction = rng.uniform() > 0.5 ? 1 : -1;
    Tree tree;
    const bool valid = build_tree(traj, direction > 0 ? right : left, depth, direction, eps,
                                  metric, h0, rng, tree);
    if (!valid) break;
    ++depth;

    if (tree.log_weight > log_sum_weight) {
      sample = tree.proposal;
    } else if (rng.uniform() < std::exp(tree.log_weight - log_sum_weight)) {
      sample = tree.proposal;
    }
    log_sum_weight = log_sum_exp(log_sum_weight, tree.log_weight);

    const Eigen::VectorXd& sharp_beg = direction > 0 ? sharp_left : sharp_right;
    const Eigen::VectorXd& sharp_end = direction > 0 ? sharp_right : sharp_left;
    const Eigen::VectorXd& p_end = direction > 0 ? p_right : p_left;
    const Eigen::VectorXd rho_old = rho;
    rho = rho_old + tree.rho;
    bool persist = no_u_turn(sharp_beg, tree.sharp_end, rho);
    persist = persist && no_u_turn(sharp_beg, tree.sharp_beg, rho_old + tree.p_beg);
    persist = persist && no_u_turn(sharp_end, tree.sharp_end, tree.rho + p_end);

    if (direction > 0) {
      right = std::move(tree.end);
      p_right = std::move(tree.p_end);
      sharp_right = std::move(tree.sharp_end);
    } else {
      left = std::move(tree.end);
      p_left = std::move(tree.p_end);
      sharp_left = std::move(tree.sharp_end);
    }
    if (!persist) break;
  }

  out.info.tree_depth = depth;
  out.info.n_leapfrog = traj.n_leapfrog;
  out.info.divergent = traj.divergent;
  out.info.acceptance_prob = traj.n_leapfrog > 0 ? traj.sum_accept / traj.n_leapfrog : 0.0;
  if (traj.divergent) {
    out.info.error_code = error_code::kDivergence;
  } else if (depth >= options_.max_tree_depth) {
    out.info.error_code = error_code::kMaxTreeDepth;
  }
  out.info.position_moved = sample.q != x0.q;
  out.model_state = std::move(sample.state);
  adapt(out.kernel_state, out.info.acceptance_prob, epoch);
  return out;
}

}  // namespace greylag
