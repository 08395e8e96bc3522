#include "greylag/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <set>

#include <omp.h>

#include "greylag/errors.hpp"

namespace greylag {

// ---------------------------------------------------------------- schedule

std::vector<EpochConfig> stan_warmup_schedule(long n_warmup, long n_posterior) {
  if (n_warmup < 20) {
    throw ScheduleError("warmup of " + std::to_string(n_warmup) + " iterations is below 20");
  }
  if (n_posterior < 1) throw ScheduleError("at least one posterior iteration is required");

  long fast = 75, slow_base = 25, end = 50;
  if (n_warmup < fast + slow_base + end) {
    fast = long(0.15 * double(n_warmup));
    end = long(0.1 * double(n_warmup));
    slow_base = n_warmup - fast - end;
  }
  std::vector<EpochConfig> out;
  out.push_back({EpochType::FastAdaptation, fast, 1});
  long remaining = n_warmup - fast - end;
  long window = slow_base;
  while (remaining > 0) {
    if (remaining - window < 2 * window) window = remaining;
    out.push_back({EpochType::SlowAdaptation, window, 1});
    remaining -= window;
    window *= 2;
  }
  out.push_back({EpochType::FastAdaptation, end, 1});
  out.push_back({EpochType::Posterior, n_posterior, 1});
  return out;
}

void validate_schedule(const std::vector<EpochConfig>& epochs) {
  bool posterior_seen = false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& e = epochs[i];
    const std::string where = "epoch " + std::to_string(i) + " (" +
                              std::string(epoch_type_name(e.type)) + ")";
    if (e.duration < 1) throw ScheduleError(where + ": duration must be at least 1");
    if (e.thinning < 1) throw ScheduleError(where + ": thinning must be at least 1");
    if (e.thinning != 1 && e.type != EpochType::Posterior) {
      throw ScheduleError(where + ": thinning is only allowed in posterior epochs");
    }
    if (posterior_seen && e.type != EpochType::Posterior) {
      throw ScheduleError(where + " follows a posterior epoch");
    }
    posterior_seen = posterior_seen || e.type == EpochType::Posterior;
  }
}

// ---------------------------------------------------------------- results

Eigen::Index SamplingResults::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw StateError("no column '" + name + "' in the results");
  return Eigen::Index(it - columns.begin());
}

Eigen::MatrixXd SamplingResults::draws(const NodeId& id, int chain) const {
  const auto it = std::find(parameters.begin(), parameters.end(), id);
  if (it == parameters.end()) throw StateError("node '" + id + "' was not sampled");
  const auto k = std::size_t(it - parameters.begin());
  const Eigen::Index size =
      (k + 1 < offsets.size() ? offsets[k + 1] : Eigen::Index(columns.size())) - offsets[k];
  return posterior.at(chain).middleCols(offsets[k], size);
}

Eigen::MatrixXd SamplingResults::column_draws(const std::string& name) const {
  const Eigen::Index c = column(name);
  Eigen::MatrixXd out(num_chains, num_draws());
  for (int i = 0; i < num_chains; ++i) out.row(i) = posterior[i].col(c).transpose();
  return out;
}

std::vector<ErrorSummary> SamplingResults::error_summary() const {
  std::map<std::tuple<int, std::size_t, std::size_t>, ErrorSummary> agg;
  for (const auto& e : error_log) {
    auto& s = agg[{e.code, e.kernel, e.epoch}];
    s.code = e.code;
    s.kernel = e.kernel;
    s.kernel_name = e.kernel_name;
    s.epoch = e.epoch;
    ++s.count;
  }
  std::vector<ErrorSummary> out;
  for (auto& [key, s] : agg) out.push_back(s);
  return out;
}

double SamplingResults::posterior_acceptance(std::size_t kernel) const {
  double sum = 0.0;
  long n = 0;
  for (const auto& chain : epoch_summaries) {
    for (const auto& s : chain) {
      if (s.kernel != kernel || s.type != EpochType::Posterior) continue;
      sum += s.mean_acceptance * double(s.transitions);
      n += s.transitions;
    }
  }
  return n > 0 ? sum / double(n) : 0.0;
}

// ---------------------------------------------------------------- builder

EngineBuilder& EngineBuilder::set_model(const ModelGraph& graph) {
  return set_model(std::make_shared<const ModelInterface>(graph), graph.state());
}

EngineBuilder& EngineBuilder::set_model(std::shared_ptr<const ModelInterface> model,
                                        ModelState initial) {
  model_ = std::move(model);
  initial_ = {std::move(initial)};
  return *this;
}

EngineBuilder& EngineBuilder::set_initial_state(ModelState state) {
  initial_ = {std::move(state)};
  return *this;
}

EngineBuilder& EngineBuilder::set_initial_states(std::vector<ModelState> states) {
  initial_ = std::move(states);
  return *this;
}

EngineBuilder& EngineBuilder::add_kernel(std::shared_ptr<Kernel> kernel) {
  kernels_.push_back(std::move(kernel));
  return *this;
}

EngineBuilder& EngineBuilder::set_epochs(std::vector<EpochConfig> epochs) {
  epochs_ = std::move(epochs);
  return *this;
}

EngineBuilder& EngineBuilder::add_epoch(EpochConfig epoch) {
  epochs_.push_back(epoch);
  return *this;
}

EngineBuilder& EngineBuilder::set_seed(std::uint64_t seed) {
  seed_ = seed;
  return *this;
}

EngineBuilder& EngineBuilder::set_num_chains(int n) {
  num_chains_ = n;
  return *this;
}

EngineBuilder& EngineBuilder::set_debug(DebugOptions debug) {
  debug_ = std::move(debug);
  return *this;
}

EngineBuilder& EngineBuilder::set_jitter(JitterFn jitter) {
  jitter_ = std::move(jitter);
  return *this;
}

EngineBuilder& EngineBuilder::set_threads(int n) {
  threads_ = n;
  return *this;
}

namespace {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GREYLAG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1, omp_get_max_threads());
}

std::vector<std::string> column_names(const NodeId& id, const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  if (shape.empty()) return {id};
  std::vector<std::string> out;
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::string idx;
    std::size_t rest = flat, stride = n;
    for (std::size_t k = 0; k < shape.size(); ++k) {
      stride /= shape[k];
      idx += (k ? "," : "") + std::to_string(rest / stride);
      rest %= stride;
    }
    out.push_back(id + "[" + idx + "]");
  }
  return out;
}

}  // namespace

Engine EngineBuilder::build() {
  if (!model_) throw InitError("no model was set");
  if (kernels_.empty()) throw CoverageError("no kernels were added");
  if (num_chains_ < 1) throw InitError("the number of chains must be at least 1");
  validate_schedule(epochs_);
  if (std::none_of(epochs_.begin(), epochs_.end(),
                   [](const EpochConfig& e) { return e.type == EpochType::Posterior; })) {
    throw ScheduleError("the schedule has no posterior epoch");
  }

  const std::vector<NodeId> params = model_->parameter_ids();
  const std::set<NodeId> param_set(params.begin(), params.end());
  std::map<NodeId, std::string> owner;
  for (std::size_t k = 0; k < kernels_.size(); ++k) {
    const auto& kernel = *kernels_[k];
    const std::string who = "kernel " + std::to_string(k) + " (" + kernel.name() + ")";
    if (kernel.position_ids().empty()) throw CoverageError(who + " has an empty position");
    for (const auto& id : kernel.position_ids()) {
      if (!model_->contains(id)) throw CoverageError(who + " refers to unknown node '" + id + "'");
      if (!param_set.count(id)) {
        throw CoverageError(who + " moves '" + id + "', which is not a strong parameter node");
      }
      if (auto [it, fresh] = owner.emplace(id, who); !fresh) {
        throw CoverageError("node '" + id + "' is assigned to " + it->second + " and " + who);
      }
    }
  }
  for (const auto& id : params) {
    if (!owner.count(id)) throw CoverageError("parameter '" + id + "' is not assigned to a kernel");
  }

  for (auto& kernel : kernels_) kernel->bind(model_);

  Engine engine;
  engine.model_ = model_;
  engine.kernels_ = kernels_;
  engine.epochs_ = epochs_;
  engine.root_ = PrngKey::from_seed(seed_);
  engine.threads_ = resolve_threads(threads_);
  engine.debug_ = debug_;
  if (engine.debug_.batch_size == 0) engine.debug_.batch_size = 1;
  engine.parameters_ = params;
  engine.all_params_ = model_->block(params);

  if (initial_.size() != 1 && initial_.size() != std::size_t(num_chains_)) {
    throw InitError("expected 1 or " + std::to_string(num_chains_) + " initial states, got " +
                    std::to_string(initial_.size()));
  }
  engine.chains_.resize(num_chains_);
  for (int c = 0; c < num_chains_; ++c) {
    auto& chain = engine.chains_[c];
    chain.model = initial_[initial_.size() == 1 ? 0 : c];
    if (jitter_) chain.model = jitter_(engine.root_.fold_in(1).fold_in(c), chain.model);
    const double lp = chain.model.total_log_prob();
    if (!(lp > -std::numeric_limits<double>::infinity()) || std::isnan(lp)) {
      throw InitError("initial log-probability of chain " + std::to_string(c) + " is " +
                      std::to_string(lp));
    }
    for (const auto& kernel : kernels_) chain.kernels.push_back(kernel->init_state(chain.model));
  }
  return engine;
}

// ---------------------------------------------------------------- engine

PrngKey Engine::chain_key(int chain) const { return root_.fold_in(0).fold_in(chain); }

PrngKey Engine::transition_key(int chain, std::size_t epoch, long iteration,
                               std::size_t kernel) const {
  return chain_key(chain).fold_in(epoch).fold_in(0).fold_in(iteration).fold_in(kernel);
}

PrngKey Engine::lifecycle_key(int chain, std::size_t epoch, int stage, std::size_t kernel) const {
  return chain_key(chain).fold_in(epoch).fold_in(1).fold_in(stage).fold_in(kernel);
}

Eigen::VectorXd Engine::flat_position(const ModelState& state) const {
  return all_params_->flatten(state);
}

Eigen::VectorXd Engine::tracked_row(const ModelState& state) const {
  const std::size_t base = debug_.track_log_prob ? 3 : 0;
  Eigen::VectorXd row(Eigen::Index(base + debug_.quantities.size()));
  if (debug_.track_log_prob) {
    row[0] = state.total_log_prob();
    row[1] = state.log_lik();
    row[2] = state.log_prior();
  }
  for (std::size_t q = 0; q < debug_.quantities.size(); ++q) {
    row[Eigen::Index(base + q)] = debug_.quantities[q].fn(state);
  }
  return row;
}

void Engine::flush(Chain& chain) const {
  for (auto& row : chain.buffer) chain.posterior.push_back(std::move(row));
  for (auto& row : chain.tracked_buffer) chain.tracked.push_back(std::move(row));
  chain.buffer.clear();
  chain.tracked_buffer.clear();
}

void Engine::run_epoch(int c, std::size_t e, bool first_posterior) {
  Chain& chain = chains_[c];
  const EpochConfig& cfg = epochs_[e];
  const std::size_t n_kernels = kernels_.size();
  EpochState epoch{cfg.type, cfg.duration, e, 0};
  const bool adaptation = is_adaptation(cfg.type);
  const bool posterior = cfg.type == EpochType::Posterior;

  auto log_error = [&](std::size_t k, int code, std::string message) {
    chain.errors.push_back(
        {code, k, kernels_[k]->name(), c, e, chain.iteration, std::move(message)});
  };
  // Lifecycle calls other than transition: exceptions become code 100 and
  // leave the kernel state untouched.
  auto guarded = [&](std::size_t k, auto&& call) {
    try {
      call();
    } catch (const std::exception& ex) {
      log_error(k, error_code::kKernelException, ex.what());
    }
  };

  if (first_posterior) {
    for (std::size_t k = 0; k < n_kernels; ++k) {
      guarded(k, [&] {
        chain.kernels[k] =
            kernels_[k]->end_warmup(lifecycle_key(c, e, 3, k), chain.kernels[k], chain.model, epoch);
      });
    }
  }
  for (std::size_t k = 0; k < n_kernels; ++k) {
    guarded(k, [&] {
      chain.kernels[k] =
          kernels_[k]->start_epoch(lifecycle_key(c, e, 0, k), chain.kernels[k], chain.model, epoch);
    });
  }

  std::vector<bool> wants_history(n_kernels);
  std::vector<PositionHistory> history(n_kernels);
  for (std::size_t k = 0; k < n_kernels; ++k) {
    wants_history[k] = adaptation && kernels_[k]->needs_history(epoch);
    if (wants_history[k]) history[k].reserve(std::size_t(cfg.duration));
  }
  std::vector<double> accept_sum(n_kernels, 0.0);
  std::vector<long> error_count(n_kernels, 0);

  for (long it = 0; it < cfg.duration; ++it) {
    epoch.iteration = it;
    for (std::size_t k = 0; k < n_kernels; ++k) {
      TransitionInfo info;
      try {
        TransitionResult r = kernels_[k]->transition(transition_key(c, e, it, k), chain.kernels[k],
                                                     chain.model, epoch);
        chain.kernels[k] = std::move(r.kernel_state);
        chain.model = std::move(r.model_state);
        info = r.info;
        if (info.error_code != error_code::kOk) {
          log_error(k, info.error_code, std::string(error_code_name(info.error_code)));
        }
      } catch (const std::exception& ex) {
        info = TransitionInfo{};
        info.error_code = error_code::kKernelException;
        info.acceptance_prob = 0.0;
        log_error(k, info.error_code, ex.what());
      }
      accept_sum[k] += info.acceptance_prob;
      if (info.error_code != error_code::kOk) ++error_count[k];
      if (wants_history[k]) history[k].push_back(kernels_[k]->block().flatten(chain.model));
      if (debug_.store_transition_infos) chain.transitions.push_back({e, chain.iteration, k, info});
    }
    if (posterior) {
      if ((it + 1) % cfg.thinning == 0) {
        chain.buffer.push_back(flat_position(chain.model));
        if (debug_.track_log_prob || !debug_.quantities.empty()) {
          chain.tracked_buffer.push_back(tracked_row(chain.model));
        }
        if (chain.buffer.size() >= debug_.batch_size) flush(chain);
      }
    } else if (debug_.store_warmup_history) {
      chain.warmup.push_back(flat_position(chain.model));
    }
    ++chain.iteration;
  }
  flush(chain);

  for (std::size_t k = 0; k < n_kernels; ++k) {
    guarded(k, [&] {
      chain.kernels[k] =
          kernels_[k]->end_epoch(lifecycle_key(c, e, 1, k), chain.kernels[k], chain.model, epoch);
    });
  }
  if (adaptation) {
    for (std::size_t k = 0; k < n_kernels; ++k) {
      guarded(k, [&] {
        TuningResult r = kernels_[k]->tune(lifecycle_key(c, e, 2, k), chain.kernels[k],
                                           chain.model, epoch,
                                           wants_history[k] ? &history[k] : nullptr);
        chain.kernels[k] = std::move(r.kernel_state);
        chain.tunings.push_back({e, k, r.info});
        if (r.info.error_code != error_code::kOk) {
          log_error(k, r.info.error_code, std::string(error_code_name(r.info.error_code)));
        }
      });
    }
  }
  for (std::size_t k = 0; k < n_kernels; ++k) {
    chain.summaries.push_back({e, cfg.type, k, cfg.duration,
                               accept_sum[k] / double(cfg.duration), error_count[k],
                               chain.kernels[k].step_size});
    if (debug_.store_kernel_states) chain.states.push_back({e, k, chain.kernels[k]});
  }
}

void Engine::sample_next_epoch() {
  if (next_epoch_ >= epochs_.size()) throw ExhaustedError("all epochs have been sampled");
  const std::size_t e = next_epoch_;
  const bool first_posterior = !warmup_ended_ && epochs_[e].type == EpochType::Posterior;

  std::vector<std::exception_ptr> failures(chains_.size());
  const int n = num_chains();
  const auto start = std::chrono::steady_clock::now();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads_) if (threads_ > 1 && n > 1)
  for (int c = 0; c < n; ++c) {
    try {
      run_epoch(c, e, first_posterior);
    } catch (...) {
      failures[c] = std::current_exception();
    }
  }
  if (epochs_[e].type == EpochType::Posterior) {
    posterior_seconds_ +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  if (first_posterior) warmup_ended_ = true;
  ++next_epoch_;
}

void Engine::sample_all_epochs() {
  while (next_epoch_ < epochs_.size()) sample_next_epoch();
}

void Engine::append_epoch(EpochConfig epoch) {
  std::vector<EpochConfig> extended = epochs_;
  extended.push_back(epoch);
  validate_schedule(extended);
  epochs_ = std::move(extended);
}

SamplingResults Engine::get_results() const {
  SamplingResults r;
  r.num_chains = num_chains();
  r.parameters = parameters_;
  r.epochs = epochs_;
  r.posterior_seconds = posterior_seconds_;
  Eigen::Index offset = 0;
  const auto& layout = *model_->structure();
  for (const auto& id : parameters_) {
    const Shape& shape = layout.node(layout.index(id)).shape;
    r.shapes.push_back(shape);
    r.offsets.push_back(offset);
    for (auto& name : column_names(id, shape)) r.columns.push_back(std::move(name));
    offset = Eigen::Index(r.columns.size());
  }
  for (const auto& k : kernels_) r.kernel_names.push_back(k->name());
  if (debug_.track_log_prob) r.tracked_names = {"log_prob", "log_lik", "log_prior"};
  for (const auto& q : debug_.quantities) r.tracked_names.push_back(q.name);

  auto stack = [](const std::vector<Eigen::VectorXd>& rows, Eigen::Index cols) {
    Eigen::MatrixXd m(Eigen::Index(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(Eigen::Index(i)) = rows[i].transpose();
    return m;
  };
  const auto n_cols = Eigen::Index(r.columns.size());
  const auto n_tracked = Eigen::Index(r.tracked_names.size());
  for (const auto& chain : chains_) {
    r.posterior.push_back(stack(chain.posterior, n_cols));
    if (debug_.store_warmup_history) r.warmup.push_back(stack(chain.warmup, n_cols));
    r.tracked.push_back(stack(chain.tracked, n_tracked));
    r.transition_infos.push_back(chain.transitions);
    r.tuning_infos.push_back(chain.tunings);
    r.kernel_states.push_back(chain.states);
    r.epoch_summaries.push_back(chain.summaries);
    r.error_log.insert(r.error_log.end(), chain.errors.begin(), chain.errors.end());
  }
  return r;
}

}  // namespace greylag
