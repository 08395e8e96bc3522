#include "greylag/schemes.hpp"

#include <chrono>
#include <cmath>

#include "greylag/errors.hpp"
#include "greylag/kernels.hpp"
#include "greylag/model_interface.hpp"

namespace greylag {

const std::vector<std::string>& scheme_names() {
  static const std::vector<std::string> names{"iwls-gibbs", "nuts-gibbs", "nuts1", "nuts2", "hmc2"};
  return names;
}

std::string_view scheme_name(Scheme scheme) { return scheme_names()[std::size_t(scheme)]; }

Scheme scheme_from_name(std::string_view name) {
  const auto& names = scheme_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return Scheme(i);
  }
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown scheme '" + std::string(name) + "' (valid schemes: " + valid + ")");
}

namespace {

struct PredictorNodes {
  NodeId intercept;
  std::vector<TermIds> terms;
};

std::vector<PredictorNodes> collect(const ModelGraph& graph, const std::vector<std::string>& predictors) {
  std::vector<PredictorNodes> out;
  for (const auto& p : predictors) {
    PredictorNodes nodes;
    nodes.intercept = intercept_id(p);
    if (!graph.contains(nodes.intercept)) {
      throw ConfigError("the model has no predictor '" + p + "'");
    }
    for (std::size_t j = 0; graph.contains(term_ids(p, j).beta); ++j) nodes.terms.push_back(term_ids(p, j));
    out.push_back(std::move(nodes));
  }
  return out;
}

std::shared_ptr<Kernel> make_kernel(const std::string& kind, const std::vector<NodeId>& ids) {
  if (kind == "iwls") return std::make_shared<IWLSKernel>(ids);
  if (kind == "nuts") return std::make_shared<NUTSKernel>(ids);
  if (kind == "hmc") return std::make_shared<HMCKernel>(ids);
  throw ConfigError("unknown kernel kind '" + kind + "'");
}

}  // namespace

SchemeSetup configure_scheme(Scheme scheme, ModelGraph& graph,
                             const std::vector<std::string>& predictors) {
  const auto blocks = collect(graph, predictors);
  SchemeSetup setup;
  auto add = [&](const std::string& kind, std::vector<NodeId> ids) {
    setup.assignments.push_back({kind, std::move(ids)});
  };
  auto transformed = [&](const NodeId& tau2) {
    return transform_node(graph, tau2, Bijector{BijectorKind::Exp});
  };

  switch (scheme) {
    case Scheme::IwlsGibbs:
    case Scheme::NutsGibbs: {
      const std::string kind = scheme == Scheme::IwlsGibbs ? "iwls" : "nuts";
      for (const auto& p : blocks) {
        add(kind, {p.intercept});
        for (const auto& t : p.terms) {
          add(kind, {t.beta});
          add("gibbs", {t.tau2});
        }
      }
      break;
    }
    case Scheme::Nuts1: {
      std::vector<NodeId> all;
      for (const auto& p : blocks) {
        all.push_back(p.intercept);
        for (const auto& t : p.terms) {
          all.push_back(t.beta);
          all.push_back(transformed(t.tau2));
        }
      }
      add("nuts", std::move(all));
      break;
    }
    case Scheme::Nuts2:
    case Scheme::Hmc2: {
      const std::string kind = scheme == Scheme::Nuts2 ? "nuts" : "hmc";
      for (const auto& p : blocks) {
        std::vector<NodeId> ids{p.intercept};
        for (const auto& t : p.terms) {
          ids.push_back(t.beta);
          ids.push_back(transformed(t.tau2));
        }
        add(kind, std::move(ids));
      }
      break;
    }
  }

  for (const auto& a : setup.assignments) {
    if (a.kind == "gibbs") {
      const NodeId& tau2 = a.position.front();
      const NodeId beta = tau2.substr(0, tau2.size() - 4) + "beta";
      setup.kernels.push_back(tau2_gibbs_kernel(graph, beta, tau2));
    } else {
      setup.kernels.push_back(make_kernel(a.kind, a.position));
    }
  }
  return setup;
}

JitterFn uniform_jitter(std::shared_ptr<const GraphStructure> structure, std::vector<NodeId> ids,
                        double width) {
  return [structure = std::move(structure), ids = std::move(ids), width](const PrngKey& key,
                                                                         const ModelState& state) {
    RandomStream rng(key);
    Position pos;
    for (const auto& id : ids) {
      Value v = state.value(id);
      for (auto& x : v.data()) x += width * (2.0 * rng.uniform() - 1.0);
      pos.set(id, std::move(v));
    }
    return structure->apply(pos, state);
  };
}

// ---------------------------------------------------------------- case study

double lidar_like_mean(double x) {
  const double step = 1.0 / (1.0 + std::exp(-(x - 610.0) / 22.0));
  return -0.05 - 0.65 * step - 0.0002 * (x - 390.0) * (1.0 - step);
}

double lidar_like_log_sd(double x) {
  const double rise = 1.0 / (1.0 + std::exp(-(x - 620.0) / 30.0));
  return std::log(0.02) + 2.1 * rise;
}

SimulatedData simulate_location_scale(std::size_t n, double lo, double hi,
                                      const std::function<double(double)>& mean,
                                      const std::function<double(double)>& log_sd,
                                      std::uint64_t seed) {
  if (n < 2) throw ConfigError("at least two observations are required");
  if (!(hi > lo)) throw ConfigError("the covariate range must have hi > lo");
  SimulatedData out;
  out.x.resize(Eigen::Index(n));
  out.y.resize(Eigen::Index(n));
  RandomStream rng(PrngKey::from_seed(seed));
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lo + (hi - lo) * double(i) / double(n - 1);
    out.x[Eigen::Index(i)] = x;
    out.y[Eigen::Index(i)] = mean(x) + std::exp(log_sd(x)) * rng.normal();
  }
  return out;
}

DistRegModel location_scale_model(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                  const LocationScaleOptions& options) {
  if (x.size() != y.size()) throw ShapeError("x and y differ in length");
  DistRegModel model;
  model.response = y;
  model.family = Family::Normal;
  const double m = y.mean();
  const double sd = std::sqrt((y.array() - m).square().sum() / double(y.size() - 1));
  Predictor loc{"loc", InverseLink::Identity, {}, m};
  loc.terms.push_back(pspline_term(x, options.n_basis, options.degree, options.order));
  Predictor scale{"scale", InverseLink::Exp, {}, std::log(sd)};
  scale.terms.push_back(pspline_term(x, options.n_basis, options.degree, options.order));
  model.predictors = {std::move(loc), std::move(scale)};
  return model;
}

SchemeRun run_scheme(Scheme scheme, const DistRegModel& model, const SchemeRunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  ModelGraph graph = build_distreg_model(model);
  std::vector<std::string> predictors;
  for (const auto& p : model.predictors) predictors.push_back(p.name);
  SchemeRun run;
  run.setup = configure_scheme(scheme, graph, predictors);

  std::vector<NodeId> jittered;
  for (const auto& p : predictors) {
    jittered.push_back(intercept_id(p));
    for (std::size_t j = 0; graph.contains(term_ids(p, j).beta); ++j) {
      jittered.push_back(term_ids(p, j).beta);
    }
  }
  EngineBuilder builder;
  builder.set_model(graph)
      .set_seed(options.seed)
      .set_num_chains(options.chains)
      .set_threads(options.threads)
      .set_epochs(stan_warmup_schedule(options.warmup, options.posterior));
  if (options.jitter > 0.0) {
    builder.set_jitter(uniform_jitter(graph.structure(), jittered, options.jitter));
  }
  for (const auto& k : run.setup.kernels) builder.add_kernel(k);
  Engine engine = builder.build();
  run.setup_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  engine.sample_all_epochs();
  run.results = engine.get_results();
  return run;
}

Eigen::MatrixXd predictor_draws(const SamplingResults& results, const DistRegModel& model,
                                const std::string& name, const Eigen::VectorXd& grid) {
  const Predictor* pred = nullptr;
  for (const auto& p : model.predictors) {
    if (p.name == name) pred = &p;
  }
  if (!pred) throw StateError("no predictor '" + name + "'");
  std::vector<Eigen::MatrixXd> designs;
  for (const auto& t : pred->terms) designs.push_back(t.design(grid));
  const long draws = results.num_draws();
  Eigen::MatrixXd out(results.num_chains * draws, grid.size());
  for (int c = 0; c < results.num_chains; ++c) {
    const Eigen::MatrixXd b0 = results.draws(intercept_id(name), c);
    Eigen::MatrixXd block = b0.col(0).replicate(1, grid.size());
    for (std::size_t j = 0; j < designs.size(); ++j) {
      block += results.draws(term_ids(name, j).beta, c) * designs[j].transpose();
    }
    out.middleRows(Eigen::Index(c) * draws, draws) = block;
  }
  return out;
}

}  // namespace greylag
