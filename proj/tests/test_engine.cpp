#include <cstdlib>
#include <string>

#include <gtest/gtest.h>

#include "greylag/engine.hpp"
#include "greylag/errors.hpp"
#include "support/mock_kernel.hpp"
#include "support/targets.hpp"

using namespace greylag;
using namespace greylag::testing;

namespace {

/// a, b ~ N(0, 1); y ~ N(a + b, 1).
ModelGraph two_parameter_model() {
  std::vector<Node> nodes;
  nodes.push_back(
      Node::parameter("a", Value::scalar(0.1), DistributionSpec::normal(Value::scalar(0), Value::scalar(1))));
  nodes.push_back(
      Node::parameter("b", Value::scalar(-0.2), DistributionSpec::normal(Value::scalar(0), Value::scalar(1))));
  nodes.push_back(Node::weak("c", weak::add(), {"a", "b"}));
  nodes.push_back(
      Node::observed("y", Value::scalar(0.7), DistributionSpec::normal(NodeId("c"), Value::scalar(1))));
  return ModelGraph(std::move(nodes));
}

std::vector<long> durations(const std::vector<EpochConfig>& epochs) {
  std::vector<long> out;
  for (const auto& e : epochs) out.push_back(e.duration);
  return out;
}

Engine two_kernel_engine(const ModelGraph& graph, int chains, std::uint64_t seed, int threads,
                         long warmup = 200, long posterior = 300) {
  return EngineBuilder()
      .set_model(graph)
      .add_kernel(std::make_shared<NUTSKernel>(std::vector<NodeId>{"a"}))
      .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"b"}))
      .set_epochs(stan_warmup_schedule(warmup, posterior))
      .set_num_chains(chains)
      .set_seed(seed)
      .set_threads(threads)
      .build();
}

}  // namespace

// ---------------------------------------------------------------- schedule

TEST(Schedule, StanWindows) {
  const auto s = stan_warmup_schedule(1000, 500);
  EXPECT_EQ(durations(s), (std::vector<long>{75, 25, 50, 100, 200, 500, 50, 500}));
  EXPECT_EQ(s.front().type, EpochType::FastAdaptation);
  EXPECT_EQ(s[1].type, EpochType::SlowAdaptation);
  EXPECT_EQ(s[5].type, EpochType::SlowAdaptation);
  EXPECT_EQ(s[6].type, EpochType::FastAdaptation);
  EXPECT_EQ(s.back().type, EpochType::Posterior);

  EXPECT_EQ(durations(stan_warmup_schedule(150, 1)), (std::vector<long>{75, 25, 50, 1}));
  EXPECT_EQ(durations(stan_warmup_schedule(100, 1)), (std::vector<long>{15, 75, 10, 1}));
  EXPECT_EQ(durations(stan_warmup_schedule(20, 1)), (std::vector<long>{3, 15, 2, 1}));
}

TEST(Schedule, WarmupTotalsArePreserved) {
  for (long n : {20L, 99L, 150L, 151L, 300L, 777L, 1000L, 5000L}) {
    long total = 0;
    for (const auto& e : stan_warmup_schedule(n, 1)) {
      if (e.type != EpochType::Posterior) total += e.duration;
    }
    EXPECT_EQ(total, n);
  }
}

TEST(Schedule, Errors) {
  EXPECT_THROW(stan_warmup_schedule(1000, 0), ScheduleError);
  EXPECT_THROW(stan_warmup_schedule(19, 10), ScheduleError);
  EXPECT_THROW(validate_schedule({{EpochType::Posterior, 5, 1}, {EpochType::Burnin, 5, 1}}),
               ScheduleError);
  EXPECT_THROW(validate_schedule({{EpochType::Burnin, 0, 1}}), ScheduleError);
  EXPECT_THROW(validate_schedule({{EpochType::Burnin, 4, 2}}), ScheduleError);
  EXPECT_NO_THROW(validate_schedule({{EpochType::Burnin, 4, 1}, {EpochType::Posterior, 4, 2}}));
}

// ---------------------------------------------------------------- build

TEST(Build, CoverageErrors) {
  auto graph = two_parameter_model();
  try {
    EngineBuilder()
        .set_model(graph)
        .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"a"}))
        .set_epochs({{EpochType::Posterior, 10, 1}})
        .build();
    FAIL() << "expected CoverageError";
  } catch (const CoverageError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  EXPECT_THROW(EngineBuilder()
                   .set_model(graph)
                   .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"a", "b"}))
                   .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"b"}))
                   .set_epochs({{EpochType::Posterior, 10, 1}})
                   .build(),
               CoverageError);
  EXPECT_THROW(EngineBuilder()
                   .set_model(graph)
                   .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"a", "b", "c"}))
                   .set_epochs({{EpochType::Posterior, 10, 1}})
                   .build(),
               CoverageError);
}

TEST(Build, InitAndScheduleErrors) {
  auto graph = gamma_target(2.0, 1.0);
  graph.set_value("x", Value::scalar(-1.0));
  graph.update();
  EXPECT_THROW(EngineBuilder()
                   .set_model(graph)
                   .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"x"}))
                   .set_epochs({{EpochType::Posterior, 10, 1}})
                   .build(),
               InitError);
  auto ok = gamma_target(2.0, 1.0);
  EXPECT_THROW(EngineBuilder()
                   .set_model(ok)
                   .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"x"}))
                   .set_epochs({{EpochType::Burnin, 10, 1}})
                   .build(),
               ScheduleError);
}

TEST(Build, ValidTwoKernelSetup) {
  auto graph = two_parameter_model();
  Engine engine = two_kernel_engine(graph, 4, 99, 1);
  EXPECT_EQ(engine.num_chains(), 4);
  EXPECT_EQ(engine.kernels().size(), 2u);
  for (int c = 0; c < 4; ++c) {
    for (int d = c + 1; d < 4; ++d) EXPECT_FALSE(engine.chain_key(c) == engine.chain_key(d));
  }
  EXPECT_FALSE(engine.transition_key(0, 0, 0, 0) == engine.transition_key(0, 0, 0, 1));
  EXPECT_FALSE(engine.transition_key(0, 0, 1, 0) == engine.transition_key(0, 1, 0, 0));
  EXPECT_FALSE(engine.lifecycle_key(0, 0, 0, 0) == engine.transition_key(0, 0, 0, 0));
}

TEST(Build, ThreadsFromEnvironment) {
  auto graph = two_parameter_model();
  ::setenv("GREYLAG_THREADS", "3", 1);
  Engine engine = two_kernel_engine(graph, 2, 1, 0);
  ::unsetenv("GREYLAG_THREADS");
  EXPECT_EQ(engine.threads(), 3);
}

// ---------------------------------------------------------------- lifecycle

TEST(Lifecycle, CallSequenceFollowsProtocol) {
  auto graph = two_parameter_model();
  auto log = std::make_shared<CallLog>();
  auto kernel = std::make_shared<MockKernel>(std::vector<NodeId>{"a", "b"}, log, true);
  Engine engine = EngineBuilder()
                      .set_model(graph)
                      .add_kernel(kernel)
                      .set_epochs({{EpochType::FastAdaptation, 2, 1},
                                   {EpochType::SlowAdaptation, 3, 1},
                                   {EpochType::Burnin, 1, 1},
                                   {EpochType::Posterior, 2, 1},
                                   {EpochType::Posterior, 1, 1}})
                      .set_threads(1)
                      .build();
  engine.sample_all_epochs();
  const CallLog expected = {
      "init",
      "start:fast_adaptation", "transition", "transition", "end", "tune:-",
      "start:slow_adaptation", "transition", "transition", "transition", "end", "tune:3",
      "start:burnin", "transition", "end",
      "end_warmup:posterior",
      "start:posterior", "transition", "transition", "end",
      "start:posterior", "transition", "end",
  };
  EXPECT_EQ(*log, expected);
}

TEST(Lifecycle, EndWarmupWithoutAdaptation) {
  auto graph = two_parameter_model();
  auto log = std::make_shared<CallLog>();
  Engine engine = EngineBuilder()
                      .set_model(graph)
                      .add_kernel(std::make_shared<MockKernel>(std::vector<NodeId>{"a", "b"}, log))
                      .set_epochs({{EpochType::Posterior, 1, 1}})
                      .build();
  engine.sample_all_epochs();
  EXPECT_EQ(*log, (CallLog{"init", "end_warmup:posterior", "start:posterior", "transition", "end"}));
}

TEST(Lifecycle, EpochByEpochThenExhausted) {
  auto graph = two_parameter_model();
  Engine engine = two_kernel_engine(graph, 2, 5, 1, 150, 20);
  const std::size_t k = engine.epochs().size();
  for (std::size_t i = 0; i < k; ++i) {
    EXPECT_EQ(engine.epochs_remaining(), k - i);
    engine.sample_next_epoch();
  }
  EXPECT_THROW(engine.sample_next_epoch(), ExhaustedError);
}

TEST(Lifecycle, AppendEpoch) {
  auto graph = two_parameter_model();
  Engine engine = two_kernel_engine(graph, 1, 5, 1, 150, 20);
  engine.sample_all_epochs();
  EXPECT_THROW(engine.append_epoch({EpochType::SlowAdaptation, 10, 1}), ScheduleError);
  EXPECT_NO_THROW(engine.append_epoch({EpochType::Posterior, 30, 1}));
  engine.sample_next_epoch();
  EXPECT_EQ(engine.get_results().num_draws(), 50);
}

TEST(Lifecycle, LaterKernelSeesEarlierUpdate) {
  auto graph = two_parameter_model();
  auto first = std::make_shared<GibbsKernel>(std::vector<NodeId>{"a"},
                                             [](const PrngKey& key, const ModelState&) {
                                               RandomStream rng(key);
                                               Position p;
                                               p.set("a", Value::scalar(rng.normal()));
                                               return p;
                                             });
  auto second = std::make_shared<GibbsKernel>(std::vector<NodeId>{"b"},
                                              [](const PrngKey&, const ModelState& s) {
                                                Position p;
                                                p.set("b", Value::scalar(-s.value("a").item()));
                                                return p;
                                              });
  Engine engine = EngineBuilder()
                      .set_model(graph)
                      .add_kernel(first)
                      .add_kernel(second)
                      .set_epochs({{EpochType::Posterior, 50, 1}})
                      .build();
  engine.sample_all_epochs();
  const auto r = engine.get_results();
  const Eigen::MatrixXd a = r.draws("a", 0), b = r.draws("b", 0);
  EXPECT_EQ(a, -b);
  EXPECT_GT(a.cwiseAbs().sum(), 0.0);
}

// ---------------------------------------------------------------- results

TEST(Results, ShapeContract) {
  std::vector<Node> nodes;
  nodes.push_back(Node::parameter("beta", Value::vector(std::vector<double>(20, 0.0)),
                                  DistributionSpec::normal(Value::scalar(0), Value::scalar(1))));
  nodes.push_back(
      Node::parameter("s", Value::scalar(1.0), DistributionSpec::normal(Value::scalar(1), Value::scalar(2))));
  nodes.push_back(
      Node::parameter("m", Value::scalar(0.0), DistributionSpec::normal(Value::scalar(0), Value::scalar(1))));
  ModelGraph graph(std::move(nodes));
  Engine engine = EngineBuilder()
                      .set_model(graph)
                      .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"beta", "m"}))
                      .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"s"}))
                      .set_epochs(stan_warmup_schedule(100, 1000))
                      .set_num_chains(4)
                      .build();
  engine.sample_all_epochs();
  const auto r = engine.get_results();
  ASSERT_EQ(r.posterior.size(), 4u);
  for (const auto& m : r.posterior) {
    EXPECT_EQ(m.rows(), 1000);
    EXPECT_EQ(m.cols(), 22);
  }
  EXPECT_EQ(r.columns.front(), "beta[0]");
  EXPECT_EQ(r.draws("beta", 2).cols(), 20);
  EXPECT_EQ(r.tracked_names, (std::vector<std::string>{"log_prob", "log_lik", "log_prior"}));
  EXPECT_EQ(r.tracked[0].rows(), 1000);
  EXPECT_TRUE(r.error_log.empty());
}

TEST(Results, ThinningAndTracking) {
  auto graph = two_parameter_model();
  DebugOptions debug;
  debug.batch_size = 7;
  debug.quantities.push_back({"a_plus_b", [](const ModelState& s) { return s.value("c").item(); }});
  Engine engine = EngineBuilder()
                      .set_model(graph)
                      .add_kernel(std::make_shared<RandomWalkKernel>(std::vector<NodeId>{"a", "b"}))
                      .set_epochs({{EpochType::Posterior, 100, 3}, {EpochType::Posterior, 10, 1}})
                      .set_debug(debug)
                      .build();
  engine.sample_all_epochs();
  const auto r = engine.get_results();
  EXPECT_EQ(r.num_draws(), 33 + 10);
  const Eigen::Index q = 3;
  for (Eigen::Index i = 0; i < r.num_draws(); ++i) {
    EXPECT_DOUBLE_EQ(r.tracked[0](i, q), r.posterior[0](i, 0) + r.posterior[0](i, 1));
  }
}

TEST(Results, ErrorsAreLoggedNotRaised) {
  auto graph = two_parameter_model();
  auto log = std::make_shared<CallLog>();
  auto kernel = std::make_shared<MockKernel>(std::vector<NodeId>{"a", "b"}, log);
  kernel->code = [](std::size_t, long it) { return it == 7 ? error_code::kDivergence : 0; };
  kernel->fail = [](std::size_t, long it) { return it == 11; };
  DebugOptions debug;
  debug.store_transition_infos = true;
  Engine engine = EngineBuilder()
                      .set_model(graph)
                      .add_kernel(kernel)
                      .set_epochs({{EpochType::Posterior, 20, 1}})
                      .set_num_chains(2)
                      .set_debug(debug)
                      .build();
  ASSERT_NO_THROW(engine.sample_all_epochs());
  const auto r = engine.get_results();
  ASSERT_EQ(r.error_log.size(), 4u);
  for (int chain = 0; chain < 2; ++chain) {
    const auto& div = r.error_log[2 * chain];
    EXPECT_EQ(div.code, error_code::kDivergence);
    EXPECT_EQ(div.chain, chain);
    EXPECT_EQ(div.iteration, 7);
    EXPECT_EQ(div.kernel, 0u);
    EXPECT_EQ(div.kernel_name, "mock");
    const auto& ex = r.error_log[2 * chain + 1];
    EXPECT_EQ(ex.code, error_code::kKernelException);
    EXPECT_EQ(ex.iteration, 11);
    EXPECT_NE(ex.message.find("mock failure"), std::string::npos);
  }
  const auto summary = r.error_summary();
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[0].code, error_code::kDivergence);
  EXPECT_EQ(summary[0].count, 2);
  EXPECT_EQ(r.num_draws(), 20);
  EXPECT_EQ(r.transition_infos[0].size(), 20u);
  EXPECT_EQ(r.transition_infos[0][11].info.error_code, error_code::kKernelException);
}

// ---------------------------------------------------------------- reproducibility

TEST(Reproducibility, SameSeedSameResults) {
  auto graph = two_parameter_model();
  Engine a = two_kernel_engine(graph, 3, 2024, 1);
  Engine b = two_kernel_engine(graph, 3, 2024, 1);
  a.sample_all_epochs();
  b.sample_all_epochs();
  const auto ra = a.get_results(), rb = b.get_results();
  for (int c = 0; c < 3; ++c) EXPECT_EQ(ra.posterior[c], rb.posterior[c]);
  Engine other = two_kernel_engine(graph, 3, 2025, 1);
  other.sample_all_epochs();
  EXPECT_NE(other.get_results().posterior[0], ra.posterior[0]);
}

TEST(Reproducibility, StepwiseEqualsOneShot) {
  auto graph = two_parameter_model();
  Engine a = two_kernel_engine(graph, 2, 8, 1);
  Engine b = two_kernel_engine(graph, 2, 8, 1);
  a.sample_all_epochs();
  while (b.epochs_remaining() > 0) b.sample_next_epoch();
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(a.get_results().posterior[c], b.get_results().posterior[c]);
    EXPECT_EQ(a.kernel_state(c, 0), b.kernel_state(c, 0));
  }
}

TEST(Reproducibility, SerialEqualsParallel) {
  auto graph = two_parameter_model();
  Engine serial = two_kernel_engine(graph, 4, 31, 1);
  Engine parallel = two_kernel_engine(graph, 4, 31, 4);
  serial.sample_all_epochs();
  parallel.sample_all_epochs();
  const auto rs = serial.get_results(), rp = parallel.get_results();
  for (int c = 0; c < 4; ++c) {
    EXPECT_EQ(rs.posterior[c], rp.posterior[c]);
    EXPECT_EQ(rs.tracked[c], rp.tracked[c]);
  }
}

TEST(Reproducibility, ChainIndependentOfChainCount) {
  auto graph = two_parameter_model();
  Engine one = two_kernel_engine(graph, 1, 77, 1);
  Engine three = two_kernel_engine(graph, 3, 77, 2);
  one.sample_all_epochs();
  three.sample_all_epochs();
  EXPECT_EQ(one.get_results().posterior[0], three.get_results().posterior[0]);
}

// ---------------------------------------------------------------- adaptation

TEST(Adaptation, TuneOnlyInAdaptationAndFrozenAfterWarmup) {
  auto graph = normal_target({1.0, 5.0});
  DebugOptions debug;
  debug.store_kernel_states = true;
  Engine engine = EngineBuilder()
                      .set_model(graph)
                      .add_kernel(std::make_shared<NUTSKernel>(std::vector<NodeId>{"x"}))
                      .set_epochs({{EpochType::FastAdaptation, 50, 1},
                                   {EpochType::SlowAdaptation, 100, 1},
                                   {EpochType::FastAdaptation, 50, 1},
                                   {EpochType::Burnin, 20, 1},
                                   {EpochType::Posterior, 50, 1},
                                   {EpochType::Posterior, 50, 1}})
                      .set_debug(debug)
                      .build();
  engine.sample_all_epochs();
  const auto r = engine.get_results();
  ASSERT_EQ(r.tuning_infos[0].size(), 3u);
  for (const auto& t : r.tuning_infos[0]) EXPECT_LT(t.epoch, 3u);
  const auto& states = r.kernel_states[0];
  ASSERT_EQ(states.size(), 6u);
  EXPECT_EQ(states[1].state.mass_updates, 1);
  EXPECT_NE(states[1].state.inv_mass_diag, Eigen::VectorXd::Ones(2));
  EXPECT_EQ(states[3].state.step_size, states[2].state.step_size);
  EXPECT_TRUE(states[4].state.warmup_done);
  EXPECT_EQ(states[4].state, states[5].state);
}
