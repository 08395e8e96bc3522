#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "greylag/errors.hpp"

using namespace greylag;
using namespace greylag::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("greylag_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

json location_scale(int n, const std::string& scheme) {
  return {{"seed", 11},
          {"num_chains", 2},
          {"warmup", 60},
          {"posterior", 40},
          {"simulation",
           {{"n", n}, {"lo", 390}, {"hi", 720}, {"mean", "lidar"}, {"log_sd", "lidar"}, {"seed", 42}}},
          {"model",
           {{"response", "y"},
            {"family", "Normal"},
            {"predictors",
             {{"loc", {{"link", "identity"}, {"covariate", "x"}, {"n_basis", 8}}},
              {"scale", {{"link", "exp"}, {"covariate", "x"}, {"n_basis", 8}}}}}}},
          {"scheme", scheme}};
}

BuiltModel simulated_model(const json& config) {
  const SimulatedData sim = simulate(config.at("simulation"));
  DataTable t;
  t.names = {"x", "y"};
  t.columns = {std::vector<double>(sim.x.data(), sim.x.data() + sim.x.size()),
               std::vector<double>(sim.y.data(), sim.y.data() + sim.y.size())};
  return build_model(config.at("model"), &t);
}

}  // namespace

// ---------------------------------------------------------------- csv

TEST(Csv, ParsesHeaderAndNumbers) {
  const DataTable t = parse_csv("x, y\n1,2.5\n\n-3e2,+4\n");
  ASSERT_EQ(t.names, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.column("x")[1], -300.0);
  EXPECT_EQ(t.column("y")[1], 4.0);
  EXPECT_THROW(t.column("z"), DataError);
}

TEST(Csv, RejectsMalformedInput) {
  EXPECT_THROW(parse_csv(""), DataError);
  EXPECT_THROW(parse_csv("x,y\n1\n"), DataError);
  EXPECT_THROW(parse_csv("x\nabc\n"), DataError);
  EXPECT_THROW(parse_csv("x\nnan\n"), DataError);
  EXPECT_THROW(parse_csv("x,x\n1,2\n"), DataError);
  EXPECT_THROW(read_csv("/nonexistent/greylag.csv"), DataError);
}

// ---------------------------------------------------------------- config

TEST(Config, DefaultsAndValidation) {
  const ExperimentConfig c = parse_config(json::object());
  EXPECT_EQ(c.num_chains, 4);
  EXPECT_EQ(c.warmup, 1000);
  EXPECT_EQ(c.posterior, 1000);
  EXPECT_THROW(parse_config({{"num_chains", 0}}), ConfigError);
  EXPECT_THROW(parse_config({{"seed", "abc"}}), ConfigError);
  EXPECT_THROW(parse_config({{"sede", 1}}), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/greylag.json"), ConfigError);
}

// ---------------------------------------------------------------- simulate

TEST(Simulate, RowCountAndDeterminism) {
  const json config = location_scale(221, "nuts2");
  const std::string a = xy_csv(simulate(config.at("simulation")));
  const std::string b = xy_csv(simulate(config.at("simulation")));
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 222);
  EXPECT_EQ(a.substr(0, 4), "x,y\n");
}

TEST(Simulate, CommandWritesIdenticalBytes) {
  const fs::path dir = scratch("simulate");
  spit(dir / "c.json", location_scale(221, "nuts2").dump());
  std::ostringstream err;
  ASSERT_EQ(simulate_command(dir / "c.json", dir / "a.csv", err), kExitOk) << err.str();
  ASSERT_EQ(simulate_command(dir / "c.json", dir / "b.csv", err), kExitOk) << err.str();
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(read_csv(dir / "a.csv").rows(), 221u);
}

TEST(Simulate, ZeroRowsIsConfigError) {
  json config = location_scale(0, "nuts2");
  EXPECT_THROW(simulate(config.at("simulation")), ConfigError);
  const fs::path dir = scratch("simulate_zero");
  spit(dir / "c.json", config.dump());
  std::ostringstream err;
  EXPECT_EQ(simulate_command(dir / "c.json", dir / "a.csv", err), kExitConfig);
  EXPECT_NE(err.str().find("n must be at least 2"), std::string::npos);
}

// ---------------------------------------------------------------- schemes

TEST(Schemes, NamedSchemesMatchKernelMatrix) {
  struct Expected {
    std::string scheme;
    std::vector<std::pair<std::string, std::vector<std::string>>> blocks;
  };
  const std::vector<Expected> cases{
      {"iwls-gibbs",
       {{"iwls", {"loc_p0_beta"}},
        {"iwls", {"loc_np0_beta"}},
        {"gibbs", {"loc_np0_tau2"}},
        {"iwls", {"scale_p0_beta"}},
        {"iwls", {"scale_np0_beta"}},
        {"gibbs", {"scale_np0_tau2"}}}},
      {"nuts-gibbs",
       {{"nuts", {"loc_p0_beta"}},
        {"nuts", {"loc_np0_beta"}},
        {"gibbs", {"loc_np0_tau2"}},
        {"nuts", {"scale_p0_beta"}},
        {"nuts", {"scale_np0_beta"}},
        {"gibbs", {"scale_np0_tau2"}}}},
      {"nuts1",
       {{"nuts",
         {"loc_p0_beta", "loc_np0_beta", "loc_np0_tau2_transformed", "scale_p0_beta",
          "scale_np0_beta", "scale_np0_tau2_transformed"}}}},
      {"nuts2",
       {{"nuts", {"loc_p0_beta", "loc_np0_beta", "loc_np0_tau2_transformed"}},
        {"nuts", {"scale_p0_beta", "scale_np0_beta", "scale_np0_tau2_transformed"}}}},
      {"hmc2",
       {{"hmc", {"loc_p0_beta", "loc_np0_beta", "loc_np0_tau2_transformed"}},
        {"hmc", {"scale_p0_beta", "scale_np0_beta", "scale_np0_tau2_transformed"}}}},
  };
  for (const auto& c : cases) {
    SCOPED_TRACE(c.scheme);
    const json config = location_scale(60, c.scheme);
    BuiltModel model = simulated_model(config);
    const SchemeSetup setup = build_kernels(config.at("scheme"), model);
    ASSERT_EQ(setup.assignments.size(), c.blocks.size());
    ASSERT_EQ(setup.kernels.size(), c.blocks.size());
    for (std::size_t i = 0; i < c.blocks.size(); ++i) {
      EXPECT_EQ(setup.assignments[i].kind, c.blocks[i].first);
      EXPECT_EQ(setup.assignments[i].position, c.blocks[i].second);
      EXPECT_EQ(setup.kernels[i]->position_ids(), c.blocks[i].second);
    }
    // Variances are log-transformed exactly when a gradient kernel moves them.
    const bool gibbs = c.scheme.find("gibbs") != std::string::npos;
    for (const std::string p : {"loc", "scale"}) {
      EXPECT_EQ(model.graph.contains(p + "_np0_tau2_transformed"), !gibbs);
      EXPECT_EQ(model.graph.kind(p + "_np0_tau2"), gibbs ? NodeKind::Strong : NodeKind::Weak);
    }
  }
}

TEST(Schemes, UnknownNameListsValidSchemes) {
  const json config = location_scale(60, "nuts3");
  BuiltModel model = simulated_model(config);
  try {
    build_kernels(config.at("scheme"), model);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    for (const char* name : {"iwls-gibbs", "nuts-gibbs", "nuts1", "nuts2", "hmc2"}) {
      EXPECT_NE(what.find(name), std::string::npos) << what;
    }
  }
}

TEST(Schemes, ExplicitKernelList) {
  json config = location_scale(60, "nuts2");
  config["scheme"] = {{"transform", {{"scale_np0_tau2", "Exp"}}},
                      {"kernels",
                       {{{"kind", "iwls"}, {"position", {"loc_p0_beta", "loc_np0_beta"}}},
                        {{"kind", "gibbs"}, {"position", {"loc_np0_tau2"}}},
                        {{"kind", "hmc"},
                         {"position", {"scale_p0_beta", "scale_np0_beta", "scale_np0_tau2_transformed"}},
                         {"options", {{"n_steps", 16}}}}}}};
  BuiltModel model = simulated_model(config);
  const SchemeSetup setup = build_kernels(config.at("scheme"), model);
  ASSERT_EQ(setup.kernels.size(), 3u);
  EXPECT_EQ(setup.kernels[2]->name(), "hmc");

  config["scheme"]["kernels"][2]["options"] = {{"n_step", 16}};
  BuiltModel again = simulated_model(config);
  EXPECT_THROW(build_kernels(config.at("scheme"), again), ConfigError);
  config["scheme"]["kernels"][2] = {{"kind", "mala"}, {"position", {"scale_p0_beta"}}};
  BuiltModel third = simulated_model(config);
  EXPECT_THROW(build_kernels(config.at("scheme"), third), ConfigError);
}

// ---------------------------------------------------------------- run

TEST(Run, WritesAllOutputs) {
  const fs::path dir = scratch("run_outputs");
  spit(dir / "c.json", location_scale(80, "nuts2").dump());
  std::ostringstream log, err;
  RunRequest r;
  r.config = dir / "c.json";
  r.out = dir / "out";
  ASSERT_EQ(run(r, log, err), kExitOk) << err.str();
  for (const char* f : {"chain_0.csv", "chain_1.csv", "summary.csv", "summary.txt", "errors.txt",
                        "model.dot", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest.at("seed").get<std::uint64_t>(), 11u);
  EXPECT_GE(manifest.at("timings").at("setup_seconds").get<double>(), 0.0);
  EXPECT_GT(manifest.at("timings").at("posterior_seconds").get<double>(), 0.0);
  EXPECT_EQ(manifest.at("parameters").get<int>(), 2 * 7 + 4);

  const DataTable chain = read_csv(dir / "out" / "chain_0.csv");
  EXPECT_EQ(chain.rows(), 40u);
  EXPECT_EQ(chain.names.front(), "iteration");
  EXPECT_EQ(chain.names[1], "loc_p0_beta");
  EXPECT_NE(slurp(dir / "out" / "model.dot").find("digraph"), std::string::npos);
}

TEST(Run, SameSeedGivesIdenticalChainFiles) {
  const fs::path dir = scratch("run_repro");
  spit(dir / "c.json", location_scale(80, "nuts-gibbs").dump());
  std::ostringstream log, err;
  RunRequest r;
  r.config = dir / "c.json";
  r.threads = 1;
  r.out = dir / "a";
  ASSERT_EQ(run(r, log, err), kExitOk) << err.str();
  r.out = dir / "b";
  ASSERT_EQ(run(r, log, err), kExitOk) << err.str();
  r.out = dir / "c";
  r.threads = 4;
  ASSERT_EQ(run(r, log, err), kExitOk) << err.str();
  for (const char* f : {"chain_0.csv", "chain_1.csv"}) {
    const std::string a = slurp(dir / "a" / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(dir / "b" / f)) << f;
    EXPECT_EQ(a, slurp(dir / "c" / f)) << f;
  }
  r.seed = 12;
  r.out = dir / "d";
  ASSERT_EQ(run(r, log, err), kExitOk) << err.str();
  EXPECT_NE(slurp(dir / "a" / "chain_0.csv"), slurp(dir / "d" / "chain_0.csv"));
}

TEST(Run, FlagsOverrideConfig) {
  const fs::path dir = scratch("run_flags");
  spit(dir / "c.json", location_scale(60, "nuts2").dump());
  std::ostringstream log, err;
  RunRequest r;
  r.config = dir / "c.json";
  r.out = dir / "out";
  r.chains = 3;
  r.scheme = "iwls-gibbs";
  ASSERT_EQ(run(r, log, err), kExitOk) << err.str();
  const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest.at("num_chains").get<int>(), 3);
  EXPECT_EQ(manifest.at("scheme").get<std::string>(), "iwls-gibbs");
  EXPECT_TRUE(fs::exists(dir / "out" / "chain_2.csv"));
}

TEST(Run, ExitCodes) {
  const fs::path dir = scratch("run_exit");
  std::ostringstream log, err;
  RunRequest r;
  r.out = dir / "out";

  spit(dir / "bad_scheme.json", location_scale(60, "gibbs-everything").dump());
  r.config = dir / "bad_scheme.json";
  EXPECT_EQ(run(r, log, err), kExitConfig);
  EXPECT_NE(err.str().find("valid schemes: iwls-gibbs, nuts-gibbs, nuts1, nuts2, hmc2"),
            std::string::npos);

  spit(dir / "bad.json", "{ not json");
  r.config = dir / "bad.json";
  EXPECT_EQ(run(r, log, err), kExitConfig);

  json missing = location_scale(60, "nuts2");
  missing["model"]["predictors"]["loc"]["covariate"] = "z";
  spit(dir / "missing.json", missing.dump());
  r.config = dir / "missing.json";
  EXPECT_EQ(run(r, log, err), kExitConfig);

  // A kernel list that leaves parameters unsampled breaks coverage.
  json partial = location_scale(60, "nuts2");
  partial["scheme"] = {{"kernels", {{{"kind", "nuts"}, {"position", {"loc_p0_beta"}}}}}};
  spit(dir / "partial.json", partial.dump());
  r.config = dir / "partial.json";
  EXPECT_EQ(run(r, log, err), kExitConfig);

  // A parameter whose initial value lies outside its support cannot start.
  json graph = {{"num_chains", 1},
                {"warmup", 100},
                {"posterior", 10},
                {"model",
                 {{"nodes",
                   {{{"id", "s"},
                     {"kind", "parameter"},
                     {"value", -1.0},
                     {"distribution", {{"family", "Gamma"}, {"params", {{"concentration", 2.0}, {"rate", 1.0}}}}}}}}}},
                {"scheme", {{"kernels", {{{"kind", "rw"}, {"position", {"s"}}}}}}}};
  spit(dir / "init.json", graph.dump());
  r.config = dir / "init.json";
  EXPECT_EQ(run(r, log, err), kExitSampling) << err.str();
}

TEST(Run, DirectGraphSpec) {
  const fs::path dir = scratch("run_graph");
  std::string data = "y\n";
  for (int i = 0; i < 30; ++i) data += std::to_string(1.0 + 0.1 * (i % 7 - 3)) + "\n";
  spit(dir / "d.csv", data);
  const json config = {
      {"seed", 3},
      {"num_chains", 2},
      {"warmup", 200},
      {"posterior", 400},
      {"data", "d.csv"},
      {"model",
       {{"nodes",
         {{{"id", "mu"},
           {"kind", "parameter"},
           {"value", 0.0},
           {"distribution", {{"family", "Normal"}, {"params", {{"loc", 0.0}, {"scale", 100.0}}}}}},
          {{"id", "y"},
           {"kind", "observed"},
           {"column", "y"},
           {"distribution", {{"family", "Normal"}, {"params", {{"loc", "mu"}, {"scale", 0.5}}}}}}}}}},
      {"scheme", {{"kernels", {{{"kind", "nuts"}, {"position", {"mu"}}}}}}}};
  spit(dir / "c.json", config.dump());
  std::ostringstream log, err;
  RunRequest r;
  r.config = dir / "c.json";
  r.out = dir / "out";
  ASSERT_EQ(run(r, log, err), kExitOk) << err.str();
  const Eigen::VectorXd mu = read_csv(dir / "out" / "chain_0.csv").column("mu");
  // Posterior N(ybar, 0.25 / 30), nearly flat prior.
  const Eigen::VectorXd y = parse_csv(data).column("y");
  EXPECT_NEAR(mu.mean(), y.mean(), 5 * 0.5 / std::sqrt(30.0) / std::sqrt(100.0));
  EXPECT_EQ(graph_command(dir / "c.json", dir / "g.dot", err), kExitOk) << err.str();
  EXPECT_NE(slurp(dir / "g.dot").find("mu"), std::string::npos);
}
