#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "greylag/engine.hpp"
#include "greylag/regression.hpp"
#include "greylag/schemes.hpp"

namespace greylag::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSampling = 3;

/// Numeric CSV with a header row.
struct DataTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
  /// Throws DataError for unknown columns.
  Eigen::VectorXd column(const std::string& name) const;
};

/// Throws DataError on unreadable files, ragged rows or non-numeric cells.
DataTable read_csv(const std::filesystem::path& path);
DataTable parse_csv(const std::string& text);

struct ExperimentConfig {
  std::uint64_t seed = 1337;
  int num_chains = 4;
  long warmup = 1000;
  long posterior = 1000;
  int threads = 0;
  /// Half-width of the uniform jitter on regression coefficients.
  double jitter = 0.1;
  nlohmann::json model;
  nlohmann::json scheme;
  nlohmann::json simulation;
  /// Data CSV and output directory, relative to the config file.
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> output;
};

/// Throws ConfigError on malformed JSON, wrong types or unknown keys.
ExperimentConfig parse_config(const nlohmann::json& json,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// x,y data from the config's simulation block. Throws ConfigError.
SimulatedData simulate(const nlohmann::json& simulation);
/// "x,y" CSV, 17 significant digits.
std::string xy_csv(const SimulatedData& data);

struct BuiltModel {
  ModelGraph graph;
  /// Set for distributional regression specs.
  std::optional<DistRegModel> distreg;
  std::vector<std::string> predictors;
};

/// Distributional regression spec ("response", "family", "predictors") or
/// direct graph spec ("nodes"). `data` may be null when no column is read.
BuiltModel build_model(const nlohmann::json& model, const DataTable* data);

/// Named scheme (a string or {"name": ...}) or an explicit kernel list
/// {"transform": {node: bijector}, "kernels": [{"kind", "position", "options"}]}.
SchemeSetup build_kernels(const nlohmann::json& scheme, BuiltModel& model);

/// One row per posterior draw: iteration, then one column per scalar.
std::string chain_csv(const SamplingResults& results, int chain);

struct RunRequest {
  std::filesystem::path config;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::optional<int> chains;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
  std::optional<int> threads;
};

/// Writes chain_<c>.csv, summary.csv, summary.txt, errors.txt, model.dot
/// and manifest.json. Returns an exit code; messages go to `err`.
int run(const RunRequest& request, std::ostream& log, std::ostream& err);
int simulate_command(const std::filesystem::path& config, const std::filesystem::path& out,
                     std::ostream& err);
int graph_command(const std::filesystem::path& config, const std::filesystem::path& out,
                  std::ostream& err);

}  // namespace greylag::cli
