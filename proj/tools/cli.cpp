#include "cli.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "greylag/diagnostics.hpp"
#include "greylag/errors.hpp"
#include "greylag/kernels.hpp"

namespace greylag::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- csv

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string read_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    const std::string msg = "cannot read " + std::string(what) + " '" + path.string() + "'";
    if (std::string_view(what) == "config") throw ConfigError(msg);
    throw DataError(msg);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

Eigen::VectorXd DataTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) {
      return Eigen::Map<const Eigen::VectorXd>(columns[j].data(), Eigen::Index(columns[j].size()));
    }
  }
  throw DataError("the data has no column '" + name + "'");
}

DataTable parse_csv(const std::string& text) {
  DataTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_row(line);
    if (table.names.empty()) {
      std::set<std::string> seen;
      for (const auto& c : cells) {
        if (c.empty()) throw DataError("empty column name in the header");
        if (!seen.insert(c).second) throw DataError("duplicate column '" + c + "'");
      }
      table.names = std::move(cells);
      table.columns.resize(table.names.size());
      continue;
    }
    if (cells.size() != table.names.size()) {
      throw DataError("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, the header has " + std::to_string(table.names.size()));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      double v = 0.0;
      const char* first = cells[j].data();
      const char* last = first + cells[j].size();
      if (!cells[j].empty() && *first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, last, v);
      if (cells[j].empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw DataError("line " + std::to_string(line_no) + ", column '" + table.names[j] +
                        "': '" + cells[j] + "' is not a finite number");
      }
      table.columns[j].push_back(v);
    }
  }
  if (table.names.empty()) throw DataError("the data file is empty");
  return table;
}

DataTable read_csv(const fs::path& path) { return parse_csv(read_file(path, "data")); }

// ---------------------------------------------------------------- config

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback, const char* where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + ": '" + key + "' has the wrong type");
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
  check_keys(j, {"seed", "num_chains", "warmup", "posterior", "threads", "jitter", "model", "scheme",
                 "simulation", "data", "output"},
             "config");
  ExperimentConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "config");
  c.num_chains = get_or<int>(j, "num_chains", c.num_chains, "config");
  c.warmup = get_or<long>(j, "warmup", c.warmup, "config");
  c.posterior = get_or<long>(j, "posterior", c.posterior, "config");
  c.threads = get_or<int>(j, "threads", c.threads, "config");
  c.jitter = get_or<double>(j, "jitter", c.jitter, "config");
  if (c.num_chains < 1) throw ConfigError("num_chains must be at least 1");
  if (c.warmup < 0) throw ConfigError("warmup must be non-negative");
  if (c.posterior < 1) throw ConfigError("posterior must be at least 1");
  if (c.threads < 0) throw ConfigError("threads must be non-negative");
  if (!(c.jitter >= 0.0)) throw ConfigError("jitter must be non-negative");
  if (j.contains("model")) c.model = j.at("model");
  if (j.contains("scheme")) c.scheme = j.at("scheme");
  if (j.contains("simulation")) c.simulation = j.at("simulation");
  if (j.contains("data")) c.data = base_dir / get_or<std::string>(j, "data", "", "config");
  if (j.contains("output")) c.output = base_dir / get_or<std::string>(j, "output", "", "config");
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  const std::string text = read_file(path, "config");
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
  }
  return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------- simulation

namespace {

std::function<double(double)> curve(const json& spec, const char* key,
                                    std::function<double(double)> named) {
  if (!spec.contains(key)) throw ConfigError(std::string("simulation: '") + key + "' is required");
  const json& v = spec.at(key);
  if (v.is_number()) {
    const double c = v.get<double>();
    return [c](double) { return c; };
  }
  if (v.is_string() && v.get<std::string>() == "lidar") return named;
  throw ConfigError(std::string("simulation: '") + key + "' must be a number or \"lidar\"");
}

}  // namespace

SimulatedData simulate(const json& s) {
  if (s.is_null()) throw ConfigError("the config has no simulation block");
  check_keys(s, {"n", "lo", "hi", "mean", "log_sd", "seed"}, "simulation");
  if (!s.contains("n")) throw ConfigError("simulation: 'n' is required");
  const long n = get_or<long>(s, "n", 0, "simulation");
  if (n < 2) throw ConfigError("simulation: n must be at least 2, got " + std::to_string(n));
  return simulate_location_scale(std::size_t(n), get_or<double>(s, "lo", 390.0, "simulation"),
                                 get_or<double>(s, "hi", 720.0, "simulation"),
                                 curve(s, "mean", lidar_like_mean),
                                 curve(s, "log_sd", lidar_like_log_sd),
                                 get_or<std::uint64_t>(s, "seed", 42, "simulation"));
}

std::string xy_csv(const SimulatedData& data) {
  std::string out = "x,y\n";
  for (Eigen::Index i = 0; i < data.x.size(); ++i) {
    out += format_double(data.x[i]) + "," + format_double(data.y[i]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- models

namespace {

Value json_value(const json& v, const std::string& where) {
  if (v.is_number()) return Value::scalar(v.get<double>());
  if (v.is_array() && !v.empty() && v.front().is_array()) {
    const std::size_t rows = v.size(), cols = v.front().size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
      if (!v[r].is_array() || v[r].size() != cols) throw ConfigError(where + ": ragged matrix");
      for (std::size_t c = 0; c < cols; ++c) {
        if (!v[r][c].is_number()) throw ConfigError(where + ": matrix entries must be numbers");
        m(Eigen::Index(r), Eigen::Index(c)) = v[r][c].get<double>();
      }
    }
    return Value::matrix(m);
  }
  if (v.is_array()) {
    std::vector<double> xs;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(where + ": vector entries must be numbers");
      xs.push_back(e.get<double>());
    }
    return Value::vector(std::move(xs));
  }
  throw ConfigError(where + ": expected a number, vector or matrix");
}

Family family_of(const json& j, const std::string& where) {
  try {
    return family_from_name(get_or<std::string>(j, "family", "", where.c_str()));
  } catch (const DomainError& e) {
    throw ConfigError(where + ": " + e.what() +
                      " (valid: Normal, InverseGamma, Gamma, MultivariateNormalDegenerate, "
                      "Uniform, Bernoulli, Categorical)");
  }
}

DistributionSpec distribution_of(const json& j, const std::string& where) {
  check_keys(j, {"family", "params"}, where);
  DistributionSpec spec;
  spec.family = family_of(j, where);
  const json params = j.value("params", json::object());
  if (!params.is_object()) throw ConfigError(where + ": params must be an object");
  for (const auto& name : param_names(spec.family)) {
    if (!params.contains(name)) {
      throw ConfigError(where + ": parameter '" + name + "' of " +
                        std::string(family_name(spec.family)) + " is missing");
    }
    const json& p = params.at(name);
    if (p.is_string()) {
      spec.params.emplace_back(name, ParamSource(p.get<std::string>()));
    } else {
      spec.params.emplace_back(name, ParamSource(json_value(p, where + "." + name)));
    }
  }
  for (const auto& [key, _] : params.items()) {
    const auto& names = param_names(spec.family);
    if (std::find(names.begin(), names.end(), key) == names.end()) {
      throw ConfigError(where + ": " + std::string(family_name(spec.family)) +
                        " has no parameter '" + key + "'");
    }
  }
  return spec;
}

WeakFnPtr weak_fn_of(const json& node, const std::string& where) {
  const auto fn = get_or<std::string>(node, "fn", "", where.c_str());
  if (fn == "matvec") return weak::matvec();
  if (fn == "add") return weak::add();
  if (fn == "identity") return weak::identity();
  if (fn == "exp") return weak::exp();
  if (fn == "log") return weak::log();
  if (fn == "logistic") return weak::logistic();
  if (fn == "sum") return weak::sum();
  if (fn == "dot") return weak::dot();
  if (fn == "quad_form") return weak::quad_form();
  if (fn == "affine") {
    return weak::affine(get_or<std::vector<double>>(node, "coefficients", {}, where.c_str()),
                        get_or<double>(node, "constant", 0.0, where.c_str()));
  }
  throw ConfigError(where + ": unknown weak function '" + fn +
                    "' (valid: matvec, add, identity, exp, log, logistic, sum, dot, quad_form, "
                    "affine)");
}

Value node_value(const json& node, const DataTable* data, const std::string& where) {
  if (node.contains("column")) {
    if (!data) throw ConfigError(where + ": reads a data column but no data was given");
    return Value::vector(data->column(get_or<std::string>(node, "column", "", where.c_str())));
  }
  if (node.contains("columns")) {
    if (!data) throw ConfigError(where + ": reads data columns but no data was given");
    const auto cols = get_or<std::vector<std::string>>(node, "columns", {}, where.c_str());
    Eigen::MatrixXd m(Eigen::Index(data->rows()), Eigen::Index(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) m.col(Eigen::Index(c)) = data->column(cols[c]);
    return Value::matrix(m);
  }
  if (node.contains("value")) return json_value(node.at("value"), where);
  throw ConfigError(where + ": needs 'value', 'column' or 'columns'");
}

BuiltModel direct_graph(const json& model, const DataTable* data) {
  check_keys(model, {"nodes"}, "model");
  const json& list = model.at("nodes");
  if (!list.is_array() || list.empty()) throw ConfigError("model: 'nodes' must be a non-empty array");
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& n = list[i];
    const std::string where = "model.nodes[" + std::to_string(i) + "]";
    check_keys(n, {"id", "kind", "value", "column", "columns", "distribution", "fn", "inputs",
                   "coefficients", "constant"},
               where);
    const auto id = get_or<std::string>(n, "id", "", where.c_str());
    if (id.empty()) throw ConfigError(where + ": 'id' is required");
    const auto kind = get_or<std::string>(n, "kind", "hyperparameter", where.c_str());
    std::optional<DistributionSpec> dist;
    if (n.contains("distribution")) dist = distribution_of(n.at("distribution"), where + ".distribution");
    if (kind == "weak") {
      Node w = Node::weak(id, weak_fn_of(n, where),
                          get_or<std::vector<std::string>>(n, "inputs", {}, where.c_str()));
      if (dist) w = std::move(w).with_distribution(*dist);
      nodes.push_back(std::move(w));
    } else if (kind == "parameter") {
      if (!dist) throw ConfigError(where + ": a parameter needs a distribution");
      nodes.push_back(Node::parameter(id, node_value(n, data, where), *dist));
    } else if (kind == "observed") {
      nodes.push_back(Node::observed(id, node_value(n, data, where), dist));
    } else if (kind == "hyperparameter") {
      Node h = Node::strong(id, node_value(n, data, where));
      if (dist) h = std::move(h).with_distribution(*dist);
      nodes.push_back(std::move(h));
    } else {
      throw ConfigError(where + ": unknown kind '" + kind +
                        "' (valid: parameter, observed, hyperparameter, weak)");
    }
  }
  return BuiltModel{ModelGraph(std::move(nodes)), std::nullopt, {}};
}

Eigen::MatrixXd matrix_csv(const fs::path& path) {
  const DataTable t = read_csv(path);
  Eigen::MatrixXd m(Eigen::Index(t.rows()), Eigen::Index(t.names.size()));
  for (std::size_t c = 0; c < t.names.size(); ++c) m.col(Eigen::Index(c)) = t.column(t.names[c]);
  return m;
}

Constraint constraint_of(const json& term, Constraint fallback, const std::string& where) {
  if (!term.contains("constraint")) return fallback;
  const auto c = get_or<std::string>(term, "constraint", "", where.c_str());
  if (c == "sum-to-zero") return Constraint::SumToZero;
  if (c == "none") return Constraint::None;
  throw ConfigError(where + ": unknown constraint '" + c + "' (valid: sum-to-zero, none)");
}

SmoothTerm term_of(const json& t, const DataTable& data, const std::string& where) {
  check_keys(t, {"covariate", "n_basis", "degree", "order", "constraint", "a", "b", "basis_csv",
                 "penalty_csv"},
             where);
  SmoothTerm term;
  if (t.contains("basis_csv")) {
    if (!t.contains("penalty_csv")) throw ConfigError(where + ": basis_csv needs penalty_csv");
    term = custom_term(matrix_csv(get_or<std::string>(t, "basis_csv", "", where.c_str())),
                       matrix_csv(get_or<std::string>(t, "penalty_csv", "", where.c_str())),
                       constraint_of(t, Constraint::None, where));
  } else {
    if (!t.contains("covariate")) throw ConfigError(where + ": 'covariate' is required");
    const Eigen::VectorXd x = data.column(get_or<std::string>(t, "covariate", "", where.c_str()));
    try {
      term = pspline_term(x, get_or<int>(t, "n_basis", 20, where.c_str()),
                          get_or<int>(t, "degree", 3, where.c_str()),
                          get_or<int>(t, "order", 2, where.c_str()),
                          constraint_of(t, Constraint::SumToZero, where));
    } catch (const DomainError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  term.a = get_or<double>(t, "a", term.a, where.c_str());
  term.b = get_or<double>(t, "b", term.b, where.c_str());
  if (!(term.a > 0.0) || !(term.b > 0.0)) throw ConfigError(where + ": a and b must be positive");
  return term;
}

/// Starting intercept: the sample mean for an identity-linked location, the
/// log sample sd for an exp-linked scale, the sample logit for probabilities.
double default_intercept(const std::string& name, InverseLink link, const Eigen::VectorXd& y) {
  const double m = y.mean();
  if (link == InverseLink::Identity && name == "loc") return m;
  if (link == InverseLink::Exp && name == "scale" && y.size() > 1) {
    const double sd = std::sqrt((y.array() - m).square().sum() / double(y.size() - 1));
    return sd > 0.0 ? std::log(sd) : 0.0;
  }
  if (link == InverseLink::Logistic) {
    const double p = std::clamp(m, 0.01, 0.99);
    return std::log(p / (1.0 - p));
  }
  return 0.0;
}

BuiltModel distreg(const json& model, const DataTable* data) {
  check_keys(model, {"response", "family", "predictors"}, "model");
  if (!data) throw ConfigError("model: a regression model needs data (--data, 'data' or 'simulation')");
  DistRegModel m;
  m.response = data->column(get_or<std::string>(model, "response", "y", "model"));
  m.family = family_of(model, "model");
  if (!model.contains("predictors") || !model.at("predictors").is_object()) {
    throw ConfigError("model: 'predictors' must be an object keyed by family parameter");
  }
  const json& preds = model.at("predictors");
  std::vector<std::string> names;
  for (const auto& name : param_names(m.family)) {
    const std::string where = "model.predictors." + name;
    if (!preds.contains(name)) throw ConfigError(where + " is missing");
    const json& p = preds.at(name);
    check_keys(p, {"link", "intercept", "terms", "covariate", "n_basis", "degree", "order",
                   "constraint", "a", "b"},
               where);
    Predictor pred;
    pred.name = name;
    try {
      pred.link = link_from_name(get_or<std::string>(p, "link", "identity", where.c_str()));
    } catch (const Error& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (p.contains("terms")) {
      if (p.contains("covariate")) throw ConfigError(where + ": give 'terms' or 'covariate', not both");
      const json& terms = p.at("terms");
      if (!terms.is_array()) throw ConfigError(where + ".terms must be an array");
      for (std::size_t k = 0; k < terms.size(); ++k) {
        pred.terms.push_back(term_of(terms[k], *data, where + ".terms[" + std::to_string(k) + "]"));
      }
    } else if (p.contains("covariate")) {
      json t = p;
      t.erase("link");
      t.erase("intercept");
      pred.terms.push_back(term_of(t, *data, where));
    }
    pred.intercept = p.contains("intercept") ? get_or<double>(p, "intercept", 0.0, where.c_str())
                                             : default_intercept(name, pred.link, m.response);
    m.predictors.push_back(std::move(pred));
    names.push_back(name);
  }
  for (const auto& [key, _] : preds.items()) {
    if (std::find(names.begin(), names.end(), key) == names.end()) {
      throw ConfigError("model.predictors: " + std::string(family_name(m.family)) +
                        " has no parameter '" + key + "'");
    }
  }
  ModelGraph graph = build_distreg_model(m);
  return BuiltModel{std::move(graph), std::move(m), std::move(names)};
}

}  // namespace

BuiltModel build_model(const json& model, const DataTable* data) {
  if (model.is_null()) throw ConfigError("the config has no model block");
  if (!model.is_object()) throw ConfigError("model must be a JSON object");
  if (model.contains("nodes")) return direct_graph(model, data);
  return distreg(model, data);
}

// ---------------------------------------------------------------- kernels

namespace {

StepSizeKernel::Options step_options(const json& o, StepSizeKernel::Options d, const std::string& w) {
  d.initial_step_size = get_or<double>(o, "step_size", d.initial_step_size, w.c_str());
  d.target_accept = get_or<double>(o, "target_accept", d.target_accept, w.c_str());
  d.adapt_step_size = get_or<bool>(o, "adapt_step_size", d.adapt_step_size, w.c_str());
  if (!(d.initial_step_size > 0.0)) throw ConfigError(w + ": step_size must be positive");
  if (!(d.target_accept > 0.0 && d.target_accept < 1.0)) {
    throw ConfigError(w + ": target_accept must lie in (0, 1)");
  }
  return d;
}

HamiltonianKernel::MassOptions mass_options(const json& o, const std::string& w) {
  HamiltonianKernel::MassOptions m;
  m.adapt_mass = get_or<bool>(o, "adapt_mass", m.adapt_mass, w.c_str());
  m.dense_mass = get_or<bool>(o, "dense_mass", m.dense_mass, w.c_str());
  return m;
}

std::shared_ptr<Kernel> explicit_kernel(const json& k, BuiltModel& model, const std::string& w) {
  check_keys(k, {"kind", "position", "options"}, w);
  const auto kind = get_or<std::string>(k, "kind", "", w.c_str());
  const auto ids = get_or<std::vector<std::string>>(k, "position", {}, w.c_str());
  if (ids.empty()) throw ConfigError(w + ": 'position' must list at least one node");
  for (const auto& id : ids) {
    if (!model.graph.contains(id)) throw ConfigError(w + ": the model has no node '" + id + "'");
  }
  const json o = k.value("options", json::object());
  const std::string ow = w + ".options";
  if (kind == "rw") {
    check_keys(o, {"step_size", "target_accept", "adapt_step_size"}, ow);
    return std::make_shared<RandomWalkKernel>(ids, step_options(o, RandomWalkKernel::default_options(), ow));
  }
  if (kind == "iwls") {
    check_keys(o, {"step_size", "target_accept", "adapt_step_size"}, ow);
    return std::make_shared<IWLSKernel>(ids, step_options(o, {}, ow));
  }
  if (kind == "hmc") {
    check_keys(o, {"step_size", "target_accept", "adapt_step_size", "adapt_mass", "dense_mass",
                   "n_steps", "jitter"},
               ow);
    HMCOptions h;
    h.step = step_options(o, h.step, ow);
    h.mass = mass_options(o, ow);
    h.n_steps = get_or<int>(o, "n_steps", h.n_steps, ow.c_str());
    h.jitter = get_or<double>(o, "jitter", h.jitter, ow.c_str());
    if (h.n_steps < 1) throw ConfigError(ow + ": n_steps must be positive");
    if (!(h.jitter >= 0.0 && h.jitter < 1.0)) throw ConfigError(ow + ": jitter must lie in [0, 1)");
    return std::make_shared<HMCKernel>(ids, h);
  }
  if (kind == "nuts") {
    check_keys(o, {"step_size", "target_accept", "adapt_step_size", "adapt_mass", "dense_mass",
                   "max_tree_depth"},
               ow);
    NUTSOptions n;
    n.step = step_options(o, n.step, ow);
    n.mass = mass_options(o, ow);
    n.max_tree_depth = get_or<int>(o, "max_tree_depth", n.max_tree_depth, ow.c_str());
    if (n.max_tree_depth < 1) throw ConfigError(ow + ": max_tree_depth must be positive");
    return std::make_shared<NUTSKernel>(ids, n);
  }
  if (kind == "gibbs") {
    check_keys(o, {"coefficients"}, ow);
    if (ids.size() != 1) throw ConfigError(w + ": a gibbs kernel moves exactly one variance node");
    std::string beta = get_or<std::string>(o, "coefficients", "", ow.c_str());
    const std::string suffix = "_tau2";
    if (beta.empty() && ids[0].size() > suffix.size() &&
        ids[0].compare(ids[0].size() - suffix.size(), suffix.size(), suffix) == 0) {
      beta = ids[0].substr(0, ids[0].size() - suffix.size()) + "_beta";
    }
    if (beta.empty()) throw ConfigError(w + ": set options.coefficients to the coefficient node");
    try {
      return tau2_gibbs_kernel(model.graph, beta, ids[0]);
    } catch (const StateError& e) {
      throw ConfigError(w + ": " + e.what());
    }
  }
  throw ConfigError(w + ": unknown kernel kind '" + kind + "' (valid: rw, iwls, hmc, nuts, gibbs)");
}

BijectorKind bijector_of(const std::string& name, const std::string& w) {
  for (auto k : {BijectorKind::Identity, BijectorKind::Exp, BijectorKind::Log, BijectorKind::Softplus}) {
    if (bijector_name(k) == name) return k;
  }
  throw ConfigError(w + ": unknown bijector '" + name + "' (valid: Identity, Exp, Log, Softplus)");
}

}  // namespace

SchemeSetup build_kernels(const json& scheme, BuiltModel& model) {
  if (scheme.is_null()) throw ConfigError("the config has no scheme");
  std::optional<std::string> name;
  if (scheme.is_string()) name = scheme.get<std::string>();
  if (scheme.is_object() && scheme.contains("name")) {
    check_keys(scheme, {"name"}, "scheme");
    name = get_or<std::string>(scheme, "name", "", "scheme");
  }
  if (name) {
    const Scheme s = scheme_from_name(*name);
    if (!model.distreg) throw ConfigError("named schemes need a regression model; use a kernel list");
    return configure_scheme(s, model.graph, model.predictors);
  }
  if (!scheme.is_object()) throw ConfigError("scheme must be a name or an object");
  check_keys(scheme, {"kernels", "transform"}, "scheme");
  if (scheme.contains("transform")) {
    const json& t = scheme.at("transform");
    if (!t.is_object()) throw ConfigError("scheme.transform must map node ids to bijectors");
    for (const auto& [id, b] : t.items()) {
      if (!model.graph.contains(id)) throw ConfigError("scheme.transform: no node '" + id + "'");
      if (!b.is_string()) throw ConfigError("scheme.transform." + id + " must be a bijector name");
      try {
        transform_node(model.graph, id, Bijector{bijector_of(b.get<std::string>(), "scheme.transform")});
      } catch (const UnsupportedTransformError& e) {
        throw ConfigError("scheme.transform." + id + ": " + e.what());
      }
    }
  }
  if (!scheme.contains("kernels") || !scheme.at("kernels").is_array()) {
    throw ConfigError("scheme.kernels must be an array");
  }
  SchemeSetup setup;
  const json& list = scheme.at("kernels");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string w = "scheme.kernels[" + std::to_string(i) + "]";
    setup.kernels.push_back(explicit_kernel(list[i], model, w));
    setup.assignments.push_back(
        {get_or<std::string>(list[i], "kind", "", w.c_str()),
         get_or<std::vector<std::string>>(list[i], "position", {}, w.c_str())});
  }
  return setup;
}

// ---------------------------------------------------------------- outputs

std::string chain_csv(const SamplingResults& results, int chain) {
  std::string out = "iteration";
  for (const auto& c : results.columns) out += "," + c;
  out += "\n";
  const Eigen::MatrixXd& m = results.posterior.at(std::size_t(chain));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += std::to_string(i);
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += "," + format_double(m(i, j));
    out += "\n";
  }
  return out;
}

namespace {

std::string error_report(const Summary& summary) {
  std::string out = "code,description,kernel,count\n";
  for (const auto& e : summary.errors) {
    out += std::to_string(e.code) + "," + e.description + "," + e.kernel + "," +
           std::to_string(e.count) + "\n";
  }
  return out;
}

struct Loaded {
  ExperimentConfig config;
  std::optional<DataTable> data;
};

Loaded load(const fs::path& config_path, const std::optional<fs::path>& data_flag) {
  Loaded l{load_config(config_path), std::nullopt};
  const auto data_path = data_flag ? data_flag : l.config.data;
  if (data_path) {
    l.data = read_csv(*data_path);
  } else if (!l.config.simulation.is_null()) {
    const SimulatedData sim = simulate(l.config.simulation);
    DataTable t;
    t.names = {"x", "y"};
    t.columns = {std::vector<double>(sim.x.data(), sim.x.data() + sim.x.size()),
                 std::vector<double>(sim.y.data(), sim.y.data() + sim.y.size())};
    l.data = std::move(t);
  }
  return l;
}

/// Errors raised while reading the config, data and model are the user's
/// to fix; everything after the engine starts is a sampling failure.
template <class F>
int guarded(std::ostream& err, F&& f) {
  try {
    return f();
  } catch (const InitError& e) {
    err << "error: " << e.what() << "\n";
    return kExitSampling;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitSampling;
  }
}

}  // namespace

int run(const RunRequest& request, std::ostream& log, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const auto start = std::chrono::steady_clock::now();
    Loaded l = load(request.config, request.data);
    ExperimentConfig& c = l.config;
    if (request.chains) c.num_chains = *request.chains;
    if (request.seed) c.seed = *request.seed;
    if (request.threads) c.threads = *request.threads;
    if (request.scheme) c.scheme = *request.scheme;
    if (c.num_chains < 1) throw ConfigError("--chains must be at least 1");
    const auto out_dir = request.out ? request.out : c.output;
    if (!out_dir) throw ConfigError("no output directory (--out or 'output')");

    BuiltModel model = build_model(c.model, l.data ? &*l.data : nullptr);
    const SchemeSetup setup = build_kernels(c.scheme, model);

    EngineBuilder builder;
    builder.set_model(model.graph)
        .set_seed(c.seed)
        .set_num_chains(c.num_chains)
        .set_threads(c.threads)
        .set_epochs(stan_warmup_schedule(c.warmup, c.posterior));
    if (model.distreg && c.jitter > 0.0) {
      std::vector<NodeId> jittered;
      for (const auto& p : model.predictors) {
        jittered.push_back(intercept_id(p));
        for (std::size_t j = 0; model.graph.contains(term_ids(p, j).beta); ++j) {
          jittered.push_back(term_ids(p, j).beta);
        }
      }
      builder.set_jitter(uniform_jitter(model.graph.structure(), jittered, c.jitter));
    }
    for (const auto& k : setup.kernels) builder.add_kernel(k);
    Engine engine = builder.build();
    const double setup_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    try {
      engine.sample_all_epochs();
    } catch (const std::exception& e) {
      err << "error: sampling failed: " << e.what() << "\n";
      return kExitSampling;
    }
    const SamplingResults results = engine.get_results();

    fs::create_directories(*out_dir);
    json chains = json::array();
    for (int ch = 0; ch < results.num_chains; ++ch) {
      const std::string file = "chain_" + std::to_string(ch) + ".csv";
      write_file(*out_dir / file, chain_csv(results, ch));
      chains.push_back(file);
    }
    const Summary summary = summarize(results, results.posterior_seconds);
    std::ostringstream csv;
    write_summary_csv(csv, summary);
    write_file(*out_dir / "summary.csv", csv.str());
    const std::string table = format_summary(summary);
    write_file(*out_dir / "summary.txt", table);
    write_file(*out_dir / "errors.txt", error_report(summary));
    write_file(*out_dir / "model.dot", export_dot(model.graph));

    json kernels = json::array();
    for (const auto& a : setup.assignments) kernels.push_back({{"kind", a.kind}, {"position", a.position}});
    json manifest = {
        {"seed", c.seed},
        {"num_chains", c.num_chains},
        {"warmup", c.warmup},
        {"posterior", c.posterior},
        {"threads", engine.threads()},
        {"scheme", c.scheme},
        {"kernels", kernels},
        {"parameters", results.columns.size()},
        {"timings", {{"setup_seconds", setup_seconds}, {"posterior_seconds", results.posterior_seconds}}},
        {"files",
         {{"chains", chains},
          {"summary_csv", "summary.csv"},
          {"summary_table", "summary.txt"},
          {"errors", "errors.txt"},
          {"model", "model.dot"}}}};
    write_file(*out_dir / "manifest.json", manifest.dump(2) + "\n");
    log << table;
    return kExitOk;
  });
}

int simulate_command(const fs::path& config, const fs::path& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load_config(config);
    const SimulatedData data = simulate(c.simulation);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file(out, xy_csv(data));
    return kExitOk;
  });
}

int graph_command(const fs::path& config, const fs::path& out, std::ostream& err) {
  return guarded(err, [&] {
    Loaded l = load(config, std::nullopt);
    BuiltModel model = build_model(l.config.model, l.data ? &*l.data : nullptr);
    if (!l.config.scheme.is_null()) build_kernels(l.config.scheme, model);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file(out, export_dot(model.graph));
    return kExitOk;
  });
}

}  // namespace greylag::cli
