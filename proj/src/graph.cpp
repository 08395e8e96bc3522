#include "greylag/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_set>

#include "greylag/errors.hpp"
#include "greylag/hessian.hpp"

namespace greylag {

namespace {

using ValuePtr = std::shared_ptr<const Value>;

Value coerce(const Value& v, const Shape& shape, DType dtype) {
  if (v.shape() != shape) {
    throw ShapeError("expected shape " + shape_to_string(shape) + ", got " +
                     shape_to_string(v.shape()));
  }
  if (v.dtype() == dtype) return v;
  return Value(shape, std::vector<double>(v.data().begin(), v.data().end()), dtype);
}

void accumulate(std::optional<Value>& slot, const Value& grad, std::size_t expected) {
  if (grad.size() != expected) {
    throw ShapeError("adjoint of size " + std::to_string(grad.size()) + " for a node of size " +
                     std::to_string(expected));
  }
  if (!slot) {
    slot = grad;
    return;
  }
  for (std::size_t k = 0; k < expected; ++k) (*slot)[k] += grad[k];
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string_view role_name(Role role) {
  switch (role) {
    case Role::Observed: return "observed";
    case Role::Parameter: return "parameter";
    case Role::Hyperparameter: return "hyperparameter";
    case Role::Computed: return "computed";
  }
  return "unknown";
}

// ---------------------------------------------------------------- Node

Node Node::strong(NodeId id, Value value, Role role) {
  Node n;
  n.id = std::move(id);
  n.kind = NodeKind::Strong;
  n.value = std::move(value);
  n.role = role;
  return n;
}

Node Node::parameter(NodeId id, Value value, DistributionSpec prior) {
  Node n = strong(std::move(id), std::move(value), Role::Parameter);
  n.distribution = std::move(prior);
  return n;
}

Node Node::observed(NodeId id, Value value, std::optional<DistributionSpec> dist) {
  Node n = strong(std::move(id), std::move(value), Role::Observed);
  n.distribution = std::move(dist);
  return n;
}

Node Node::weak(NodeId id, WeakFnPtr fn, std::vector<NodeId> inputs) {
  Node n;
  n.id = std::move(id);
  n.kind = NodeKind::Weak;
  n.weak_fn = std::move(fn);
  n.inputs = std::move(inputs);
  n.role = Role::Computed;
  return n;
}

Node&& Node::with_distribution(DistributionSpec spec) && {
  distribution = std::move(spec);
  return std::move(*this);
}

Node&& Node::with_role(Role r) && {
  role = r;
  return std::move(*this);
}

std::size_t StateLayout::at(const NodeId& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw MissingInputError("unknown node '" + id + "'");
  return it->second;
}

// ---------------------------------------------------------------- ModelState

ModelState::ModelState(std::shared_ptr<const StateLayout> layout, std::vector<ValuePtr> values,
                       std::vector<double> log_probs)
    : layout_(std::move(layout)), values_(std::move(values)), log_probs_(std::move(log_probs)) {}

double ModelState::total_log_prob() const {
  double total = 0.0;
  for (double lp : log_probs_) total += lp;
  return total;
}

double ModelState::log_lik() const {
  double total = 0.0;
  for (std::size_t i = 0; i < log_probs_.size(); ++i) {
    if (layout_->roles[i] == Role::Observed) total += log_probs_[i];
  }
  return total;
}

double ModelState::log_prior() const {
  double total = 0.0;
  for (std::size_t i = 0; i < log_probs_.size(); ++i) {
    if (layout_->roles[i] == Role::Parameter) total += log_probs_[i];
  }
  return total;
}

ModelState ModelState::with(std::size_t index, ValuePtr value, double log_prob) const {
  ModelState out = *this;
  out.values_[index] = std::move(value);
  out.log_probs_[index] = log_prob;
  return out;
}

bool operator==(const ModelState& a, const ModelState& b) {
  if (a.values_.size() != b.values_.size()) return false;
  for (std::size_t i = 0; i < a.values_.size(); ++i) {
    if (a.values_[i] != b.values_[i] && !(*a.values_[i] == *b.values_[i])) return false;
    if (std::bit_cast<std::uint64_t>(a.log_probs_[i]) !=
        std::bit_cast<std::uint64_t>(b.log_probs_[i])) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- Position

void Position::set(const NodeId& id, Value value) {
  for (auto& [key, v] : entries_) {
    if (key == id) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(id, std::move(value));
}

const Value& Position::at(const NodeId& id) const {
  for (const auto& [key, v] : entries_) {
    if (key == id) return v;
  }
  throw MissingInputError("position has no entry '" + id + "'");
}

bool Position::contains(const NodeId& id) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == id; });
}

std::vector<NodeId> Position::ids() const {
  std::vector<NodeId> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::size_t Position::flat_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

Eigen::VectorXd Position::flatten() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(flat_size()));
  Eigen::Index k = 0;
  for (const auto& e : entries_) {
    for (double x : e.second.data()) out[k++] = x;
  }
  return out;
}

// ---------------------------------------------------------------- GraphStructure

Value GraphStructure::evaluate_weak(std::size_t i, std::span<const ValuePtr> values) const {
  const auto& node = nodes_[i];
  std::vector<const Value*> args;
  args.reserve(node.inputs.size());
  for (std::size_t j : node.inputs) args.push_back(values[j].get());
  Value out;
  try {
    out = (*node.weak_fn)(args);
  } catch (const ShapeError& e) {
    throw ShapeError("weak node '" + node.id + "': " + e.what());
  } catch (const std::exception& e) {
    throw EvaluationError(node.id, e.what());
  }
  if (out.shape() != node.shape) {
    throw ShapeError("weak node '" + node.id + "' produced shape " +
                     shape_to_string(out.shape()) + ", expected " + shape_to_string(node.shape));
  }
  return out;
}

double GraphStructure::evaluate_log_prob(std::size_t i, std::span<const ValuePtr> values) const {
  const auto& node = nodes_[i];
  if (!node.distribution) return 0.0;
  const std::size_t m = node.param_nodes.size();
  const Value* params[8];
  for (std::size_t k = 0; k < m; ++k) {
    params[k] = node.param_nodes[k] ? values[*node.param_nodes[k]].get()
                                    : node.param_constants[k].get();
  }
  try {
    return log_prob_or_neg_inf(*node.distribution, *values[i], ParamValues(params, m));
  } catch (const ShapeError& e) {
    throw ShapeError("distribution of node '" + node.id + "': " + e.what());
  }
}

std::vector<std::size_t> GraphStructure::update_closure(std::span<const std::size_t> seeds) const {
  std::vector<char> mark(nodes_.size(), 0);
  std::vector<std::size_t> stack(seeds.begin(), seeds.end());
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    if (mark[i]) continue;
    mark[i] = 1;
    for (std::size_t c : nodes_[i].children) {
      if (!mark[c]) stack.push_back(c);
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (mark[i]) out.push_back(i);
  }
  return out;
}

ModelState GraphStructure::apply(const ModelState& state,
                                 std::span<const std::pair<std::size_t, const Value*>> writes,
                                 std::span<const std::size_t> closure) const {
  ModelState out = state;
  for (const auto& [i, v] : writes) {
    out.values_[i] = std::make_shared<const Value>(*v);
  }
  for (std::size_t i : closure) {
    if (nodes_[i].kind == NodeKind::Weak) {
      out.values_[i] = std::make_shared<const Value>(evaluate_weak(i, out.values_));
    }
    if (nodes_[i].distribution) out.log_probs_[i] = evaluate_log_prob(i, out.values_);
  }
  return out;
}

ModelState GraphStructure::apply(const Position& position, const ModelState& state) const {
  if (position.empty()) return state;
  std::vector<Value> coerced;
  std::vector<std::size_t> seeds;
  coerced.reserve(position.size());
  for (const auto& [id, v] : position.entries()) {
    const std::size_t i = layout_->at(id);
    const auto& node = nodes_[i];
    if (node.kind == NodeKind::Weak) throw WeakWriteError("cannot write weak node '" + id + "'");
    coerced.push_back(coerce(v, node.shape, node.dtype));
    seeds.push_back(i);
  }
  std::vector<std::pair<std::size_t, const Value*>> writes;
  for (std::size_t k = 0; k < seeds.size(); ++k) writes.emplace_back(seeds[k], &coerced[k]);
  const auto closure = update_closure(seeds);
  return apply(state, writes, closure);
}

Eigen::VectorXd GraphStructure::gradient(const ModelState& state,
                                         std::span<const std::size_t> position) const {
  const std::size_t n = nodes_.size();
  std::vector<char> flows(n, 0);
  for (std::size_t i : position) {
    if (nodes_[i].dtype == DType::Integer) {
      throw NonDifferentiableError("node '" + nodes_[i].id + "' is integer-valued");
    }
    flows[i] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (nodes_[i].kind != NodeKind::Weak || flows[i]) continue;
    for (std::size_t j : nodes_[i].inputs) {
      if (flows[j]) {
        flows[i] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Value>> adjoint(n);
  const auto& values = state.values();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = nodes_[i];
    if (!node.distribution) continue;
    bool any_param = false;
    for (const auto& p : node.param_nodes) any_param = any_param || (p && flows[*p]);
    if (!flows[i] && !any_param) continue;
    const std::size_t m = node.param_nodes.size();
    const Value* params[8];
    for (std::size_t k = 0; k < m; ++k) {
      params[k] = node.param_nodes[k] ? values[*node.param_nodes[k]].get()
                                      : node.param_constants[k].get();
    }
    const Score s = score(*node.distribution, *values[i], ParamValues(params, m));
    if (flows[i]) {
      if (!s.x) {
        throw NonDifferentiableError("density of node '" + node.id +
                                     "' is not differentiable in its value");
      }
      accumulate(adjoint[i], *s.x, values[i]->size());
    }
    for (std::size_t k = 0; k < m; ++k) {
      const auto& p = node.param_nodes[k];
      if (!p || !flows[*p]) continue;
      if (!s.params[k]) {
        throw NonDifferentiableError("density of node '" + node.id +
                                     "' is not differentiable in parameter '" +
                                     node.distribution->params[k].first + "'");
      }
      accumulate(adjoint[*p], *s.params[k], values[*p]->size());
    }
  }

  for (std::size_t r = n; r-- > 0;) {
    const auto& node = nodes_[r];
    if (node.kind != NodeKind::Weak || !flows[r] || !adjoint[r]) continue;
    if (node.dtype == DType::Integer) {
      throw NonDifferentiableError("node '" + node.id + "' is integer-valued");
    }
    std::vector<bool> needed(node.inputs.size());
    std::vector<const Value*> args;
    bool any = false;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      needed[k] = flows[node.inputs[k]] != 0;
      any = any || needed[k];
      args.push_back(values[node.inputs[k]].get());
    }
    if (!any) continue;
    auto grads = node.weak_fn->vjp(args, *values[r], *adjoint[r], needed);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (!needed[k]) continue;
      if (k >= grads.size() || !grads[k]) {
        throw NonDifferentiableError("weak function '" + node.weak_fn->name() + "' of node '" +
                                     node.id + "' is not differentiable in input " +
                                     std::to_string(k));
      }
      const std::size_t j = node.inputs[k];
      accumulate(adjoint[j], *grads[k], values[j]->size());
    }
  }

  std::size_t total = 0;
  for (std::size_t i : position) total += values[i]->size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(Eigen::Index(total));
  Eigen::Index offset = 0;
  for (std::size_t i : position) {
    const auto sz = Eigen::Index(values[i]->size());
    if (adjoint[i]) out.segment(offset, sz) = adjoint[i]->vec();
    offset += sz;
  }
  return out;
}

// ---------------------------------------------------------------- ModelGraph

ModelGraph::ModelGraph(std::vector<Node> nodes) : declarations_(std::move(nodes)) {
  const std::size_t n = declarations_.size();
  std::unordered_map<NodeId, std::size_t> decl_index;
  for (std::size_t i = 0; i < n; ++i) {
    const Node& node = declarations_[i];
    if (node.id.empty()) throw MissingInputError("node ids must be non-empty");
    if (!decl_index.emplace(node.id, i).second) {
      throw MissingInputError("duplicate node id '" + node.id + "'");
    }
  }

  // dependencies: weak inputs and distribution parameters
  std::vector<std::vector<std::size_t>> deps(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Node& node = declarations_[i];
    if (node.kind == NodeKind::Weak) {
      if (!node.weak_fn) throw MissingInputError("weak node '" + node.id + "' has no function");
    } else {
      if (node.weak_fn || !node.inputs.empty()) {
        throw MissingInputError("strong node '" + node.id + "' cannot have a function or inputs");
      }
    }
    auto resolve = [&](const NodeId& id) {
      auto it = decl_index.find(id);
      if (it == decl_index.end()) {
        throw MissingInputError("node '" + node.id + "' references unknown node '" + id + "'");
      }
      return it->second;
    };
    for (const auto& in : node.inputs) deps[i].push_back(resolve(in));
    if (node.distribution) {
      node.distribution->validate();
      for (const auto& [name, src] : node.distribution->params) {
        if (const auto* id = std::get_if<NodeId>(&src)) deps[i].push_back(resolve(*id));
      }
    }
  }

  // Kahn's algorithm, smallest declaration index first
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> out_edges(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::size_t> unique(deps[i].begin(), deps[i].end());
    for (std::size_t d : unique) {
      out_edges[d].push_back(i);
      ++indegree[i];
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    order.push_back(i);
    for (std::size_t c : out_edges[i]) {
      if (--indegree[c] == 0) ready.push(c);
    }
  }
  if (order.size() != n) {
    std::string members;
    for (std::size_t i = 0; i < n; ++i) {
      if (indegree[i] > 0) members += (members.empty() ? "" : ", ") + declarations_[i].id;
    }
    throw CycleError("graph contains a cycle through: " + members);
  }

  std::vector<std::size_t> position_of(n);
  for (std::size_t k = 0; k < n; ++k) position_of[order[k]] = k;

  auto layout = std::make_shared<StateLayout>();
  std::vector<detail::CompiledNode> compiled(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Node& decl = declarations_[order[k]];
    layout->names.push_back(decl.id);
    layout->roles.push_back(decl.role);
    layout->has_distribution.push_back(decl.distribution.has_value());
    layout->index.emplace(decl.id, k);

    auto& c = compiled[k];
    c.id = decl.id;
    c.kind = decl.kind;
    c.role = decl.role;
    c.weak_fn = decl.weak_fn;
    c.distribution = decl.distribution;
    if (decl.kind == NodeKind::Strong) {
      c.shape = decl.value.shape();
      c.dtype = decl.value.dtype();
    }
    for (const auto& in : decl.inputs) c.inputs.push_back(position_of[decl_index.at(in)]);
    if (decl.distribution) {
      for (const auto& [name, src] : decl.distribution->params) {
        if (const auto* id = std::get_if<NodeId>(&src)) {
          c.param_nodes.push_back(position_of[decl_index.at(*id)]);
          c.param_constants.push_back(nullptr);
        } else {
          c.param_nodes.push_back(std::nullopt);
          c.param_constants.push_back(std::make_shared<const Value>(std::get<Value>(src)));
        }
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::set<std::size_t> parents(compiled[k].inputs.begin(), compiled[k].inputs.end());
    for (const auto& p : compiled[k].param_nodes) {
      if (p) parents.insert(*p);
    }
    for (std::size_t p : parents) compiled[p].children.push_back(k);
  }

  // first evaluation fixes the shapes of weak nodes
  values_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto& c = compiled[k];
    if (c.kind == NodeKind::Strong) {
      values_[k] = std::make_shared<const Value>(declarations_[order[k]].value);
      continue;
    }
    std::vector<const Value*> args;
    for (std::size_t j : c.inputs) args.push_back(values_[j].get());
    Value out;
    try {
      out = (*c.weak_fn)(args);
    } catch (const ShapeError& e) {
      throw ShapeError("weak node '" + c.id + "': " + e.what());
    } catch (const std::exception& e) {
      throw EvaluationError(c.id, e.what());
    }
    c.shape = out.shape();
    c.dtype = out.dtype();
    values_[k] = std::make_shared<const Value>(std::move(out));
    ++weak_evaluations_;
  }

  structure_ = std::make_shared<const GraphStructure>(std::move(compiled), layout);
  log_probs_.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) log_probs_[k] = structure_->evaluate_log_prob(k, values_);
  outdated_.assign(n, false);

  // declarations kept in topological order
  std::vector<Node> sorted;
  sorted.reserve(n);
  for (std::size_t k = 0; k < n; ++k) sorted.push_back(std::move(declarations_[order[k]]));
  declarations_ = std::move(sorted);
}

std::vector<NodeId> ModelGraph::topo_order() const { return structure_->layout()->names; }

NodeKind ModelGraph::kind(const NodeId& id) const {
  return structure_->node(structure_->index(id)).kind;
}

Role ModelGraph::role(const NodeId& id) const {
  return structure_->node(structure_->index(id)).role;
}

const std::vector<NodeId>& ModelGraph::input_ids(const NodeId& id) const {
  return declarations_[structure_->index(id)].inputs;
}

const std::optional<DistributionSpec>& ModelGraph::distribution(const NodeId& id) const {
  return structure_->node(structure_->index(id)).distribution;
}

const Value& ModelGraph::value(const NodeId& id) const { return *values_[structure_->index(id)]; }

double ModelGraph::node_log_prob(const NodeId& id) const {
  return log_probs_[structure_->index(id)];
}

bool ModelGraph::outdated(const NodeId& id) const { return outdated_[structure_->index(id)]; }

bool ModelGraph::clean() const {
  return std::none_of(outdated_.begin(), outdated_.end(), [](bool b) { return b; });
}

void ModelGraph::set_value(const NodeId& id, Value value) {
  const std::size_t i = structure_->index(id);
  const auto& node = structure_->node(i);
  if (node.kind == NodeKind::Weak) throw WeakWriteError("cannot write weak node '" + id + "'");
  values_[i] = std::make_shared<const Value>(coerce(value, node.shape, node.dtype));
  if (node.distribution) outdated_[i] = true;
  std::vector<std::size_t> stack(node.children.begin(), node.children.end());
  while (!stack.empty()) {
    const std::size_t c = stack.back();
    stack.pop_back();
    if (outdated_[c]) continue;
    outdated_[c] = true;
    for (std::size_t g : structure_->node(c).children) stack.push_back(g);
  }
}

void ModelGraph::recompute(std::size_t i) {
  const auto& node = structure_->node(i);
  if (node.kind == NodeKind::Weak) {
    values_[i] = std::make_shared<const Value>(structure_->evaluate_weak(i, values_));
    ++weak_evaluations_;
  }
  if (node.distribution) log_probs_[i] = structure_->evaluate_log_prob(i, values_);
  outdated_[i] = false;
}

void ModelGraph::update() {
  for (std::size_t i = 0; i < outdated_.size(); ++i) {
    if (outdated_[i]) recompute(i);
  }
}

void ModelGraph::update(std::span<const NodeId> targets) {
  std::vector<char> needed(outdated_.size(), 0);
  std::vector<std::size_t> stack;
  for (const auto& id : targets) stack.push_back(structure_->index(id));
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    if (needed[i]) continue;
    needed[i] = 1;
    const auto& node = structure_->node(i);
    for (std::size_t j : node.inputs) stack.push_back(j);
    for (const auto& p : node.param_nodes) {
      if (p) stack.push_back(*p);
    }
  }
  for (std::size_t i = 0; i < outdated_.size(); ++i) {
    if (needed[i] && outdated_[i]) recompute(i);
  }
}

void ModelGraph::require_clean(const char* what) const {
  if (!clean()) throw StateError(std::string(what) + " requires an updated graph");
}

double ModelGraph::log_prob() const {
  require_clean("log_prob");
  double total = 0.0;
  for (double lp : log_probs_) total += lp;
  return total;
}

double ModelGraph::log_lik() const { return state().log_lik(); }

double ModelGraph::log_prior() const { return state().log_prior(); }

ModelState ModelGraph::state() const {
  require_clean("state");
  return ModelState(structure_->layout(), values_, log_probs_);
}

void ModelGraph::set_state(const ModelState& state) {
  if (!state.layout_ptr() || state.layout().names != structure_->layout()->names) {
    throw StateError("state does not belong to this graph");
  }
  values_ = state.values();
  log_probs_ = state.log_probs();
  outdated_.assign(values_.size(), false);
}

std::vector<Node> ModelGraph::declarations() const {
  std::vector<Node> out = declarations_;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].kind == NodeKind::Strong) out[i].value = *values_[i];
  }
  return out;
}

// ---------------------------------------------------------------- free functions

PureFunctions extract_pure_fns(const ModelGraph& graph) {
  std::shared_ptr<const GraphStructure> structure = graph.structure();
  PureFunctions fns;
  fns.log_prob = [](const ModelState& s) { return s.total_log_prob(); };
  fns.update = [structure](const Position& p, const ModelState& s) {
    return structure->apply(p, s);
  };
  return fns;
}

namespace {

std::vector<std::size_t> position_indices(const GraphStructure& g, const Position& p) {
  std::vector<std::size_t> out;
  for (const auto& [id, v] : p.entries()) out.push_back(g.index(id));
  return out;
}

}  // namespace

Position grad_log_prob(const ModelGraph& graph, const Position& position) {
  const auto& g = *graph.structure();
  const ModelState state = g.apply(position, graph.state());
  const auto idx = position_indices(g, position);
  const Eigen::VectorXd grad = g.gradient(state, idx);
  Position out;
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Value& v = state.value(idx[k]);
    Value gv(v.shape(), std::vector<double>(v.size()));
    gv.vec() = grad.segment(offset, Eigen::Index(v.size()));
    offset += Eigen::Index(v.size());
    out.set(position.entries()[k].first, std::move(gv));
  }
  return out;
}

Eigen::MatrixXd hessian_log_prob(const ModelGraph& graph, const Position& position) {
  const auto& g = *graph.structure();
  const ModelState base = graph.state();
  const auto idx = position_indices(g, position);
  const auto closure = g.update_closure(idx);
  std::vector<Shape> shapes;
  for (std::size_t i : idx) shapes.push_back(g.node(i).shape);
  auto grad = [&](const Eigen::VectorXd& theta) {
    std::vector<Value> vals;
    Eigen::Index offset = 0;
    for (const auto& shape : shapes) {
      const auto sz = Eigen::Index(shape_size(shape));
      Value v(shape, std::vector<double>(std::size_t(sz)));
      v.vec() = theta.segment(offset, sz);
      offset += sz;
      vals.push_back(std::move(v));
    }
    std::vector<std::pair<std::size_t, const Value*>> writes;
    for (std::size_t k = 0; k < idx.size(); ++k) writes.emplace_back(idx[k], &vals[k]);
    return g.gradient(g.apply(base, writes, closure), idx);
  };
  return fd_hessian(grad, position.flatten());
}

std::string export_dot(const ModelGraph& graph) {
  const auto& g = *graph.structure();
  std::ostringstream out;
  out << "digraph model {\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& node = g.node(i);
    const bool strong = node.kind == NodeKind::Strong;
    out << "  " << quoted(node.id) << " [shape="
        << (node.role == Role::Parameter ? "parallelogram" : "ellipse")
        << ", style=filled, fillcolor=\"" << (strong ? "#9ecae1" : "#fdae6b") << "\""
        << ", peripheries=" << (node.distribution ? 2 : 1) << "];\n";
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& node = g.node(i);
    std::vector<std::size_t> parents(node.inputs);
    for (const auto& p : node.param_nodes) {
      if (p) parents.push_back(*p);
    }
    std::set<std::size_t> seen;
    for (std::size_t p : parents) {
      if (!seen.insert(p).second) continue;
      out << "  " << quoted(g.node(p).id) << " -> " << quoted(node.id) << ";\n";
    }
  }
  out << "}\n";
  return out.str();
}

NodeId transform_node(ModelGraph& graph, const NodeId& id, Bijector bijector) {
  if (!graph.contains(id)) throw MissingInputError("unknown node '" + id + "'");
  if (graph.kind(id) != NodeKind::Strong) {
    throw UnsupportedTransformError("node '" + id + "' is weak");
  }
  const auto& dist = graph.distribution(id);
  if (!dist) throw UnsupportedTransformError("node '" + id + "' has no distribution");
  if (dist->transform) throw UnsupportedTransformError("node '" + id + "' is already transformed");
  if (is_discrete(dist->family)) {
    throw UnsupportedTransformError("node '" + id + "' has a discrete distribution");
  }
  const bool positive = dist->family == Family::InverseGamma || dist->family == Family::Gamma;
  switch (bijector.kind) {
    case BijectorKind::Identity:
      break;
    case BijectorKind::Exp:
    case BijectorKind::Softplus:
      if (!positive) {
        throw UnsupportedTransformError("bijector '" + std::string(bijector_name(bijector.kind)) +
                                        "' maps onto (0, inf), which is not the support of '" +
                                        id + "'");
      }
      break;
    case BijectorKind::Log:
      if (dist->family != Family::Normal) {
        throw UnsupportedTransformError("bijector 'log' maps onto the real line, which is not "
                                        "the support of '" + id + "'");
      }
      break;
  }

  const NodeId new_id = id + "_transformed";
  if (graph.contains(new_id)) throw UnsupportedTransformError("node '" + new_id + "' exists");

  std::vector<Node> decls = graph.declarations();
  std::vector<Node> rebuilt;
  rebuilt.reserve(decls.size() + 1);
  for (auto& node : decls) {
    if (node.id != id) {
      rebuilt.push_back(std::move(node));
      continue;
    }
    Value u = node.value;
    for (double& x : u.data()) x = bijector.inverse(x);
    DistributionSpec spec = *node.distribution;
    spec.transform = bijector;
    Node strong = Node::strong(new_id, std::move(u), node.role);
    strong.distribution = std::move(spec);
    rebuilt.push_back(std::move(strong));
    rebuilt.push_back(Node::weak(id, weak::bijector_forward(bijector), {new_id}));
  }
  graph = ModelGraph(std::move(rebuilt));
  return new_id;
}

}  // namespace greylag
