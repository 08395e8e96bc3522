#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "greylag/distributions.hpp"
#include "greylag/value.hpp"
#include "greylag/weak_fns.hpp"

namespace greylag {

enum class NodeKind { Strong, Weak };
enum class Role { Observed, Parameter, Hyperparameter, Computed };

std::string_view role_name(Role role);

/// Node declaration used to build a graph.
struct Node {
  NodeId id;
  NodeKind kind = NodeKind::Strong;
  /// Value of a strong node; ignored for weak nodes (computed at build).
  Value value;
  /// Arguments of the weak function, in order.
  std::vector<NodeId> inputs;
  std::optional<DistributionSpec> distribution;
  WeakFnPtr weak_fn;
  Role role = Role::Hyperparameter;

  static Node strong(NodeId id, Value value, Role role = Role::Hyperparameter);
  static Node parameter(NodeId id, Value value, DistributionSpec prior);
  static Node observed(NodeId id, Value value,
                       std::optional<DistributionSpec> dist = std::nullopt);
  static Node weak(NodeId id, WeakFnPtr fn, std::vector<NodeId> inputs);

  Node&& with_distribution(DistributionSpec spec) &&;
  Node&& with_role(Role r) &&;
};

/// Node names and roles shared by every state of one graph.
struct StateLayout {
  std::vector<NodeId> names;
  std::vector<Role> roles;
  std::vector<bool> has_distribution;
  std::unordered_map<NodeId, std::size_t> index;

  std::size_t at(const NodeId& id) const;
};

/// Immutable snapshot of all node values and log-probabilities.
///
/// Values are shared between states by reference counting, so copying a
/// state is cheap and states can be handed to other threads.
class ModelState {
 public:
  ModelState() = default;
  ModelState(std::shared_ptr<const StateLayout> layout,
             std::vector<std::shared_ptr<const Value>> values, std::vector<double> log_probs);

  const Value& value(const NodeId& id) const { return *values_[layout_->at(id)]; }
  const Value& value(std::size_t index) const { return *values_[index]; }
  double log_prob(const NodeId& id) const { return log_probs_[layout_->at(id)]; }
  double log_prob(std::size_t index) const { return log_probs_[index]; }
  bool contains(const NodeId& id) const { return layout_ && layout_->index.count(id) > 0; }
  std::size_t size() const noexcept { return values_.size(); }
  const StateLayout& layout() const { return *layout_; }
  const std::shared_ptr<const StateLayout>& layout_ptr() const { return layout_; }

  /// Sum of all node log-probabilities.
  double total_log_prob() const;
  double log_lik() const;
  double log_prior() const;

  /// Copy with node `index` replaced (shape not checked here).
  ModelState with(std::size_t index, std::shared_ptr<const Value> value, double log_prob) const;

  const std::vector<std::shared_ptr<const Value>>& values() const { return values_; }
  const std::vector<double>& log_probs() const { return log_probs_; }

  /// Bitwise equality of every value and log-probability.
  friend bool operator==(const ModelState& a, const ModelState& b);

 private:
  friend class GraphStructure;
  std::shared_ptr<const StateLayout> layout_;
  std::vector<std::shared_ptr<const Value>> values_;
  std::vector<double> log_probs_;
};

/// Ordered subset of strong parameter values moved by one kernel.
class Position {
 public:
  Position() = default;

  void set(const NodeId& id, Value value);
  const Value& at(const NodeId& id) const;
  bool contains(const NodeId& id) const;
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<std::pair<NodeId, Value>>& entries() const { return entries_; }
  std::vector<NodeId> ids() const;

  std::size_t flat_size() const;
  Eigen::VectorXd flatten() const;

  friend bool operator==(const Position&, const Position&) = default;

 private:
  std::vector<std::pair<NodeId, Value>> entries_;
};

namespace detail {

struct CompiledNode {
  NodeId id;
  NodeKind kind;
  Role role;
  Shape shape;
  DType dtype;
  std::vector<std::size_t> inputs;
  std::optional<DistributionSpec> distribution;
  /// Per distribution parameter: the node index, or nullopt for a constant.
  std::vector<std::optional<std::size_t>> param_nodes;
  std::vector<std::shared_ptr<const Value>> param_constants;
  WeakFnPtr weak_fn;
  /// Nodes reading this one as a weak input or a distribution parameter.
  std::vector<std::size_t> children;
};

}  // namespace detail

/// Immutable, topologically sorted form of a graph. Node index == position
/// in the topological order, so ascending index order is a valid update
/// order. Everything here is const and thread-safe.
class GraphStructure {
 public:
  GraphStructure(std::vector<detail::CompiledNode> nodes,
                 std::shared_ptr<const StateLayout> layout)
      : nodes_(std::move(nodes)), layout_(std::move(layout)) {}

  std::size_t size() const noexcept { return nodes_.size(); }
  const detail::CompiledNode& node(std::size_t i) const { return nodes_[i]; }
  const std::shared_ptr<const StateLayout>& layout() const { return layout_; }
  std::size_t index(const NodeId& id) const { return layout_->at(id); }

  /// Weak function output for node `i`; throws EvaluationError or ShapeError.
  Value evaluate_weak(std::size_t i, std::span<const std::shared_ptr<const Value>> values) const;
  /// Log-density of node `i` at its current value (-inf outside the
  /// support or for out-of-domain parameters; 0 without a distribution).
  double evaluate_log_prob(std::size_t i,
                           std::span<const std::shared_ptr<const Value>> values) const;

  /// Nodes that must be refreshed after writing `seeds`: the seeds and all
  /// transitive children, ascending (topological) order.
  std::vector<std::size_t> update_closure(std::span<const std::size_t> seeds) const;

  /// Writes the given strong-node values and recomputes `closure`, which
  /// must come from `update_closure` of the written nodes.
  ModelState apply(const ModelState& state,
                   std::span<const std::pair<std::size_t, const Value*>> writes,
                   std::span<const std::size_t> closure) const;
  ModelState apply(const Position& position, const ModelState& state) const;

  /// d total_log_prob / d position, flattened in position order, at `state`.
  /// Throws NonDifferentiableError when a discrete or vjp-less node lies on
  /// a path from the position to a density.
  Eigen::VectorXd gradient(const ModelState& state, std::span<const std::size_t> position) const;

 private:
  std::vector<detail::CompiledNode> nodes_;
  std::shared_ptr<const StateLayout> layout_;
};

/// Mutable, stateful model graph with cached values and lazy updates.
/// Single-threaded; use `state()` and the pure functions for concurrency.
class ModelGraph {
 public:
  /// Validates the declarations, computes a topological order and
  /// evaluates every weak node and log-probability once.
  explicit ModelGraph(std::vector<Node> nodes);

  std::vector<NodeId> topo_order() const;
  std::size_t size() const noexcept { return structure_->size(); }
  bool contains(const NodeId& id) const { return structure_->layout()->index.count(id) > 0; }

  NodeKind kind(const NodeId& id) const;
  Role role(const NodeId& id) const;
  const std::vector<NodeId>& input_ids(const NodeId& id) const;
  const std::optional<DistributionSpec>& distribution(const NodeId& id) const;

  const Value& value(const NodeId& id) const;
  double node_log_prob(const NodeId& id) const;
  bool outdated(const NodeId& id) const;
  bool clean() const;

  /// Replaces a strong node's value and flags it (if it has a density) and
  /// every transitive output as outdated. Nothing is recomputed.
  void set_value(const NodeId& id, Value value);

  /// Recomputes every outdated node in topological order.
  void update();
  /// Recomputes only the outdated ancestors of `targets` (and the targets).
  void update(std::span<const NodeId> targets);

  double log_prob() const;
  double log_lik() const;
  double log_prior() const;

  ModelState state() const;
  void set_state(const ModelState& state);

  /// Number of weak-function calls made by this graph's updates.
  std::size_t weak_evaluations() const noexcept { return weak_evaluations_; }

  const std::shared_ptr<const GraphStructure>& structure() const { return structure_; }
  /// The declarations the graph was built from, with current strong values.
  std::vector<Node> declarations() const;

 private:
  void recompute(std::size_t i);
  void require_clean(const char* what) const;

  std::vector<Node> declarations_;
  std::shared_ptr<const GraphStructure> structure_;
  std::vector<std::shared_ptr<const Value>> values_;
  std::vector<double> log_probs_;
  std::vector<bool> outdated_;
  std::size_t weak_evaluations_ = 0;
};

inline ModelGraph build_graph(std::vector<Node> nodes) { return ModelGraph(std::move(nodes)); }

/// Referentially transparent functions over model states.
struct PureFunctions {
  std::function<double(const ModelState&)> log_prob;
  std::function<ModelState(const Position&, const ModelState&)> update;
};

PureFunctions extract_pure_fns(const ModelGraph& graph);

/// Gradient of the model log-probability w.r.t. the position, evaluated at
/// the graph's current state with the position written in.
Position grad_log_prob(const ModelGraph& graph, const Position& position);

/// Central finite differences of the analytic gradient, symmetrized.
Eigen::MatrixXd hessian_log_prob(const ModelGraph& graph, const Position& position);

/// Graphviz DOT rendering. Strong nodes are blue, weak nodes orange,
/// nodes with a distribution get a double border, parameters are oblique.
std::string export_dot(const ModelGraph& graph);

/// Reparameterizes strong node `id` through `bijector`: a new strong node
/// `<id>_transformed` holds u = inverse(x) with the Jacobian-adjusted
/// density, and `id` becomes a weak node computing forward(u). Returns the
/// new node's id.
NodeId transform_node(ModelGraph& graph, const NodeId& id, Bijector bijector);

}  // namespace greylag
