#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "greylag/graph.hpp"

namespace greylag {

/// A fixed set of strong nodes moved together, with the update closure
/// precomputed. Flat vectors concatenate the node values in `ids()` order.
class PositionBlock {
 public:
  PositionBlock(std::shared_ptr<const GraphStructure> structure, std::vector<NodeId> ids);

  const std::vector<NodeId>& ids() const noexcept { return ids_; }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  Eigen::Index dim() const noexcept { return dim_; }
  /// True when every node is real-valued.
  bool continuous() const noexcept { return continuous_; }

  Eigen::VectorXd flatten(const ModelState& state) const;
  Position position(const ModelState& state) const;
  /// Writes `theta` into the block and recomputes the dependent nodes.
  ModelState inject(const Eigen::VectorXd& theta, const ModelState& state) const;
  ModelState inject(const Position& position, const ModelState& state) const;

  Eigen::VectorXd gradient(const ModelState& state) const;
  /// Finite-difference Hessian of the log-probability w.r.t. the block.
  Eigen::MatrixXd hessian(const ModelState& state) const;

 private:
  std::shared_ptr<const GraphStructure> structure_;
  std::vector<NodeId> ids_;
  std::vector<std::size_t> indices_;
  std::vector<Shape> shapes_;
  std::vector<DType> dtypes_;
  std::vector<std::size_t> closure_;
  Eigen::Index dim_ = 0;
  bool continuous_ = true;
};

/// Pure view of a model for the engine and the kernels: log-probability,
/// position updates and block access. Immutable and thread-safe.
class ModelInterface {
 public:
  explicit ModelInterface(const ModelGraph& graph);

  double log_prob(const ModelState& state) const { return state.total_log_prob(); }
  ModelState update(const Position& position, const ModelState& state) const;
  Position extract(const std::vector<NodeId>& ids, const ModelState& state) const;

  std::shared_ptr<const PositionBlock> block(const std::vector<NodeId>& ids) const;

  /// Strong nodes with role Parameter, in topological order.
  std::vector<NodeId> parameter_ids() const;
  bool contains(const NodeId& id) const;
  NodeKind kind(const NodeId& id) const;
  Role role(const NodeId& id) const;

  const std::shared_ptr<const GraphStructure>& structure() const noexcept { return structure_; }

 private:
  std::shared_ptr<const GraphStructure> structure_;
};

}  // namespace greylag
