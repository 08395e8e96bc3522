#include "greylag/model_interface.hpp"

#include "greylag/errors.hpp"
#include "greylag/hessian.hpp"

namespace greylag {

PositionBlock::PositionBlock(std::shared_ptr<const GraphStructure> structure,
                             std::vector<NodeId> ids)
    : structure_(std::move(structure)), ids_(std::move(ids)) {
  for (const auto& id : ids_) {
    const std::size_t i = structure_->index(id);
    const auto& node = structure_->node(i);
    if (node.kind != NodeKind::Strong) throw WeakWriteError("position node '" + id + "' is weak");
    indices_.push_back(i);
    shapes_.push_back(node.shape);
    dtypes_.push_back(node.dtype);
    dim_ += Eigen::Index(shape_size(node.shape));
    continuous_ = continuous_ && node.dtype == DType::Real;
  }
  closure_ = structure_->update_closure(indices_);
}

Eigen::VectorXd PositionBlock::flatten(const ModelState& state) const {
  Eigen::VectorXd out(dim_);
  Eigen::Index offset = 0;
  for (std::size_t i : indices_) {
    const Value& v = state.value(i);
    out.segment(offset, Eigen::Index(v.size())) = v.vec();
    offset += Eigen::Index(v.size());
  }
  return out;
}

Position PositionBlock::position(const ModelState& state) const {
  Position out;
  for (std::size_t k = 0; k < ids_.size(); ++k) out.set(ids_[k], state.value(indices_[k]));
  return out;
}

ModelState PositionBlock::inject(const Eigen::VectorXd& theta, const ModelState& state) const {
  if (theta.size() != dim_) {
    throw ShapeError("block of dimension " + std::to_string(dim_) + " given a vector of size " +
                     std::to_string(theta.size()));
  }
  std::vector<Value> values;
  values.reserve(ids_.size());
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < ids_.size(); ++k) {
    const auto sz = Eigen::Index(shape_size(shapes_[k]));
    std::vector<double> data(theta.data() + offset, theta.data() + offset + sz);
    values.emplace_back(shapes_[k], std::move(data), dtypes_[k]);
    offset += sz;
  }
  std::vector<std::pair<std::size_t, const Value*>> writes;
  for (std::size_t k = 0; k < ids_.size(); ++k) writes.emplace_back(indices_[k], &values[k]);
  return structure_->apply(state, writes, closure_);
}

ModelState PositionBlock::inject(const Position& position, const ModelState& state) const {
  return structure_->apply(position, state);
}

Eigen::VectorXd PositionBlock::gradient(const ModelState& state) const {
  return structure_->gradient(state, indices_);
}

Eigen::MatrixXd PositionBlock::hessian(const ModelState& state) const {
  auto grad = [&](const Eigen::VectorXd& theta) { return gradient(inject(theta, state)); };
  return fd_hessian(grad, flatten(state));
}

ModelInterface::ModelInterface(const ModelGraph& graph) : structure_(graph.structure()) {}

ModelState ModelInterface::update(const Position& position, const ModelState& state) const {
  return structure_->apply(position, state);
}

Position ModelInterface::extract(const std::vector<NodeId>& ids, const ModelState& state) const {
  Position out;
  for (const auto& id : ids) out.set(id, state.value(id));
  return out;
}

std::shared_ptr<const PositionBlock> ModelInterface::block(const std::vector<NodeId>& ids) const {
  return std::make_shared<const PositionBlock>(structure_, ids);
}

std::vector<NodeId> ModelInterface::parameter_ids() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < structure_->size(); ++i) {
    const auto& node = structure_->node(i);
    if (node.kind == NodeKind::Strong && node.role == Role::Parameter) out.push_back(node.id);
  }
  return out;
}

bool ModelInterface::contains(const NodeId& id) const {
  return structure_->layout()->index.count(id) > 0;
}

NodeKind ModelInterface::kind(const NodeId& id) const {
  return structure_->node(structure_->index(id)).kind;
}

Role ModelInterface::role(const NodeId& id) const {
  return structure_->node(structure_->index(id)).role;
}

}  // namespace greylag
