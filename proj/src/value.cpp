#include "greylag/value.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "greylag/errors.hpp"

namespace greylag {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Value::Value(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("value of shape " + shape_to_string(shape_) + " given " +
                     std::to_string(data_.size()) + " elements");
  }
  if (dtype_ == DType::Integer) {
    for (double x : data_) {
      if (x != std::floor(x)) throw ShapeError("integer value holds a non-integral element");
    }
  }
}

Value Value::vector(std::vector<double> xs) {
  Shape shape{xs.size()};
  return Value(std::move(shape), std::move(xs));
}

Value Value::vector(const Eigen::VectorXd& xs) {
  return vector(std::vector<double>(xs.data(), xs.data() + xs.size()));
}

Value Value::integers(std::vector<long> xs) {
  std::vector<double> data(xs.begin(), xs.end());
  Shape shape{xs.size()};
  return Value(std::move(shape), std::move(data), DType::Integer);
}

Value Value::matrix(const Eigen::MatrixXd& m) {
  std::vector<double> data(std::size_t(m.size()));
  Eigen::Map<RowMatrix>(data.data(), m.rows(), m.cols()) = m;
  return Value({std::size_t(m.rows()), std::size_t(m.cols())}, std::move(data));
}

Value Value::zeros(Shape shape, DType dtype) {
  const std::size_t n = shape_size(shape);
  return Value(std::move(shape), std::vector<double>(n, 0.0), dtype);
}

double Value::item() const {
  if (data_.size() != 1) {
    throw ShapeError("expected a single element, got shape " + shape_to_string(shape_));
  }
  return data_[0];
}

Eigen::Map<const RowMatrix> Value::mat() const {
  if (shape_.size() != 2) {
    throw ShapeError("expected a matrix, got shape " + shape_to_string(shape_));
  }
  return {data_.data(), Eigen::Index(shape_[0]), Eigen::Index(shape_[1])};
}

}  // namespace greylag
