#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace greylag {

using Shape = std::vector<std::size_t>;

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class DType { Real, Integer };

/// Dense row-major array of doubles with a fixed shape.
///
/// Integer arrays (discrete parameters) are stored as doubles holding
/// integral values and tagged with `DType::Integer`; they are exact up to
/// 2^53 and are excluded from gradient paths.
class Value {
 public:
  Value() : data_(1, 0.0) {}
  Value(Shape shape, std::vector<double> data, DType dtype = DType::Real);

  static Value scalar(double x) { return Value({}, {x}); }
  static Value integer(long x) { return Value({}, {double(x)}, DType::Integer); }
  static Value vector(std::vector<double> xs);
  static Value vector(const Eigen::VectorXd& xs);
  static Value vector(std::initializer_list<double> xs) { return vector(std::vector<double>(xs)); }
  static Value integers(std::vector<long> xs);
  static Value matrix(const Eigen::MatrixXd& m);
  static Value zeros(Shape shape, DType dtype = DType::Real);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  DType dtype() const noexcept { return dtype_; }
  bool is_integer() const noexcept { return dtype_ == DType::Integer; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Element `i` with size-1 broadcasting.
  double bcast(std::size_t i) const { return data_.size() == 1 ? data_[0] : data_[i]; }

  /// The single element of a size-1 value.
  double item() const;

  Eigen::Map<const Eigen::VectorXd> vec() const {
    return {data_.data(), Eigen::Index(data_.size())};
  }
  Eigen::Map<Eigen::VectorXd> vec() { return {data_.data(), Eigen::Index(data_.size())}; }

  /// Rank-2 view; throws ShapeError otherwise.
  Eigen::Map<const RowMatrix> mat() const;

  bool same_shape(const Value& other) const noexcept { return shape_ == other.shape_; }

  friend bool operator==(const Value& a, const Value& b) {
    return a.shape_ == b.shape_ && a.dtype_ == b.dtype_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::Real;
};

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

}  // namespace greylag
