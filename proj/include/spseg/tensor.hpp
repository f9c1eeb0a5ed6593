#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace spseg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Thrown when operand extents do not satisfy an operator's shape contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for invalid operator or component configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
Index shape_numel(const Shape& shape);

/// Dense row-major n-dimensional array. Storage is a contiguous Eigen array,
/// so any slice of trailing dimensions can be mapped as an Eigen matrix.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(shape_numel(shape_))) {}
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(Array::Constant(shape_numel(shape_), fill)) {}
  Tensor(Shape shape, std::initializer_list<Scalar> values);
  Tensor(Shape shape, Array values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value) { return Tensor(std::move(shape), value); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Multi-index access; the index count must equal rank().
  template <typename... Ix>
  Scalar& operator()(Ix... ix) { return data_[offset({static_cast<Index>(ix)...})]; }
  template <typename... Ix>
  Scalar operator()(Ix... ix) const { return data_[offset({static_cast<Index>(ix)...})]; }

  Index offset(std::initializer_list<Index> ix) const;

  /// View of the storage as a rows x cols row-major matrix starting at `start`.
  MatrixMap matrix(Index rows, Index cols, Index start = 0) { return MatrixMap(data_.data() + start, rows, cols); }
  ConstMatrixMap matrix(Index rows, Index cols, Index start = 0) const {
    return ConstMatrixMap(data_.data() + start, rows, cols);
  }

  Tensor reshaped(Shape shape) const;

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape shape_;
  Array data_;
};

template <typename Scalar>
bool same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape();
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace spseg
