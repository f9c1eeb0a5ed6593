#include "spseg/tensor.hpp"

#include <sstream>

namespace spseg {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
  if (static_cast<Index>(values.size()) != shape_numel(shape_))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + to_string(shape_));
  data_.resize(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) data_[i++] = v;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " + to_string(shape_));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Index Tensor<Scalar>::offset(std::initializer_list<Index> ix) const {
  if (static_cast<Index>(ix.size()) != rank())
    throw ShapeError("index rank " + std::to_string(ix.size()) + " does not match shape " + to_string(shape_));
  Index off = 0;
  std::size_t a = 0;
  for (Index i : ix) {
    const Index extent = shape_[a++];
    if (i < 0 || i >= extent) throw ShapeError("index out of range for shape " + to_string(shape_));
    off = off * extent + i;
  }
  return off;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (shape_numel(shape) != size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace spseg
