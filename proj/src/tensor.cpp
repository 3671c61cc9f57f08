#include "biasloss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "biasloss/errors.hpp"

namespace biasloss {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType dtype_from_name(std::string_view name) {
  if (name == "f32") return DType::F32;
  if (name == "f64") return DType::F64;
  throw FormatError("unknown dtype '" + std::string(name) + "'");
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_)) {
  if (fill != T{0}) std::fill(data_.begin(), data_.end(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " holds " + std::to_string(shape_numel(shape_)) +
                     " elements but " + std::to_string(data_.size()) + " were given");
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
RowView<T> unfold(const Tensor<T>& t) {
  if (t.rank() != 4) throw ShapeError("unfold expects a rank-4 tensor, got " + shape_str(t.shape()));
  RowView<T> view;
  view.rows = t.dim(0);
  view.cols = t.dim(1) * t.dim(2) * t.dim(3);
  view.data = t.data();
  return view;
}

template class Tensor<float>;
template class Tensor<double>;
template RowView<float> unfold(const Tensor<float>&);
template RowView<double> unfold(const Tensor<double>&);

}  // namespace biasloss
