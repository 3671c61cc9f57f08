#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace biasloss {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType { F32, F64 };

std::string_view dtype_name(DType dtype);
DType dtype_from_name(std::string_view name);

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::F32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::F64;
}

/// Dense row-major array. Scalars are rank-0 tensors (empty shape, one element).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Value of a one-element tensor.
  T item() const;

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Zero-copy [b, c*h*w] view over a rank-4 tensor.
template <typename T>
struct RowView {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const T> data;

  std::span<const T> row(std::size_t i) const { return data.subspan(i * cols, cols); }
};

template <typename T>
RowView<T> unfold(const Tensor<T>& t);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace biasloss
