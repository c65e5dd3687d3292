#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "adnf/errors.hpp"

namespace adnf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

// Contiguous row-major array. Rank-2 arrays are the common case; higher ranks
// are viewed as rows() x cols() with cols() the product of trailing dims.
template <typename T>
class DenseArray {
 public:
  using value_type = T;

  DenseArray() = default;

  explicit DenseArray(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  DenseArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(shape_size(shape_) == data_.size(),
            "DenseArray: shape " + shape_string(shape_) + " does not match " +
                std::to_string(data_.size()) + " values");
  }

  static DenseArray matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    return DenseArray({rows, cols}, fill);
  }

  static DenseArray scalar(T value) { return DenseArray({1}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  T item() const {
    require(data_.size() == 1, "DenseArray::item on array of shape " + shape_string(shape_));
    return data_[0];
  }

  DenseArray reshaped(Shape shape) const& {
    DenseArray out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  DenseArray reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    require(shape_size(shape) == data_.size(),
            "reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    shape_ = std::move(shape);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  DenseArray<U> cast() const {
    return DenseArray<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const DenseArray& a, const DenseArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool same_shape(const DenseArray<T>& a, const DenseArray<T>& b) {
  return a.shape() == b.shape();
}

}  // namespace adnf
