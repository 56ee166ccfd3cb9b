#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "specmix/error.hpp"

namespace specmix {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape);

/// Dense row-major array. Rank 0 (empty shape) holds one scalar.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T(0)) {}
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " +
                       std::to_string(shape_numel(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T item() const { return data_.at(0); }

  /// Same data, different extents; total size must match.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace specmix
