#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ear/error.hpp"

namespace ear::nn {

/// NCHW extent.
struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& s);

template <class T>
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape), data_(shape.count(), fill) {}
  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count())
      throw DimensionError("tensor data length does not match shape " + to_string(shape_));
  }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  /// Pointer to the start of plane (n, c).
  T* plane(int n, int c) { return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(); }
  const T* plane(int n, int c) const {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape4 shape_;
  std::vector<T> data_;
};

}  // namespace ear::nn
