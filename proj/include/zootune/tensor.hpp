#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "zootune/errors.hpp"

namespace zootune {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major n-dimensional array. The single value carrier for
// activations, weights and gradients.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  // Identity matrix of the given side.
  static Tensor identity(int side) {
    Tensor t({side, side});
    for (int i = 0; i < side; ++i) t.data_[static_cast<std::size_t>(i) * side + i] = T(1);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  const T& operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  T& operator()(int n, int c, int h, int w) {
    return data_[offset4(n, c, h, w)];
  }
  const T& operator()(int n, int c, int h, int w) const {
    return data_[offset4(n, c, h, w)];
  }

  std::size_t offset4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Reinterprets the flat data with a new shape of equal element count.
  Tensor reshaped(std::vector<int> new_shape) const {
    if (checked_size(new_shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
  }

  // External-input gate: artifact boundary code calls this on anything read
  // from files or generators so NaN/Inf never enter the numeric core.
  void require_finite(const std::string& what) const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw ValueError("non-finite value in " + what);
      }
    }
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  static std::size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

}  // namespace zootune
