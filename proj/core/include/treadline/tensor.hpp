#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "treadline/error.hpp"

namespace treadline {

// Global NaN/Inf scanning toggle. Off by default; benchmarks must run with it
// off. When on, gemm/im2col and every layer forward/backward scan their
// output and throw NumericError on the first non-finite value.
bool checked_mode();
void set_checked_mode(bool on);

// Dense row-major N-d array. Value type: copy/move are deep, layers hand
// tensors around by value. All public kernels keep element count equal to
// the product of the extents.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(checked_numel(shape_)), T(0));
  }

  TensorT(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<int64_t>(data_.size()))
      throw ShapeError("tensor data length does not match shape");
  }

  static TensorT zeros(std::vector<int64_t> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int64_t> shape, T value) {
    TensorT t(std::move(shape));
    t.fill(value);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t extent(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Bounds-checked element access, used by tests and cold paths.
  T& at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  const T& at(std::initializer_list<int64_t> idx) const {
    return data_[static_cast<size_t>(offset(idx))];
  }

  int64_t offset(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank()) throw ShapeError("index rank mismatch");
    int64_t off = 0;
    int axis = 0;
    for (int64_t i : idx) {
      if (i < 0 || i >= shape_[static_cast<size_t>(axis)]) throw ShapeError("index out of range");
      off = off * shape_[static_cast<size_t>(axis)] + i;
      ++axis;
    }
    return off;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Reinterprets the extents; element count must be preserved.
  TensorT reshaped(std::vector<int64_t> shape) const {
    if (checked_numel(shape) != numel()) throw ShapeError("reshape changes element count");
    TensorT out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool all_finite() const;
  // Throws NumericError if any element is NaN/Inf; `where` names the op.
  void require_finite(const char* where) const;

  std::string shape_str() const;

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
      if (e <= 0) throw ShapeError("tensor extents must be positive");
      n *= e;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace treadline
