#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adk/error.hpp"

namespace adk {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Cache-line aligned storage. Vectorized kernels peel unaligned heads with scalar code,
/// so a fixed alignment keeps results independent of where the allocator put a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

/// Dense row-major array. Images and feature maps are H x W x C with the channel
/// index varying fastest; kernel fields are h x w x Ch x k x k.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_extents();
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data holds " + std::to_string(data_.size()) +
                       " elements, shape " + adk::to_string(shape_) + " needs " +
                       std::to_string(element_count(shape_)));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() & noexcept { return data_; }
  std::span<const T> values() const& noexcept { return data_; }
  std::span<const T> values() && = delete;  // would dangle

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-3 (H x W x C) element access.
  T& operator()(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  const T& operator()(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + adk::to_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + adk::to_string(shape_) + " to " + adk::to_string(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw ShapeError("zero extent in shape " + adk::to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T, AlignedAllocator<T>> data_;
};

template <class T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

/// Index into [0, n) after mirror reflection about the edge pixels (edge not duplicated).
/// Repeats the reflection for offsets that overshoot by more than one image width.
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace adk
