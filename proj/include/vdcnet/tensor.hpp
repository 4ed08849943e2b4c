#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <boost/align/aligned_allocator.hpp>

#include "vdcnet/errors.hpp"

namespace vdcnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Cache-line aligned storage. Vectorized reductions peel according to the
// buffer address, so a fixed alignment keeps results bit-identical across runs.
template <class T>
using Buffer = std::vector<T, boost::alignment::aligned_allocator<T, 64>>;

// Dense row-major n-dimensional array. Images use (N, C, H, W).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, Buffer<T> data);
  Tensor(Shape shape, const std::vector<T>& data);
  Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), Buffer<T>(data)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  Buffer<T>& storage() noexcept { return data_; }
  const Buffer<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-D accessor for (N, C, H, W) tensors.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T value);
  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  template <class U>
  Tensor<U> cast() const {
    Buffer<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  Buffer<T> data_;
};

// Raises NumericError naming `what` if any element is NaN or infinite.
template <class T>
void require_finite(const Tensor<T>& t, const std::string& what);

// Throws ShapeError unless `t` is 4-D.
template <class T>
void require_nchw(const Tensor<T>& t, const char* op);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace vdcnet
