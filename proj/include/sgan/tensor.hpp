#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sgan/error.hpp"

namespace sgan {

/// Dense shape of rank 0..4. Image tensors are NCHW.
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<int> dims);
  explicit Shape(std::span<const int> dims);

  int rank() const noexcept { return rank_; }
  int operator[](int i) const noexcept { return dims_[static_cast<size_t>(i)]; }
  int& operator[](int i) noexcept { return dims_[static_cast<size_t>(i)]; }
  std::int64_t numel() const noexcept;
  std::span<const int> dims() const noexcept { return {dims_.data(), static_cast<size_t>(rank_)}; }

  bool operator==(const Shape& o) const noexcept;
  bool operator!=(const Shape& o) const noexcept { return !(*this == o); }

  std::string str() const;

 private:
  std::array<int, kMaxRank> dims_{};
  int rank_ = 0;
};

/// Contiguous row-major tensor with value semantics.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape s) { return Tensor(s, T(0)); }
  static Tensor ones(Shape s) { return Tensor(s, T(1)); }
  static Tensor full(Shape s, T v) { return Tensor(s, v); }

  const Shape& shape() const noexcept { return shape_; }
  int dim(int i) const noexcept { return shape_[i]; }
  int rank() const noexcept { return shape_.rank(); }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::int64_t i) noexcept { return data_[static_cast<size_t>(i)]; }
  const T& operator[](std::int64_t i) const noexcept { return data_[static_cast<size_t>(i)]; }

  /// NCHW element access; requires rank 4.
  T& at(int n, int c, int h, int w) noexcept { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const noexcept { return data_[offset(n, c, h, w)]; }

  Tensor reshaped(Shape s) const;
  void fill(T v);

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  /// Copy of sample range [begin, end) along the leading dimension.
  Tensor slice_batch(int begin, int end) const;

 private:
  size_t offset(int n, int c, int h, int w) const noexcept {
    return ((static_cast<size_t>(n) * static_cast<size_t>(shape_[1]) + static_cast<size_t>(c)) *
                static_cast<size_t>(shape_[2]) +
            static_cast<size_t>(h)) *
               static_cast<size_t>(shape_[3]) +
           static_cast<size_t>(w);
  }

  Shape shape_;
  std::vector<T> data_;
};

template <class T>
bool all_finite(const Tensor<T>& t);

/// Stack equally-shaped tensors along a new leading batch dimension, or
/// concatenate along an existing leading dimension of size 1.
template <class T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts);

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
T mean_squared_diff(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace sgan
