#include "sgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sgan {

Shape::Shape(std::initializer_list<int> dims) : Shape(std::span<const int>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const int> dims) {
  if (dims.size() > kMaxRank) throw ShapeError("shape rank exceeds 4");
  rank_ = static_cast<int>(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 0) throw ShapeError("negative dimension");
    dims_[i] = dims[i];
  }
}

std::int64_t Shape::numel() const noexcept {
  std::int64_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<size_t>(i)];
  return n;
}

bool Shape::operator==(const Shape& o) const noexcept {
  if (rank_ != o.rank_) return false;
  for (int i = 0; i < rank_; ++i)
    if (dims_[static_cast<size_t>(i)] != o.dims_[static_cast<size_t>(i)]) return false;
  return true;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank_; ++i) {
    if (i) os << ',';
    os << dims_[static_cast<size_t>(i)];
  }
  os << ']';
  return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape), data_(static_cast<size_t>(shape.numel()), fill) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != shape_.numel())
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape s) const {
  if (s.numel() != shape_.numel()) throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
  Tensor out;
  out.shape_ = s;
  out.data_ = data_;
  return out;
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class T>
Tensor<T> Tensor<T>::slice_batch(int begin, int end) const {
  if (shape_.rank() < 1 || begin < 0 || end > shape_[0] || begin > end)
    throw ShapeError("slice_batch out of range on " + shape_.str());
  Shape s = shape_;
  s[0] = end - begin;
  const std::int64_t per = shape_[0] ? shape_.numel() / shape_[0] : 0;
  std::vector<T> d(data_.begin() + begin * per, data_.begin() + end * per);
  return Tensor(s, std::move(d));
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

template <class T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_batch of nothing");
  const Shape& first = parts[0].shape();
  Shape per_item = first;
  int total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = first;
    if (a.rank() != b.rank()) throw ShapeError("concat_batch rank mismatch");
    for (int i = 1; i < a.rank(); ++i)
      if (a[i] != b[i]) throw ShapeError("concat_batch shape mismatch " + a.str() + " vs " + b.str());
    total += a[0];
  }
  per_item[0] = total;
  std::vector<T> data;
  data.reserve(static_cast<size_t>(per_item.numel()));
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor<T>(per_item, std::move(data));
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch");
  T m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class T>
T mean_squared_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mean_squared_diff shape mismatch");
  if (a.numel() == 0) return T(0);
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return static_cast<T>(s / static_cast<double>(a.numel()));
}

template class Tensor<float>;
template class Tensor<double>;
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);
template Tensor<float> concat_batch(std::span<const Tensor<float>>);
template Tensor<double> concat_batch(std::span<const Tensor<double>>);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template float mean_squared_diff(const Tensor<float>&, const Tensor<float>&);
template double mean_squared_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace sgan
