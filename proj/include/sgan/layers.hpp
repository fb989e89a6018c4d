#pragma once

#include <string>
#include <vector>

#include "sgan/ops.hpp"
#include "sgan/rng.hpp"

namespace sgan {

using ag::Var;

/// Named trainable tensor. Copies share the underlying graph leaf.
template <class T>
struct Param {
  std::string name;
  Var<T> var;
};

template <class T>
using ParamList = std::vector<Param<T>>;

/// Runtime weight multiplier for equalized learning rate: gain / sqrt(fan_in).
template <class T>
T equalized_scale(int fan_in, T gain) {
  if (fan_in <= 0) throw ConfigError("equalized_scale: fan_in must be positive");
  return gain / std::sqrt(static_cast<T>(fan_in));
}

/// Fully connected layer with unit-normal weights scaled at runtime.
template <class T>
class EqualLinear {
 public:
  EqualLinear() = default;
  EqualLinear(int in_features, int out_features, T gain, Rng& rng, T bias_init = T(0));

  /// x [N, in] -> [N, out]
  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Var<T> weight;  // [out, in]
  Var<T> bias;    // [1, out]
  T scale = T(1);
};

/// Stride-1 "same" convolution with equalized learning rate.
template <class T>
class EqualConv2d {
 public:
  EqualConv2d() = default;
  EqualConv2d(int in_channels, int out_channels, int kernel, T gain, Rng& rng, bool with_bias = true,
              T bias_init = T(0));

  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  int in_channels() const { return weight.shape()[1]; }
  int out_channels() const { return weight.shape()[0]; }
  int kernel() const { return weight.shape()[2]; }

  Var<T> weight;  // [Co, Ci, k, k]
  Var<T> bias;    // [1, Co, 1, 1] or undefined
  T scale = T(1);
};

extern template class EqualLinear<float>;
extern template class EqualLinear<double>;
extern template class EqualConv2d<float>;
extern template class EqualConv2d<double>;

}  // namespace sgan
