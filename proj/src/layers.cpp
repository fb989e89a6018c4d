#include "sgan/layers.hpp"

namespace sgan {

namespace o = ops;

template <class T>
EqualLinear<T>::EqualLinear(int in_features, int out_features, T gain, Rng& rng, T bias_init)
    : weight(rng.normal_tensor<T>(Shape{out_features, in_features}), true),
      bias(Tensor<T>::full(Shape{1, out_features}, bias_init), true),
      scale(equalized_scale<T>(in_features, gain)) {}

template <class T>
Var<T> EqualLinear<T>::operator()(const Var<T>& x) const {
  return o::add(o::matmul(x, o::mul_scalar(weight, scale), false, true), bias);
}

template <class T>
void EqualLinear<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <class T>
EqualConv2d<T>::EqualConv2d(int in_channels, int out_channels, int kernel, T gain, Rng& rng, bool with_bias,
                            T bias_init)
    : weight(rng.normal_tensor<T>(Shape{out_channels, in_channels, kernel, kernel}), true),
      scale(equalized_scale<T>(in_channels * kernel * kernel, gain)) {
  if (kernel % 2 == 0) throw ConfigError("EqualConv2d: kernel size must be odd");
  if (with_bias) bias = Var<T>(Tensor<T>::full(Shape{1, out_channels, 1, 1}, bias_init), true);
}

template <class T>
Var<T> EqualConv2d<T>::operator()(const Var<T>& x) const {
  Var<T> y = o::conv2d(x, o::mul_scalar(weight, scale), kernel() / 2);
  return bias.defined() ? o::add(y, bias) : y;
}

template <class T>
void EqualConv2d<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template class EqualLinear<float>;
template class EqualLinear<double>;
template class EqualConv2d<float>;
template class EqualConv2d<double>;

}  // namespace sgan
