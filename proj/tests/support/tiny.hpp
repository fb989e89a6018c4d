#pragma once

#include <algorithm>
#include <cstring>

#include "sgan/networks.hpp"

namespace sgan::testing {

/// Smallest configuration that still has two synthesis resolutions above the stylemap.
inline NetworkConfig tiny_config() {
  NetworkConfig c;
  c.image_size = 8;
  c.stylemap_hw = 2;
  c.stylemap_channels = 2;
  c.latent_dim = 3;
  c.mapping_layers = 3;
  c.mapping_hidden = 4;
  c.channels = {{2, 3}, {4, 3}, {8, 2}};
  c.mbstd_group = 2;
  return c;
}

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.ptr(), b.ptr(), sizeof(T) * static_cast<size_t>(a.numel())) == 0;
}

template <class T>
bool params_equal(const ParamList<T>& a, const ParamList<T>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!bit_equal(a[i].var.value(), b[i].var.value())) return false;
  return true;
}

/// 1x1 resizer convs that copy the first min(in, out) channels; pair with
/// resizer_kernel 1 and no activation.
template <class T>
void set_identity_resizer(StylemapResizer<T>& r) {
  for (auto& conv : r.convs) {
    Tensor<T>& w = conv.weight.mutable_value();
    w.fill(T(0));
    for (int i = 0; i < std::min(conv.out_channels(), conv.in_channels()); ++i) w.at(i, i, 0, 0) = T(1) / conv.scale;
    conv.bias.mutable_value().fill(T(0));
  }
}

}  // namespace sgan::testing
