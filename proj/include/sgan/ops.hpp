#pragma once

// Differentiable tensor operations. Binary elementwise ops broadcast over
// equal-rank shapes where each dimension either matches or is 1.

#include "sgan/autograd.hpp"

namespace sgan::ops {

using ag::Var;

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> neg(const Var<T>& a);
template <class T>
Var<T> add_scalar(const Var<T>& a, T s);
template <class T>
Var<T> mul_scalar(const Var<T>& a, T s);
/// a^p elementwise (a > 0 where p is non-integer).
template <class T>
Var<T> pow_scalar(const Var<T>& a, T p);

/// Reduce by summation onto `shape` (each target dim is 1 or matches).
template <class T>
Var<T> sum_to(const Var<T>& a, Shape shape);
template <class T>
Var<T> broadcast_to(const Var<T>& a, Shape shape);
/// Sum of all entries, shape [1].
template <class T>
Var<T> sum(const Var<T>& a);
/// Mean of all entries, shape [1].
template <class T>
Var<T> mean(const Var<T>& a);
template <class T>
Var<T> reshape(const Var<T>& a, Shape shape);

/// 2-D matrix product op(a) * op(b).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);

/// Stride-1 2-D convolution (cross-correlation), x [N,Ci,H,W], w [Co,Ci,k,k],
/// zero padding `pad` on each side.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int pad);
/// Adjoint of conv2d with respect to its input.
template <class T>
Var<T> conv2d_input_grad(const Var<T>& grad_out, const Var<T>& w, Shape input_shape, int pad);
/// Adjoint of conv2d with respect to its weight.
template <class T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& grad_out, Shape weight_shape, int pad);

/// Nearest-neighbour 2x upsampling of NCHW.
template <class T>
Var<T> upsample2x(const Var<T>& x);
/// Non-overlapping 2x2 sum pooling of NCHW (adjoint of upsample2x).
template <class T>
Var<T> sum_pool2x(const Var<T>& x);
template <class T>
Var<T> avg_pool2x(const Var<T>& x);

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope);
/// log(1 + exp(x)), overflow-safe.
template <class T>
Var<T> softplus(const Var<T>& x);
template <class T>
Var<T> sigmoid(const Var<T>& x);

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> slice_channels(const Var<T>& x, int begin, int end);
/// Embed x into `total` channels starting at `begin`, zeros elsewhere.
template <class T>
Var<T> pad_channels(const Var<T>& x, int begin, int total);

template <class T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

/// Broadcast shape of two equal-rank shapes; throws ShapeError otherwise.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace sgan::ops
