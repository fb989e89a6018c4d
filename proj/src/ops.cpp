#include "sgan/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "sgan/simd/kernels.hpp"

namespace sgan::ops {
namespace {

using Dims4 = std::array<int, 4>;

Dims4 pad4(const Shape& s) {
  Dims4 d{1, 1, 1, 1};
  const int off = 4 - s.rank();
  for (int i = 0; i < s.rank(); ++i) d[static_cast<size_t>(off + i)] = s[i];
  return d;
}

// Contiguous strides of `src`, with 0 on dimensions broadcast to `out`.
std::array<std::int64_t, 4> bstrides(const Dims4& src, const Dims4& out) {
  std::array<std::int64_t, 4> st{};
  std::int64_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    const auto u = static_cast<size_t>(i);
    st[u] = (src[u] == 1 && out[u] != 1) ? 0 : acc;
    acc *= src[u];
  }
  return st;
}

template <class T, class F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(os);
  const Dims4 o4 = pad4(os);
  const auto sa = bstrides(pad4(a.shape()), o4);
  const auto sb = bstrides(pad4(b.shape()), o4);
  T* po = out.ptr();
  for (int i0 = 0; i0 < o4[0]; ++i0)
    for (int i1 = 0; i1 < o4[1]; ++i1)
      for (int i2 = 0; i2 < o4[2]; ++i2) {
        const T* pa = a.ptr() + i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
        const T* pb = b.ptr() + i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
        const std::int64_t s3a = sa[3], s3b = sb[3];
        for (int i3 = 0; i3 < o4[3]; ++i3) *po++ = f(pa[i3 * s3a], pb[i3 * s3b]);
      }
  return out;
}

template <class T>
Tensor<T> sum_to_raw(const Tensor<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (target.rank() != x.rank()) throw ShapeError("sum_to rank mismatch " + x.shape().str() + " -> " + target.str());
  for (int i = 0; i < target.rank(); ++i)
    if (target[i] != 1 && target[i] != x.shape()[i])
      throw ShapeError("sum_to incompatible " + x.shape().str() + " -> " + target.str());
  Tensor<T> out(target);
  const Dims4 x4 = pad4(x.shape());
  const auto so = bstrides(pad4(target), x4);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int i0 = 0; i0 < x4[0]; ++i0)
    for (int i1 = 0; i1 < x4[1]; ++i1)
      for (int i2 = 0; i2 < x4[2]; ++i2) {
        T* o = po + i0 * so[0] + i1 * so[1] + i2 * so[2];
        if (so[3] == 0) {
          T s = 0;
          for (int i3 = 0; i3 < x4[3]; ++i3) s += px[i3];
          *o += s;
        } else {
          for (int i3 = 0; i3 < x4[3]; ++i3) o[i3] += px[i3];
        }
        px += x4[3];
      }
  return out;
}

template <class T>
Tensor<T> broadcast_to_raw(const Tensor<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (broadcast_shape(x.shape(), target) != target)
    throw ShapeError("broadcast_to incompatible " + x.shape().str() + " -> " + target.str());
  Tensor<T> out(target);
  const Dims4 o4 = pad4(target);
  const auto sx = bstrides(pad4(x.shape()), o4);
  T* po = out.ptr();
  for (int i0 = 0; i0 < o4[0]; ++i0)
    for (int i1 = 0; i1 < o4[1]; ++i1)
      for (int i2 = 0; i2 < o4[2]; ++i2) {
        const T* px = x.ptr() + i0 * sx[0] + i1 * sx[1] + i2 * sx[2];
        for (int i3 = 0; i3 < o4[3]; ++i3) *po++ = px[i3 * sx[3]];
      }
  return out;
}

template <class T, class F>
Tensor<T> map_unary(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  const T* pa = a.ptr();
  T* po = out.ptr();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

void require_rank(const Shape& s, int r, const char* what) {
  if (s.rank() != r) throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " + s.str());
}

struct ConvGeom {
  int n, ci, h, w, co, k, pad, ho, wo;
  int kk() const { return ci * k * k; }
  int hw_out() const { return ho * wo; }
  bool pointwise() const { return k == 1 && pad == 0; }
};

ConvGeom conv_geom(const Shape& x, const Shape& w, int pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (w[1] != x[1]) throw ShapeError("conv2d channel mismatch: input " + x.str() + " weight " + w.str());
  if (w[2] != w[3]) throw ShapeError("conv2d expects square kernels");
  ConvGeom g{x[0], x[1], x[2], x[3], w[0], w[2], pad, x[2] + 2 * pad - w[2] + 1, x[3] + 2 * pad - w[2] + 1};
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d output would be empty");
  return g;
}

// Output columns [lo, hi) of a kernel tap at horizontal offset kj read
// inside the input row.
inline void valid_cols(const ConvGeom& g, int kj, int& lo, int& hi) {
  lo = std::max(0, g.pad - kj);
  hi = std::min(g.wo, g.w + g.pad - kj);
  if (hi < lo) hi = lo;
}

// col [ci*k*k, ho*wo]
template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int hw = g.hw_out();
  for (int c = 0; c < g.ci; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        T* row = col + static_cast<std::int64_t>((c * g.k + ki) * g.k + kj) * hw;
        const T* xc = x + static_cast<std::int64_t>(c) * g.h * g.w;
        int lo, hi;
        valid_cols(g, kj, lo, hi);
        const int shift = kj - g.pad;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh + ki - g.pad;
          T* r = row + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(r, r + g.wo, T(0));
            continue;
          }
          const T* xr = xc + ih * g.w;
          std::fill(r, r + lo, T(0));
          std::copy(xr + lo + shift, xr + hi + shift, r + lo);
          std::fill(r + hi, r + g.wo, T(0));
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  const int hw = g.hw_out();
  for (int c = 0; c < g.ci; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        const T* row = col + static_cast<std::int64_t>((c * g.k + ki) * g.k + kj) * hw;
        T* xc = x + static_cast<std::int64_t>(c) * g.h * g.w;
        int lo, hi;
        valid_cols(g, kj, lo, hi);
        const int shift = kj - g.pad;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh + ki - g.pad;
          if (ih < 0 || ih >= g.h) continue;
          const T* r = row + oh * g.wo;
          T* xr = xc + ih * g.w;
          for (int ow = lo; ow < hi; ++ow) xr[ow + shift] += r[ow];
        }
      }
}

template <class T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <class T>
Tensor<T> conv_forward_raw(const Tensor<T>& x, const Tensor<T>& w, int pad) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), pad);
  Tensor<T> y(Shape{g.n, g.co, g.ho, g.wo});
  const std::int64_t xs = static_cast<std::int64_t>(g.ci) * g.h * g.w;
  const std::int64_t ys = static_cast<std::int64_t>(g.co) * g.hw_out();
  auto& col = scratch<T>();
  if (!g.pointwise()) col.resize(static_cast<size_t>(g.kk()) * static_cast<size_t>(g.hw_out()));
  for (int n = 0; n < g.n; ++n) {
    const T* src = x.ptr() + n * xs;
    if (!g.pointwise()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    simd::kernels<T>().gemm(g.co, g.hw_out(), g.kk(), T(1), w.ptr(), g.kk(), src, g.hw_out(), T(0), y.ptr() + n * ys,
                            g.hw_out());
  }
  return y;
}

template <class T>
Tensor<T> conv_input_grad_raw(const Tensor<T>& gy, const Tensor<T>& w, const Shape& xshape, int pad) {
  const ConvGeom g = conv_geom(xshape, w.shape(), pad);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo}) throw ShapeError("conv2d_input_grad: grad shape " + gy.shape().str());
  Tensor<T> gx(xshape);
  const std::int64_t xs = static_cast<std::int64_t>(g.ci) * g.h * g.w;
  const std::int64_t ys = static_cast<std::int64_t>(g.co) * g.hw_out();
  // wt [kk, co]
  std::vector<T> wt(static_cast<size_t>(g.kk()) * static_cast<size_t>(g.co));
  for (int o = 0; o < g.co; ++o)
    for (int p = 0; p < g.kk(); ++p) wt[static_cast<size_t>(p) * g.co + o] = w[static_cast<std::int64_t>(o) * g.kk() + p];
  auto& col = scratch<T>();
  if (!g.pointwise()) col.resize(static_cast<size_t>(g.kk()) * static_cast<size_t>(g.hw_out()));
  for (int n = 0; n < g.n; ++n) {
    T* dst = g.pointwise() ? gx.ptr() + n * xs : col.data();
    simd::kernels<T>().gemm(g.kk(), g.hw_out(), g.co, T(1), wt.data(), g.co, gy.ptr() + n * ys, g.hw_out(), T(0), dst,
                            g.hw_out());
    if (!g.pointwise()) col2im_add(col.data(), g, gx.ptr() + n * xs);
  }
  return gx;
}

// Accumulates gw^T [kk, co] += col [kk, hw] * gy_n^T [hw, co] so the long
// spatial axis is the GEMM reduction and nothing large gets transposed.
template <class T>
Tensor<T> conv_weight_grad_raw(const Tensor<T>& x, const Tensor<T>& gy, const Shape& wshape, int pad) {
  const ConvGeom g = conv_geom(x.shape(), wshape, pad);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo})
    throw ShapeError("conv2d_weight_grad: grad shape " + gy.shape().str());
  const int hw = g.hw_out(), kk = g.kk();
  const std::int64_t xs = static_cast<std::int64_t>(g.ci) * g.h * g.w;
  const std::int64_t ys = static_cast<std::int64_t>(g.co) * hw;
  std::vector<T> gyt(static_cast<size_t>(hw) * static_cast<size_t>(g.co));
  std::vector<T> gwt(static_cast<size_t>(kk) * static_cast<size_t>(g.co), T(0));
  auto& col = scratch<T>();
  if (!g.pointwise()) col.resize(static_cast<size_t>(kk) * static_cast<size_t>(hw));
  for (int n = 0; n < g.n; ++n) {
    const T* gyn = gy.ptr() + n * ys;
    for (int o = 0; o < g.co; ++o)
      for (int p = 0; p < hw; ++p) gyt[static_cast<size_t>(p) * g.co + o] = gyn[static_cast<std::int64_t>(o) * hw + p];
    const T* src = x.ptr() + n * xs;
    if (!g.pointwise()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    simd::kernels<T>().gemm(kk, g.co, hw, T(1), src, hw, gyt.data(), g.co, T(1), gwt.data(), g.co);
  }
  Tensor<T> gw(wshape);
  for (int o = 0; o < g.co; ++o)
    for (int p = 0; p < kk; ++p) gw[static_cast<std::int64_t>(o) * kk + p] = gwt[static_cast<size_t>(p) * g.co + o];
  return gw;
}

template <class T>
Tensor<T> upsample_raw(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "upsample2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y(Shape{n, c, 2 * h, 2 * w});
  const T* px = x.ptr();
  T* py = y.ptr();
  for (int p = 0; p < n * c; ++p)
    for (int i = 0; i < h; ++i) {
      T* r0 = py + (static_cast<std::int64_t>(p) * 2 * h + 2 * i) * 2 * w;
      T* r1 = r0 + 2 * w;
      const T* src = px + (static_cast<std::int64_t>(p) * h + i) * w;
      for (int j = 0; j < w; ++j) r0[2 * j] = r0[2 * j + 1] = r1[2 * j] = r1[2 * j + 1] = src[j];
    }
  return y;
}

template <class T>
Tensor<T> sum_pool_raw(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "sum_pool2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("sum_pool2x needs even spatial size, got " + x.shape().str());
  const int ho = h / 2, wo = w / 2;
  Tensor<T> y(Shape{n, c, ho, wo});
  const T* px = x.ptr();
  T* py = y.ptr();
  for (int p = 0; p < n * c; ++p)
    for (int i = 0; i < ho; ++i) {
      const T* r0 = px + (static_cast<std::int64_t>(p) * h + 2 * i) * w;
      const T* r1 = r0 + w;
      T* dst = py + (static_cast<std::int64_t>(p) * ho + i) * wo;
      for (int j = 0; j < wo; ++j) dst[j] = r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1];
    }
  return y;
}

template <class T>
T softplus_scalar(T v) {
  return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <class T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> channel_copy(const Tensor<T>& src, int src_begin, int count, Shape dst_shape, int dst_begin) {
  Tensor<T> out(dst_shape);
  const int n = src.dim(0), hw = src.dim(2) * src.dim(3);
  const int sc = src.dim(1), dc = dst_shape[1];
  for (int b = 0; b < n; ++b)
    std::copy_n(src.ptr() + (static_cast<std::int64_t>(b) * sc + src_begin) * hw, static_cast<std::int64_t>(count) * hw,
                out.ptr() + (static_cast<std::int64_t>(b) * dc + dst_begin) * hw);
  return out;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.rank() != b.rank()) throw ShapeError("broadcast rank mismatch " + a.str() + " vs " + b.str());
  Shape out = a;
  for (int i = 0; i < a.rank(); ++i) {
    if (a[i] == b[i]) continue;
    if (a[i] == 1)
      out[i] = b[i];
    else if (b[i] != 1)
      throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
  }
  return out;
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> v = broadcast_binary(a.value(), b.value(), [](T x, T y) { return x + y; });
  const Shape sa = a.shape(), sb = b.shape();
  return ag::make_result<T>(std::move(v), "add", {a, b}, [sa, sb](const Var<T>& g, std::span<const bool> need) {
    return std::vector<Var<T>>{need[0] ? sum_to(g, sa) : Var<T>(), need[1] ? sum_to(g, sb) : Var<T>()};
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tensor<T> v = broadcast_binary(a.value(), b.value(), [](T x, T y) { return x - y; });
  const Shape sa = a.shape(), sb = b.shape();
  return ag::make_result<T>(std::move(v), "sub", {a, b}, [sa, sb](const Var<T>& g, std::span<const bool> need) {
    return std::vector<Var<T>>{need[0] ? sum_to(g, sa) : Var<T>(), need[1] ? neg(sum_to(g, sb)) : Var<T>()};
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> v = broadcast_binary(a.value(), b.value(), [](T x, T y) { return x * y; });
  return ag::make_result<T>(std::move(v), "mul", {a, b}, [a, b](const Var<T>& g, std::span<const bool> need) {
    return std::vector<Var<T>>{need[0] ? sum_to(mul(g, b), a.shape()) : Var<T>(),
                               need[1] ? sum_to(mul(g, a), b.shape()) : Var<T>()};
  });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return mul_scalar(a, T(-1));
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> v = map_unary(a.value(), [s](T x) { return x + s; });
  return ag::make_result<T>(std::move(v), "add_scalar", {a},
                            [](const Var<T>& g, std::span<const bool>) { return std::vector<Var<T>>{g}; });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  Tensor<T> v = map_unary(a.value(), [s](T x) { return x * s; });
  return ag::make_result<T>(std::move(v), "mul_scalar", {a}, [s](const Var<T>& g, std::span<const bool>) {
    return std::vector<Var<T>>{mul_scalar(g, s)};
  });
}

template <class T>
Var<T> pow_scalar(const Var<T>& a, T p) {
  Tensor<T> v = map_unary(a.value(), [p](T x) { return std::pow(x, p); });
  return ag::make_result<T>(std::move(v), "pow", {a}, [a, p](const Var<T>& g, std::span<const bool>) {
    return std::vector<Var<T>>{mul(g, mul_scalar(pow_scalar(a, p - T(1)), p))};
  });
}

template <class T>
Var<T> sum_to(const Var<T>& a, Shape shape) {
  if (a.shape() == shape) return a;
  const Shape src = a.shape();
  return ag::make_result<T>(sum_to_raw(a.value(), shape), "sum_to", {a},
                            [src](const Var<T>& g, std::span<const bool>) {
                              return std::vector<Var<T>>{broadcast_to(g, src)};
                            });
}

template <class T>
Var<T> broadcast_to(const Var<T>& a, Shape shape) {
  if (a.shape() == shape) return a;
  const Shape src = a.shape();
  return ag::make_result<T>(broadcast_to_raw(a.value(), shape), "broadcast_to", {a},
                            [src](const Var<T>& g, std::span<const bool>) {
                              return std::vector<Var<T>>{sum_to(g, src)};
                            });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  std::array<int, 4> ones{1, 1, 1, 1};
  const Shape reduced(std::span<const int>(ones.data(), static_cast<size_t>(a.shape().rank())));
  return reshape(sum_to(a, reduced), Shape{1});
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(std::max<std::int64_t>(a.value().numel(), 1)));
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (a.shape() == shape) return a;
  const Shape src = a.shape();
  return ag::make_result<T>(a.value().reshaped(shape), "reshape", {a}, [src](const Var<T>& g, std::span<const bool>) {
    return std::vector<Var<T>>{reshape(g, src)};
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  const int m = ta ? a.shape()[1] : a.shape()[0];
  const int k = ta ? a.shape()[0] : a.shape()[1];
  const int kb = tb ? b.shape()[1] : b.shape()[0];
  const int n = tb ? b.shape()[0] : b.shape()[1];
  if (k != kb) throw ShapeError("matmul inner dimension mismatch " + a.shape().str() + " x " + b.shape().str());
  Tensor<T> out(Shape{m, n});
  simd::gemm<T>(ta, tb, m, n, k, T(1), a.value().ptr(), a.shape()[1], b.value().ptr(), b.shape()[1], T(0), out.ptr(),
                n);
  return ag::make_result<T>(std::move(out), "matmul", {a, b},
                            [a, b, ta, tb](const Var<T>& g, std::span<const bool> need) {
                              Var<T> ga, gb;
                              if (!ta && !tb) {
                                if (need[0]) ga = matmul(g, b, false, true);
                                if (need[1]) gb = matmul(a, g, true, false);
                              } else if (!ta && tb) {
                                if (need[0]) ga = matmul(g, b, false, false);
                                if (need[1]) gb = matmul(g, a, true, false);
                              } else if (ta && !tb) {
                                if (need[0]) ga = matmul(b, g, false, true);
                                if (need[1]) gb = matmul(a, g, false, false);
                              } else {
                                if (need[0]) ga = matmul(b, g, true, true);
                                if (need[1]) gb = matmul(g, a, true, true);
                              }
                              return std::vector<Var<T>>{ga, gb};
                            });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int pad) {
  return ag::make_result<T>(conv_forward_raw(x.value(), w.value(), pad), "conv2d", {x, w},
                            [x, w, pad](const Var<T>& g, std::span<const bool> need) {
                              return std::vector<Var<T>>{
                                  need[0] ? conv2d_input_grad(g, w, x.shape(), pad) : Var<T>(),
                                  need[1] ? conv2d_weight_grad(x, g, w.shape(), pad) : Var<T>()};
                            });
}

template <class T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, Shape input_shape, int pad) {
  return ag::make_result<T>(conv_input_grad_raw(gy.value(), w.value(), input_shape, pad), "conv2d_input_grad", {gy, w},
                            [gy, w, pad](const Var<T>& u, std::span<const bool> need) {
                              return std::vector<Var<T>>{
                                  need[0] ? conv2d(u, w, pad) : Var<T>(),
                                  need[1] ? conv2d_weight_grad(u, gy, w.shape(), pad) : Var<T>()};
                            });
}

template <class T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, Shape weight_shape, int pad) {
  return ag::make_result<T>(conv_weight_grad_raw(x.value(), gy.value(), weight_shape, pad), "conv2d_weight_grad",
                            {x, gy}, [x, gy, pad](const Var<T>& u, std::span<const bool> need) {
                              return std::vector<Var<T>>{
                                  need[0] ? conv2d_input_grad(gy, u, x.shape(), pad) : Var<T>(),
                                  need[1] ? conv2d(x, u, pad) : Var<T>()};
                            });
}

template <class T>
Var<T> upsample2x(const Var<T>& x) {
  return ag::make_result<T>(upsample_raw(x.value()), "upsample2x", {x}, [](const Var<T>& g, std::span<const bool>) {
    return std::vector<Var<T>>{sum_pool2x(g)};
  });
}

template <class T>
Var<T> sum_pool2x(const Var<T>& x) {
  return ag::make_result<T>(sum_pool_raw(x.value()), "sum_pool2x", {x}, [](const Var<T>& g, std::span<const bool>) {
    return std::vector<Var<T>>{upsample2x(g)};
  });
}

template <class T>
Var<T> avg_pool2x(const Var<T>& x) {
  return mul_scalar(sum_pool2x(x), T(0.25));
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> v = map_unary(x.value(), [slope](T a) { return a > T(0) ? a : a * slope; });
  return ag::make_result<T>(std::move(v), "leaky_relu", {x}, [x, slope](const Var<T>& g, std::span<const bool>) {
    Tensor<T> mask = map_unary(x.value(), [slope](T a) { return a > T(0) ? T(1) : slope; });
    return std::vector<Var<T>>{mul(g, constant(std::move(mask)))};
  });
}

template <class T>
Var<T> softplus(const Var<T>& x) {
  return ag::make_result<T>(map_unary(x.value(), softplus_scalar<T>), "softplus", {x},
                            [x](const Var<T>& g, std::span<const bool>) {
                              return std::vector<Var<T>>{mul(g, sigmoid(x))};
                            });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return ag::make_result<T>(map_unary(x.value(), sigmoid_scalar<T>), "sigmoid", {x},
                            [x](const Var<T>& g, std::span<const bool>) {
                              const Var<T> s = sigmoid(x);
                              return std::vector<Var<T>>{mul(g, mul(s, add_scalar(neg(s), T(1))))};
                            });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 4, "concat_channels");
  require_rank(b.shape(), 4, "concat_channels");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat_channels mismatch " + sa.str() + " vs " + sb.str());
  const int ca = sa[1], cb = sb[1];
  const Shape out_shape{sa[0], ca + cb, sa[2], sa[3]};
  Tensor<T> out = channel_copy(a.value(), 0, ca, out_shape, 0);
  const Tensor<T> part = channel_copy(b.value(), 0, cb, out_shape, ca);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += part[i];
  return ag::make_result<T>(std::move(out), "concat_channels", {a, b},
                            [ca, cb](const Var<T>& g, std::span<const bool> need) {
                              return std::vector<Var<T>>{need[0] ? slice_channels(g, 0, ca) : Var<T>(),
                                                         need[1] ? slice_channels(g, ca, ca + cb) : Var<T>()};
                            });
}

template <class T>
Var<T> slice_channels(const Var<T>& x, int begin, int end) {
  require_rank(x.shape(), 4, "slice_channels");
  const Shape s = x.shape();
  if (begin < 0 || end > s[1] || begin >= end) throw ShapeError("slice_channels range out of bounds");
  const int total = s[1];
  return ag::make_result<T>(channel_copy(x.value(), begin, end - begin, Shape{s[0], end - begin, s[2], s[3]}, 0),
                            "slice_channels", {x}, [begin, total](const Var<T>& g, std::span<const bool>) {
                              return std::vector<Var<T>>{pad_channels(g, begin, total)};
                            });
}

template <class T>
Var<T> pad_channels(const Var<T>& x, int begin, int total) {
  require_rank(x.shape(), 4, "pad_channels");
  const Shape s = x.shape();
  if (begin < 0 || begin + s[1] > total) throw ShapeError("pad_channels range out of bounds");
  const int c = s[1];
  return ag::make_result<T>(channel_copy(x.value(), 0, c, Shape{s[0], total, s[2], s[3]}, begin), "pad_channels", {x},
                            [begin, c](const Var<T>& g, std::span<const bool>) {
                              return std::vector<Var<T>>{slice_channels(g, begin, begin + c)};
                            });
}

#define SGAN_INSTANTIATE_OPS(T)                                                     \
  template Var<T> add(const Var<T>&, const Var<T>&);                                 \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                 \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                 \
  template Var<T> neg(const Var<T>&);                                                \
  template Var<T> add_scalar(const Var<T>&, T);                                      \
  template Var<T> mul_scalar(const Var<T>&, T);                                      \
  template Var<T> pow_scalar(const Var<T>&, T);                                      \
  template Var<T> sum_to(const Var<T>&, Shape);                                      \
  template Var<T> broadcast_to(const Var<T>&, Shape);                                \
  template Var<T> sum(const Var<T>&);                                                \
  template Var<T> mean(const Var<T>&);                                               \
  template Var<T> reshape(const Var<T>&, Shape);                                     \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                  \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, int);                         \
  template Var<T> conv2d_input_grad(const Var<T>&, const Var<T>&, Shape, int);       \
  template Var<T> conv2d_weight_grad(const Var<T>&, const Var<T>&, Shape, int);      \
  template Var<T> upsample2x(const Var<T>&);                                         \
  template Var<T> sum_pool2x(const Var<T>&);                                         \
  template Var<T> avg_pool2x(const Var<T>&);                                         \
  template Var<T> leaky_relu(const Var<T>&, T);                                      \
  template Var<T> softplus(const Var<T>&);                                           \
  template Var<T> sigmoid(const Var<T>&);                                            \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                     \
  template Var<T> slice_channels(const Var<T>&, int, int);                           \
  template Var<T> pad_channels(const Var<T>&, int, int);

SGAN_INSTANTIATE_OPS(float)
SGAN_INSTANTIATE_OPS(double)

#undef SGAN_INSTANTIATE_OPS

}  // namespace sgan::ops
