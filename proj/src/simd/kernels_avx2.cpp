// Compiled with -mavx2 -mfma. Keep this file free of standard-library
// templates: anything instantiated here may carry AVX2 code into inline
// functions shared with the rest of the program.

#include <immintrin.h>

#include "kernels_impl.hpp"

namespace sgan::simd::avx2 {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr int kWidth = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V set1(T v) { return _mm256_set1_ps(v); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr int kWidth = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V set1(T v) { return _mm256_set1_pd(v); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

// MR rows of C by NV vectors of columns, accumulated over all of K.
template <class Tr, int MR, int NV>
inline void micro_kernel(int k, typename Tr::T alpha, const typename Tr::T* a, int lda, const typename Tr::T* b,
                         int ldb, typename Tr::T beta, typename Tr::T* c, int ldc) {
  using V = typename Tr::V;
  constexpr int W = Tr::kWidth;
  V acc[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) acc[r][v] = Tr::zero();
  for (int p = 0; p < k; ++p) {
    const typename Tr::T* brow = b + static_cast<long>(p) * ldb;
    V bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = Tr::load(brow + v * W);
    for (int r = 0; r < MR; ++r) {
      const V av = Tr::set1(a[static_cast<long>(r) * lda + p]);
      for (int v = 0; v < NV; ++v) acc[r][v] = Tr::fmadd(av, bv[v], acc[r][v]);
    }
  }
  const V va = Tr::set1(alpha);
  const V vb = Tr::set1(beta);
  for (int r = 0; r < MR; ++r) {
    typename Tr::T* crow = c + static_cast<long>(r) * ldc;
    for (int v = 0; v < NV; ++v) {
      V out = Tr::mul(va, acc[r][v]);
      if (beta != typename Tr::T(0)) out = Tr::fmadd(vb, Tr::load(crow + v * W), out);
      Tr::store(crow + v * W, out);
    }
  }
}

template <class Tr>
inline void scalar_tail(int m, int j0, int n, int k, typename Tr::T alpha, const typename Tr::T* a, int lda,
                        const typename Tr::T* b, int ldb, typename Tr::T beta, typename Tr::T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = j0; j < n; ++j) {
      typename Tr::T s = 0;
      for (int p = 0; p < k; ++p) s += a[static_cast<long>(i) * lda + p] * b[static_cast<long>(p) * ldb + j];
      typename Tr::T& out = c[static_cast<long>(i) * ldc + j];
      out = beta == typename Tr::T(0) ? alpha * s : alpha * s + beta * out;
    }
  }
}

// B panels of 2*W columns are packed contiguously in K-chunks so the
// micro-kernel streams them from L1 regardless of ldb.
template <class Tr>
void gemm_impl(int m, int n, int k, typename Tr::T alpha, const typename Tr::T* a, int lda, const typename Tr::T* b,
               int ldb, typename Tr::T beta, typename Tr::T* c, int ldc) {
  using T = typename Tr::T;
  constexpr int W = Tr::kWidth;
  constexpr int kPanel = 2 * W;
  constexpr int kChunk = 256;
  constexpr int kRows = 6;
  alignas(64) T panel[kChunk * kPanel];

  int j = 0;
  for (; j + kPanel <= n; j += kPanel) {
    for (int k0 = 0; k0 < k || k0 == 0; k0 += kChunk) {
      const int kc = k - k0 < kChunk ? k - k0 : kChunk;
      for (int p = 0; p < kc; ++p) {
        const T* src = b + static_cast<long>(k0 + p) * ldb + j;
        for (int v = 0; v < kPanel; ++v) panel[p * kPanel + v] = src[v];
      }
      const T chunk_beta = k0 == 0 ? beta : T(1);
      int i = 0;
      for (; i + kRows <= m; i += kRows)
        micro_kernel<Tr, kRows, 2>(kc, alpha, a + static_cast<long>(i) * lda + k0, lda, panel, kPanel, chunk_beta,
                                   c + static_cast<long>(i) * ldc + j, ldc);
      if (i + 4 <= m) {
        micro_kernel<Tr, 4, 2>(kc, alpha, a + static_cast<long>(i) * lda + k0, lda, panel, kPanel, chunk_beta,
                               c + static_cast<long>(i) * ldc + j, ldc);
        i += 4;
      }
      for (; i < m; ++i)
        micro_kernel<Tr, 1, 2>(kc, alpha, a + static_cast<long>(i) * lda + k0, lda, panel, kPanel, chunk_beta,
                               c + static_cast<long>(i) * ldc + j, ldc);
      if (k == 0) break;
    }
  }
  if (j == n) return;
  // Remaining columns: one vector wide, then scalar.
  int i = 0;
  for (; i + kRows <= m; i += kRows) {
    int jj = j;
    for (; jj + W <= n; jj += W)
      micro_kernel<Tr, kRows, 1>(k, alpha, a + static_cast<long>(i) * lda, lda, b + jj, ldb, beta,
                                 c + static_cast<long>(i) * ldc + jj, ldc);
    if (jj < n)
      scalar_tail<Tr>(kRows, jj, n, k, alpha, a + static_cast<long>(i) * lda, lda, b, ldb, beta,
                      c + static_cast<long>(i) * ldc, ldc);
  }
  for (; i < m; ++i) {
    int jj = j;
    for (; jj + W <= n; jj += W)
      micro_kernel<Tr, 1, 1>(k, alpha, a + static_cast<long>(i) * lda, lda, b + jj, ldb, beta,
                             c + static_cast<long>(i) * ldc + jj, ldc);
    if (jj < n)
      scalar_tail<Tr>(1, jj, n, k, alpha, a + static_cast<long>(i) * lda, lda, b, ldb, beta,
                      c + static_cast<long>(i) * ldc, ldc);
  }
}

template <class Tr>
typename Tr::T dot_impl(const typename Tr::T* x, const typename Tr::T* y, std::int64_t n) {
  constexpr int W = Tr::kWidth;
  typename Tr::V acc0 = Tr::zero(), acc1 = Tr::zero();
  std::int64_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    acc0 = Tr::fmadd(Tr::load(x + i), Tr::load(y + i), acc0);
    acc1 = Tr::fmadd(Tr::load(x + i + W), Tr::load(y + i + W), acc1);
  }
  for (; i + W <= n; i += W) acc0 = Tr::fmadd(Tr::load(x + i), Tr::load(y + i), acc0);
  typename Tr::T s = Tr::hsum(Tr::add(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class Tr>
void axpy_impl(std::int64_t n, typename Tr::T alpha, const typename Tr::T* x, typename Tr::T* y) {
  constexpr int W = Tr::kWidth;
  const typename Tr::V va = Tr::set1(alpha);
  std::int64_t i = 0;
  for (; i + W <= n; i += W) Tr::store(y + i, Tr::fmadd(va, Tr::load(x + i), Tr::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class Tr>
typename Tr::T sum_impl(const typename Tr::T* x, std::int64_t n) {
  constexpr int W = Tr::kWidth;
  typename Tr::V acc0 = Tr::zero(), acc1 = Tr::zero();
  std::int64_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    acc0 = Tr::add(acc0, Tr::load(x + i));
    acc1 = Tr::add(acc1, Tr::load(x + i + W));
  }
  for (; i + W <= n; i += W) acc0 = Tr::add(acc0, Tr::load(x + i));
  typename Tr::T s = Tr::hsum(Tr::add(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

}  // namespace

void gemm_f32(int m, int n, int k, float alpha, const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc) {
  gemm_impl<F32>(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void gemm_f64(int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc) {
  gemm_impl<F64>(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
float dot_f32(const float* x, const float* y, std::int64_t n) { return dot_impl<F32>(x, y, n); }
double dot_f64(const double* x, const double* y, std::int64_t n) { return dot_impl<F64>(x, y, n); }
void axpy_f32(std::int64_t n, float alpha, const float* x, float* y) { axpy_impl<F32>(n, alpha, x, y); }
void axpy_f64(std::int64_t n, double alpha, const double* x, double* y) { axpy_impl<F64>(n, alpha, x, y); }
float sum_f32(const float* x, std::int64_t n) { return sum_impl<F32>(x, n); }
double sum_f64(const double* x, std::int64_t n) { return sum_impl<F64>(x, n); }

}  // namespace sgan::simd::avx2
