#include "kernels_impl.hpp"

namespace sgan::simd::scalar {

template <class T>
void gemm(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    const T* arow = a + static_cast<std::int64_t>(i) * lda;
    for (int p = 0; p < k; ++p) {
      const T av = alpha * arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::int64_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
T dot(const T* x, const T* y, std::int64_t n) {
  T s = 0;
  for (std::int64_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class T>
void axpy(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T sum(const T* x, std::int64_t n) {
  T s = 0;
  for (std::int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <class T>
KernelTable<T> table() {
  return {&gemm<T>, &dot<T>, &axpy<T>, &sum<T>};
}

template KernelTable<float> table<float>();
template KernelTable<double> table<double>();

}  // namespace sgan::simd::scalar
