#pragma once

#include "sgan/simd/kernels.hpp"

namespace sgan::simd {

namespace scalar {
template <class T>
KernelTable<T> table();
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define SGAN_HAVE_AVX2_KERNELS 1
namespace avx2 {
// Defined in a translation unit compiled with -mavx2 -mfma; only call
// after a CPUID check.
void gemm_f32(int m, int n, int k, float alpha, const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc);
void gemm_f64(int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc);
float dot_f32(const float* x, const float* y, std::int64_t n);
double dot_f64(const double* x, const double* y, std::int64_t n);
void axpy_f32(std::int64_t n, float alpha, const float* x, float* y);
void axpy_f64(std::int64_t n, double alpha, const double* x, double* y);
float sum_f32(const float* x, std::int64_t n);
double sum_f64(const double* x, std::int64_t n);
}  // namespace avx2
#else
#define SGAN_HAVE_AVX2_KERNELS 0
#endif

}  // namespace sgan::simd
