#pragma once

// Inner-loop arithmetic kernels. Every routine has a portable scalar
// reference and, on x86-64, an AVX2+FMA variant selected at runtime from
// CPUID. The scalar path is the numerical reference; the vector path must
// agree with it to within reassociation error (see tests/test_simd.cpp).

#include <cstdint>
#include <string_view>

namespace sgan::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Best ISA supported by this CPU and build.
Isa detect_isa() noexcept;

/// ISA used by `kernels<T>()`. Defaults to `detect_isa()`; can be pinned
/// with the SGAN_ISA environment variable ("scalar" or "avx2") or
/// `set_active_isa` (tests only; not thread-safe against running kernels).
Isa active_isa() noexcept;
void set_active_isa(Isa isa);

template <class T>
struct KernelTable {
  /// C[M,N] = alpha * A[M,K] * B[K,N] + beta * C, all row-major with
  /// leading dimensions lda/ldb/ldc. beta == 0 overwrites C (NaNs in C ignored).
  void (*gemm)(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta, T* c, int ldc);
  T (*dot)(const T* x, const T* y, std::int64_t n);
  /// y += alpha * x
  void (*axpy)(std::int64_t n, T alpha, const T* x, T* y);
  T (*sum)(const T* x, std::int64_t n);
};

template <class T>
const KernelTable<T>& kernels() noexcept;

template <class T>
const KernelTable<T>& kernels(Isa isa) noexcept;

/// Row-major GEMM with optional transposes: C = alpha*op(A)*op(B) + beta*C,
/// where op(A) is M x K and op(B) is K x N. Transposed operands are packed
/// into scratch before calling the active kernel.
template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta,
          T* c, int ldc);

}  // namespace sgan::simd
