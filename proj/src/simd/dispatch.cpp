#include <atomic>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "kernels_impl.hpp"

namespace sgan::simd {
namespace {

Isa initial_isa() noexcept {
  const Isa best = detect_isa();
  if (const char* env = std::getenv("SGAN_ISA")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::kScalar;
    if (std::strcmp(env, "avx2") == 0 && best == Isa::kAvx2) return Isa::kAvx2;
  }
  return best;
}

std::atomic<Isa>& active() noexcept {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

template <class T>
KernelTable<T> avx2_table();

#if SGAN_HAVE_AVX2_KERNELS
template <>
KernelTable<float> avx2_table<float>() {
  return {&avx2::gemm_f32, &avx2::dot_f32, &avx2::axpy_f32, &avx2::sum_f32};
}
template <>
KernelTable<double> avx2_table<double>() {
  return {&avx2::gemm_f64, &avx2::dot_f64, &avx2::axpy_f64, &avx2::sum_f64};
}
#else
template <class T>
KernelTable<T> avx2_table() {
  return scalar::table<T>();
}
#endif

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

Isa detect_isa() noexcept {
#if SGAN_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::kAvx2;
#endif
  return Isa::kScalar;
}

Isa active_isa() noexcept { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::kAvx2 && detect_isa() != Isa::kAvx2) isa = Isa::kScalar;
  active().store(isa, std::memory_order_relaxed);
}

template <class T>
const KernelTable<T>& kernels(Isa isa) noexcept {
  static const KernelTable<T> scalar_tbl = scalar::table<T>();
  static const KernelTable<T> avx2_tbl = avx2_table<T>();
  return isa == Isa::kAvx2 ? avx2_tbl : scalar_tbl;
}

template <class T>
const KernelTable<T>& kernels() noexcept {
  return kernels<T>(active_isa());
}

template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta,
          T* c, int ldc) {
  if (m == 0 || n == 0) return;
  thread_local std::vector<T> pack_a, pack_b;
  if (trans_a) {
    // a is K x M with leading dim lda
    pack_a.resize(static_cast<size_t>(m) * static_cast<size_t>(k));
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) pack_a[static_cast<size_t>(i) * k + p] = a[static_cast<long>(p) * lda + i];
    a = pack_a.data();
    lda = k;
  }
  if (trans_b) {
    // b is N x K with leading dim ldb
    pack_b.resize(static_cast<size_t>(k) * static_cast<size_t>(n));
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p) pack_b[static_cast<size_t>(p) * n + j] = b[static_cast<long>(j) * ldb + p];
    b = pack_b.data();
    ldb = n;
  }
  kernels<T>().gemm(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template const KernelTable<float>& kernels<float>(Isa) noexcept;
template const KernelTable<double>& kernels<double>(Isa) noexcept;
template const KernelTable<float>& kernels<float>() noexcept;
template const KernelTable<double>& kernels<double>() noexcept;
template void gemm<float>(bool, bool, int, int, int, float, const float*, int, const float*, int, float, float*, int);
template void gemm<double>(bool, bool, int, int, int, double, const double*, int, const double*, int, double, double*,
                           int);

}  // namespace sgan::simd
