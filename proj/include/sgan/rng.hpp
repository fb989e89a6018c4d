#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "sgan/tensor.hpp"

namespace sgan {

/// Seeded generator whose full state round-trips through `state()`.
///
/// Normal variates use Box-Muller without caching the second value, so the
/// serialized engine state is the whole story (std::normal_distribution
/// keeps hidden state and is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do v = engine_();
    while (v >= limit);
    return v % n;
  }

  template <class T>
  Tensor<T> normal_tensor(Shape s, T scale = T(1)) {
    Tensor<T> t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(normal()) * scale;
    return t;
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw Error("invalid RNG state string");
  }

  /// Independent child stream derived from this one.
  Rng split() { return Rng(next_u64() ^ 0xD1B54A32D192ED03ULL); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sgan
