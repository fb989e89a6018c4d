#pragma once

// Central finite-difference oracle for gradients at float64.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sgan/autograd.hpp"
#include "sgan/ops.hpp"

namespace sgan::testing {

using VarD = ag::Var<double>;
using TensorD = Tensor<double>;
using ScalarFn = std::function<VarD(const std::vector<VarD>&)>;

struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0;
  std::string detail;
};

inline double eval_scalar(const ScalarFn& f, const std::vector<TensorD>& inputs) {
  std::vector<VarD> vars;
  for (const auto& t : inputs) vars.emplace_back(t, false);
  const VarD out = f(vars);
  double s = 0;
  for (std::int64_t i = 0; i < out.value().numel(); ++i) s += out.value()[i];
  return s;
}

/// Compares autodiff gradients of sum(f(inputs)) against central
/// differences: |analytic - numeric| <= atol + rtol * |numeric|.
inline GradCheckResult gradcheck(const ScalarFn& f, std::vector<TensorD> inputs, double rtol = 1e-3,
                                 double atol = 1e-6, double step = 1e-6) {
  std::vector<VarD> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  const VarD out = f(vars);
  const auto analytic = ag::grad<double>(out, vars);

  GradCheckResult res;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (std::int64_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + step;
      const double fp = eval_scalar(f, inputs);
      inputs[k][i] = orig - step;
      const double fm = eval_scalar(f, inputs);
      inputs[k][i] = orig;
      const double numeric = (fp - fm) / (2 * step);
      const double a = analytic[k].value()[i];
      const double err = std::abs(a - numeric);
      const double rel = err / std::max(std::abs(numeric), 1e-12);
      if (err > atol + rtol * std::abs(numeric)) {
        if (res.ok)
          res.detail = "input " + std::to_string(k) + " entry " + std::to_string(i) + ": analytic " +
                       std::to_string(a) + " numeric " + std::to_string(numeric);
        res.ok = false;
      }
      if (err > atol) res.worst_rel = std::max(res.worst_rel, rel);
    }
  }
  return res;
}

/// Same comparison for parameters that live inside a model: `loss` rebuilds
/// the graph from the current parameter values on every call. Checks at most
/// `max_entries` entries per parameter, spread evenly.
inline GradCheckResult param_gradcheck(const std::function<VarD()>& loss, const std::vector<VarD>& params,
                                       int max_entries = 6, double rtol = 1e-3, double atol = 1e-6,
                                       double step = 1e-6) {
  const VarD out = loss();
  const auto analytic = ag::grad<double>(out, params);
  auto total = [&] {
    const VarD v = loss();
    double s = 0;
    for (std::int64_t i = 0; i < v.value().numel(); ++i) s += v.value()[i];
    return s;
  };
  GradCheckResult res;
  for (size_t k = 0; k < params.size(); ++k) {
    VarD p = params[k];
    TensorD& t = p.mutable_value();
    const std::int64_t n = t.numel();
    const std::int64_t stride = std::max<std::int64_t>(1, n / max_entries);
    for (std::int64_t i = 0; i < n; i += stride) {
      const double orig = t[i];
      t[i] = orig + step;
      const double fp = total();
      t[i] = orig - step;
      const double fm = total();
      t[i] = orig;
      const double numeric = (fp - fm) / (2 * step);
      const double a = analytic[k].value()[i];
      const double err = std::abs(a - numeric);
      if (err > atol + rtol * std::abs(numeric)) {
        if (res.ok)
          res.detail = "param " + std::to_string(k) + " entry " + std::to_string(i) + ": analytic " +
                       std::to_string(a) + " numeric " + std::to_string(numeric);
        res.ok = false;
      }
      if (err > atol) res.worst_rel = std::max(res.worst_rel, err / std::max(std::abs(numeric), 1e-12));
    }
  }
  return res;
}

inline TensorD random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  TensorD t(s);
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + 1;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    t[i] = scale * (static_cast<double>(x >> 11) / 9007199254740992.0 * 2.0 - 1.0);
  }
  return t;
}

}  // namespace sgan::testing
