#pragma once

#include <string>
#include <vector>

#include "sgan/layers.hpp"

namespace sgan {

/// Adam over several parameter groups, each with its own learning rate.
class Adam {
 public:
  struct Group {
    ParamList<float> params;
    double lr = 0;
  };

  Adam() = default;
  Adam(std::vector<Group> groups, double beta1, double beta2, double eps = 1e-8);

  /// `grads` lines up with the concatenation of all groups' params.
  void step(const std::vector<Var<float>>& grads);

  /// Every parameter across groups, in step() order.
  std::vector<Var<float>> vars() const;
  const std::vector<Group>& groups() const { return groups_; }
  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }

  /// First/second moment buffers, parallel to vars().
  std::vector<Tensor<float>>& first_moments() { return m_; }
  std::vector<Tensor<float>>& second_moments() { return v_; }
  const std::vector<Tensor<float>>& first_moments() const { return m_; }
  const std::vector<Tensor<float>>& second_moments() const { return v_; }
  /// Parameter names, parallel to vars().
  std::vector<std::string> names() const;

 private:
  std::vector<Group> groups_;
  double beta1_ = 0, beta2_ = 0.99, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

/// shadow <- d * shadow + (1 - d) * live, elementwise. Exact at d = 0 and 1.
void ema_update(const ParamList<float>& shadow, const ParamList<float>& live, double decay);

/// Shadow copies of a fixed set of live parameters.
class EmaState {
 public:
  EmaState() = default;
  /// `shadow` and `live` must pair up by name and shape.
  EmaState(ParamList<float> shadow, ParamList<float> live, double decay, bool warmup = true);

  /// With warmup the decay used on update t (0-based) is min(decay, t / (t + 1)):
  /// a plain running mean until it reaches `decay`.
  void update();
  double decay_for(long update_index) const;

  double decay() const { return decay_; }
  long updates() const { return updates_; }
  void set_updates(long n) { updates_ = n; }
  const ParamList<float>& shadow() const { return shadow_; }

 private:
  ParamList<float> shadow_, live_;
  double decay_ = 0.999;
  bool warmup_ = true;
  long updates_ = 0;
};

}  // namespace sgan
