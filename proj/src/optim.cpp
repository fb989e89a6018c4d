#include "sgan/optim.hpp"

#include <algorithm>
#include <cmath>

namespace sgan {

Adam::Adam(std::vector<Group> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must lie in [0, 1)");
  for (const auto& g : groups_) {
    if (g.lr < 0) throw ConfigError("learning rate must be non-negative");
    for (const auto& p : g.params) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }
}

std::vector<Var<float>> Adam::vars() const {
  std::vector<Var<float>> out;
  for (const auto& g : groups_)
    for (const auto& p : g.params) out.push_back(p.var);
  return out;
}

std::vector<std::string> Adam::names() const {
  std::vector<std::string> out;
  for (const auto& g : groups_)
    for (const auto& p : g.params) out.push_back(p.name);
  return out;
}

void Adam::step(const std::vector<Var<float>>& grads) {
  if (grads.size() != m_.size()) throw ShapeError("Adam::step: gradient count does not match parameter count");
  ++t_;
  const double c1 = 1 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1 - std::pow(beta2_, static_cast<double>(t_));
  size_t k = 0;
  for (const auto& g : groups_) {
    const float lr = static_cast<float>(g.lr);
    for (const auto& p : g.params) {
      Var<float> var = p.var;
      Tensor<float>& w = var.mutable_value();
      const Tensor<float>& gr = grads[k].value();
      if (gr.shape() != w.shape()) throw ShapeError("Adam::step: gradient shape mismatch for " + p.name);
      Tensor<float>& m = m_[k];
      Tensor<float>& v = v_[k];
      const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
      const float ic1 = static_cast<float>(1 / c1), ic2 = static_cast<float>(1 / c2), eps = static_cast<float>(eps_);
      for (std::int64_t i = 0; i < w.numel(); ++i) {
        const float gi = gr[i];
        m[i] = b1 * m[i] + (1 - b1) * gi;
        v[i] = b2 * v[i] + (1 - b2) * gi * gi;
        w[i] -= lr * (m[i] * ic1) / (std::sqrt(v[i] * ic2) + eps);
      }
      ++k;
    }
  }
}

void ema_update(const ParamList<float>& shadow, const ParamList<float>& live, double decay) {
  if (decay < 0 || decay > 1) throw ConfigError("EMA decay must lie in [0, 1]");
  if (shadow.size() != live.size()) throw ShapeError("EMA: shadow and live parameter counts differ");
  const float d = static_cast<float>(decay), e = static_cast<float>(1 - decay);
  for (size_t k = 0; k < shadow.size(); ++k) {
    Var<float> s = shadow[k].var;
    Tensor<float>& sv = s.mutable_value();
    const Tensor<float>& lv = live[k].var.value();
    if (sv.shape() != lv.shape()) throw ShapeError("EMA: shape mismatch for " + shadow[k].name);
    for (std::int64_t i = 0; i < sv.numel(); ++i) sv[i] = d * sv[i] + e * lv[i];
  }
}

EmaState::EmaState(ParamList<float> shadow, ParamList<float> live, double decay, bool warmup)
    : shadow_(std::move(shadow)), live_(std::move(live)), decay_(decay), warmup_(warmup) {
  if (decay < 0 || decay > 1) throw ConfigError("EMA decay must lie in [0, 1]");
  if (shadow_.size() != live_.size()) throw ShapeError("EMA: shadow and live parameter counts differ");
  for (size_t k = 0; k < shadow_.size(); ++k)
    if (shadow_[k].name != live_[k].name || shadow_[k].var.shape() != live_[k].var.shape())
      throw ShapeError("EMA: parameter " + live_[k].name + " does not match its shadow");
}

double EmaState::decay_for(long update_index) const {
  if (!warmup_) return decay_;
  const double ramp = static_cast<double>(update_index) / static_cast<double>(update_index + 1);
  return std::min(decay_, ramp);
}

void EmaState::update() {
  ema_update(shadow_, live_, decay_for(updates_));
  ++updates_;
}

}  // namespace sgan
