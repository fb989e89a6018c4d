#include "sgan/losses.hpp"

#include <cmath>

namespace sgan {

namespace o = ops;

template <class T>
Var<T> adv_g_loss(const Var<T>& fake_logits) {
  return o::mean(o::softplus(o::neg(fake_logits)));
}

template <class T>
Var<T> adv_d_loss(const Var<T>& real_logits, const Var<T>& fake_logits) {
  return o::add(o::mean(o::softplus(o::neg(real_logits))), o::mean(o::softplus(fake_logits)));
}

template <class T>
Var<T> r1_penalty(const Critic<T>& critic, const Tensor<T>& real, T gamma) {
  ag::EnableGradGuard on;
  const Var<T> x(real, true);
  const Var<T> logits = critic(x);
  const std::vector<Var<T>> inputs{x};
  const Var<T> g = ag::grad<T>(o::sum(logits), inputs, /*create_graph=*/true)[0];
  const T per_sample = gamma / T(2) / static_cast<T>(real.shape()[0]);
  return o::mul_scalar(o::sum(o::mul(g, g)), per_sample);
}

template <class T>
DomainGuided<T> domain_guided_losses(const Critic<T>& critic, const Var<T>& x_recon) {
  DomainGuided<T> out;
  out.d_term = o::mean(o::softplus(critic(x_recon.detach())));
  out.eg_term = o::mean(o::softplus(o::neg(critic(x_recon))));
  return out;
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: " + a.shape().str() + " vs " + b.shape().str());
  const Var<T> d = o::sub(a, b);
  return o::mean(o::mul(d, d));
}

template <class T>
RandomConvPyramid<T>::RandomConvPyramid(std::uint64_t seed, std::vector<int> channels)
    : seed_(seed), channels_(std::move(channels)) {
  if (channels_.empty()) throw ConfigError("feature pyramid needs at least one scale");
  Rng rng(seed_);
  int in = 3;
  for (int c : channels_) {
    if (c <= 0) throw ConfigError("feature pyramid channel counts must be positive");
    EqualConv2d<T> conv(in, c, 3, static_cast<T>(std::sqrt(2.0)), rng);
    conv.weight = Var<T>(conv.weight.value(), false);
    conv.bias = Var<T>(conv.bias.value(), false);
    convs_.push_back(std::move(conv));
    in = c;
  }
}

template <class T>
std::vector<Var<T>> RandomConvPyramid<T>::features(const Var<T>& x) const {
  if (x.shape().rank() != 4 || x.shape()[1] != 3) throw ShapeError("feature extractor expects RGB NCHW, got " + x.shape().str());
  const int min_side = 1 << (convs_.size() - 1);
  if (x.shape()[2] % min_side || x.shape()[3] % min_side)
    throw ShapeError("image side must be divisible by " + std::to_string(min_side));
  std::vector<Var<T>> out;
  Var<T> h = x;
  for (size_t i = 0; i < convs_.size(); ++i) {
    if (i > 0) h = o::avg_pool2x(h);
    h = o::leaky_relu(convs_[i](h), T(0.2));
    out.push_back(h);
  }
  return out;
}

template <class T>
std::string RandomConvPyramid<T>::id() const {
  std::string s = "random-conv-pyramid/seed=" + std::to_string(seed_) + "/ch=";
  for (size_t i = 0; i < channels_.size(); ++i) s += (i ? "," : "") + std::to_string(channels_[i]);
  return s;
}

template <class T>
int RandomConvPyramid<T>::feature_dim() const {
  int d = 0;
  for (int c : channels_) d += c;
  return d;
}

template <class T>
Var<T> unit_normalize_channels(const Var<T>& f, T eps) {
  const Shape s = f.shape();
  const Var<T> norm2 = o::sum_to(o::mul(f, f), Shape{s[0], 1, s[2], s[3]});
  return o::mul(f, o::pow_scalar(o::add_scalar(norm2, eps), T(-0.5)));
}

template <class T>
Var<T> perceptual_loss(const Var<T>& x, const Var<T>& y, const FeatureExtractor<T>& feat) {
  if (x.shape() != y.shape()) throw ShapeError("perceptual_loss: " + x.shape().str() + " vs " + y.shape().str());
  const auto fx = feat.features(x);
  const auto fy = feat.features(y);
  Var<T> total;
  for (size_t i = 0; i < fx.size(); ++i) {
    const Var<T> d = o::sub(unit_normalize_channels(fx[i]), unit_normalize_channels(fy[i]));
    const Shape s = d.shape();
    // Sum over channels, mean over batch and pixels.
    const Var<T> term = o::mul_scalar(o::sum(o::mul(d, d)), T(1) / static_cast<T>(s[0] * s[2] * s[3]));
    total = total.defined() ? o::add(total, term) : term;
  }
  return total;
}

std::vector<std::pair<std::string, double>> LossBundle::items() const {
  return {{"adv_d", adv_d},
          {"adv_g", adv_g},
          {"r1", r1},
          {"domain_guided_d", domain_guided_d},
          {"domain_guided_eg", domain_guided_eg},
          {"latent_recon", latent_recon},
          {"image_recon", image_recon},
          {"perceptual", perceptual},
          {"d_total", d_total},
          {"g_total", g_total}};
}

bool LossBundle::all_finite() const {
  for (const auto& [name, v] : items())
    if (!std::isfinite(v)) return false;
  return true;
}

#define SGAN_LOSSES(T)                                                                      \
  template Var<T> adv_g_loss(const Var<T>&);                                                 \
  template Var<T> adv_d_loss(const Var<T>&, const Var<T>&);                                  \
  template Var<T> r1_penalty(const Critic<T>&, const Tensor<T>&, T);                         \
  template DomainGuided<T> domain_guided_losses(const Critic<T>&, const Var<T>&);            \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                         \
  template Var<T> unit_normalize_channels(const Var<T>&, T);                                 \
  template Var<T> perceptual_loss(const Var<T>&, const Var<T>&, const FeatureExtractor<T>&); \
  template class RandomConvPyramid<T>;

SGAN_LOSSES(float)
SGAN_LOSSES(double)

}  // namespace sgan
