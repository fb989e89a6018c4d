#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sgan/layers.hpp"

namespace sgan {

/// Anything mapping an image batch to logits [N, 1].
template <class T>
using Critic = std::function<Var<T>(const Var<T>&)>;

/// Non-saturating generator loss: mean softplus(-logit).
template <class T>
Var<T> adv_g_loss(const Var<T>& fake_logits);

/// mean softplus(-real) + mean softplus(fake)
template <class T>
Var<T> adv_d_loss(const Var<T>& real_logits, const Var<T>& fake_logits);

/// (gamma / 2) * mean over the batch of |grad_x D(x)|^2. The returned value
/// is differentiable with respect to the critic's parameters.
template <class T>
Var<T> r1_penalty(const Critic<T>& critic, const Tensor<T>& real, T gamma);

/// Lazy regularization: the penalty is applied on every `interval`-th step
/// (0-based step s is due when s + 1 is a multiple of interval).
inline bool r1_due(long step, int interval) { return interval > 0 && (step + 1) % interval == 0; }

template <class T>
struct DomainGuided {
  Var<T> d_term;   // mean softplus(D(x_recon)), x_recon detached
  Var<T> eg_term;  // mean softplus(-D(x_recon))
};

/// Adversarial terms on encoder reconstructions. `d_term` cannot reach the
/// encoder or generator. Callers keep `eg_term` away from D by only
/// differentiating it with respect to E/G/F parameters.
template <class T>
DomainGuided<T> domain_guided_losses(const Critic<T>& critic, const Var<T>& x_recon);

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> latent_recon_loss(const Var<T>& w, const Var<T>& w_hat) {
  return mse(w_hat, w);
}

template <class T>
Var<T> image_recon_loss(const Var<T>& x, const Var<T>& x_hat) {
  return mse(x_hat, x);
}

/// Multi-scale image features for perceptual distance and FID.
template <class T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Var<T>> features(const Var<T>& x) const = 0;
  virtual std::string id() const = 0;
};

/// Frozen, seeded stack of random 3x3 convolutions with leaky ReLU; one
/// feature map per scale, average-pooled between scales.
template <class T>
class RandomConvPyramid : public FeatureExtractor<T> {
 public:
  explicit RandomConvPyramid(std::uint64_t seed = 0x5eed, std::vector<int> channels = {16, 32, 32});
  std::vector<Var<T>> features(const Var<T>& x) const override;
  std::string id() const override;

  int feature_dim() const;

 private:
  std::uint64_t seed_;
  std::vector<int> channels_;
  std::vector<EqualConv2d<T>> convs_;
};

/// Divide each spatial feature vector by its channel norm.
template <class T>
Var<T> unit_normalize_channels(const Var<T>& f, T eps = T(1e-10));

/// Sum over scales of the per-pixel squared distance between unit-normalized
/// features, averaged over batch and space. Symmetric in (x, y).
template <class T>
Var<T> perceptual_loss(const Var<T>& x, const Var<T>& y, const FeatureExtractor<T>& feat);

/// Per-term weights; every term defaults to 1.
struct LossWeights {
  double adv_d = 1, adv_g = 1, domain_guided_d = 1, domain_guided_eg = 1;
  double latent_recon = 1, image_recon = 1, perceptual = 1;
};

/// Scalar values of one training step's terms (r1 is 0 on steps without it).
struct LossBundle {
  double adv_d = 0, adv_g = 0, r1 = 0, domain_guided_d = 0, domain_guided_eg = 0;
  double latent_recon = 0, image_recon = 0, perceptual = 0;
  double d_total = 0, g_total = 0;

  /// (name, value) pairs in a fixed order.
  std::vector<std::pair<std::string, double>> items() const;
  bool all_finite() const;
};

extern template class RandomConvPyramid<float>;
extern template class RandomConvPyramid<double>;

}  // namespace sgan
