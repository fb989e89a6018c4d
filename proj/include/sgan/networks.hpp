#pragma once

// Mapping network F, stylemap resizer + synthesis network G, encoder E and
// discriminator D.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sgan/layers.hpp"

namespace sgan {

/// Statistics used to normalize activations before spatial modulation.
enum class NormMode {
  kScalar,      ///< one mean/std per sample over C x H x W (default)
  kPerChannel,  ///< one mean/std per sample and channel over H x W
  kNone,        ///< no normalization; only for locality fixtures
};

std::string to_string(NormMode m);
NormMode norm_mode_from_string(const std::string& s);

struct NetworkConfig {
  int image_size = 32;
  int stylemap_hw = 4;
  int stylemap_channels = 16;
  int latent_dim = 32;
  int mapping_layers = 8;
  int mapping_hidden = 64;
  /// Feature-map count per resolution, from min(4, stylemap_hw) to image_size.
  std::map<int, int> channels{{4, 32}, {8, 32}, {16, 32}, {32, 16}};
  int resizer_kernel = 3;
  bool resizer_activation = true;
  double lrelu_slope = 0.2;
  NormMode norm = NormMode::kScalar;
  double norm_eps = 1e-8;
  int mbstd_group = 4;

  /// Throws ConfigError on any inconsistency.
  void validate() const;

  int channels_at(int resolution) const;
  /// Synthesis resolutions stylemap_hw, 2*stylemap_hw, ..., image_size.
  std::vector<int> synthesis_resolutions() const;
  /// Two modulated layers per synthesis resolution.
  int num_levels() const { return 2 * static_cast<int>(synthesis_resolutions().size()); }
  int level_resolution(int level) const { return synthesis_resolutions()[static_cast<size_t>(level / 2)]; }
  int stylemap_size() const { return stylemap_channels * stylemap_hw * stylemap_hw; }
  Shape stylemap_shape(int batch) const { return Shape{batch, stylemap_channels, stylemap_hw, stylemap_hw}; }
  Shape image_shape(int batch) const { return Shape{batch, 3, image_size, image_size}; }
  Shape level_shape(int level, int batch) const;

  /// Full-size configuration (256px, 64x8x8 stylemap).
  static NetworkConfig reference();
  /// The CPU-sized configuration used by tests and the toy run.
  static NetworkConfig desk();
};

/// Spatially variant modulation: gamma * (h - mu) / sigma + beta with
/// sigma = sqrt(var + eps). Statistics are population moments.
template <class T>
Var<T> modulate(const Var<T>& h, const Var<T>& gamma, const Var<T>& beta, NormMode mode, T eps);

template <class T>
class MappingNetwork {
 public:
  MappingNetwork() = default;
  MappingNetwork(const NetworkConfig& cfg, Rng& rng);

  /// z [N, latent_dim] -> stylemap [N, C_s, H_s, W_s]
  Var<T> operator()(const Var<T>& z) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  std::vector<EqualLinear<T>> layers;

 private:
  int channels_ = 0, hw_ = 0, latent_ = 0;
  T slope_ = T(0.2);
};

template <class T>
class StylemapResizer {
 public:
  StylemapResizer() = default;
  StylemapResizer(const NetworkConfig& cfg, Rng& rng);

  /// stylemap -> one tensor per synthesis layer (the w+ pyramid)
  std::vector<Var<T>> operator()(const Var<T>& w) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  std::vector<EqualConv2d<T>> convs;

 private:
  bool activation_ = true;
  T slope_ = T(0.2);
};

template <class T>
class SynthesisNetwork {
 public:
  SynthesisNetwork() = default;
  SynthesisNetwork(const NetworkConfig& cfg, Rng& rng);

  /// pyramid -> image [N, 3, S, S]. No per-pixel noise anywhere.
  Var<T> operator()(const std::vector<Var<T>>& pyramid) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Var<T> const_input;  // [1, C, H_s, W_s]
  std::vector<EqualConv2d<T>> convs;
  std::vector<EqualConv2d<T>> affine_gamma;
  std::vector<EqualConv2d<T>> affine_beta;
  EqualConv2d<T> to_rgb;

 private:
  NetworkConfig cfg_;
};

/// Downsampling trunk shared by E and D: conv, avg-pool, conv with a pooled
/// 1x1 skip, outputs scaled by 1/sqrt(2).
template <class T>
class DownBlock {
 public:
  DownBlock() = default;
  DownBlock(int in_ch, int out_ch, T slope, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  EqualConv2d<T> conv0, conv1, skip;

 private:
  T slope_ = T(0.2);
};

template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const NetworkConfig& cfg, Rng& rng);

  /// image [N, 3, S, S] -> stylemap [N, C_s, H_s, W_s]
  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  EqualConv2d<T> from_rgb;
  std::vector<DownBlock<T>> blocks;
  EqualConv2d<T> final_conv, project;

 private:
  NetworkConfig cfg_;
};

template <class T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const NetworkConfig& cfg, Rng& rng);

  /// image [N, 3, S, S] -> logits [N, 1]
  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  EqualConv2d<T> from_rgb;
  std::vector<DownBlock<T>> blocks;
  EqualConv2d<T> final_conv;
  EqualLinear<T> fc, out;

 private:
  NetworkConfig cfg_;
};

/// Minibatch standard-deviation feature appended as one extra channel.
template <class T>
Var<T> minibatch_stddev(const Var<T>& x, int group_size);

/// All four networks for one configuration.
template <class T>
class SpatialGan {
 public:
  SpatialGan() = default;
  SpatialGan(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }

  Var<T> map(const Var<T>& z) const { return mapping(z); }
  std::vector<Var<T>> resize(const Var<T>& w) const { return resizer(w); }
  Var<T> synthesize(const std::vector<Var<T>>& pyramid) const;
  Var<T> generate(const Var<T>& w) const { return synthesize(resize(w)); }
  Var<T> encode(const Var<T>& x) const;
  Var<T> discriminate(const Var<T>& x) const;

  ParamList<T> mapping_params() const;
  /// Resizer and synthesis network.
  ParamList<T> generator_params() const;
  ParamList<T> encoder_params() const;
  ParamList<T> discriminator_params() const;
  ParamList<T> all_params() const;

  /// Deep copy with independent parameter storage.
  SpatialGan clone() const;

  MappingNetwork<T> mapping;
  StylemapResizer<T> resizer;
  SynthesisNetwork<T> synthesis;
  Encoder<T> encoder;
  Discriminator<T> discriminator;

 private:
  NetworkConfig cfg_;
};

/// Copy parameter values by name (with dtype conversion). Throws if a
/// destination name is missing from `src` or shapes differ.
template <class S, class D>
void copy_params(const ParamList<S>& src, const ParamList<D>& dst);

/// w_mean + psi * (w - w_mean), evaluated so psi 0 and 1 are exact
template <class T>
Tensor<T> truncate(const Tensor<T>& w, T psi, const Tensor<T>& w_mean);

/// Mean of F(z) over `samples` draws, shape [1, C_s, H_s, W_s].
template <class T>
Tensor<T> estimate_mean_stylemap(const SpatialGan<T>& model, int samples, std::uint64_t seed);

extern template class SpatialGan<float>;
extern template class SpatialGan<double>;

}  // namespace sgan
