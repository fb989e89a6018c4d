#include "sgan/networks.hpp"

#include <bit>
#include <cmath>
#include <unordered_map>

namespace sgan {

namespace o = ops;

namespace {

bool is_pow2(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }

template <class T>
const T kSqrt2 = static_cast<T>(1.4142135623730951);

}  // namespace

std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::kScalar:
      return "scalar";
    case NormMode::kPerChannel:
      return "per_channel";
    case NormMode::kNone:
      return "none";
  }
  return "scalar";
}

NormMode norm_mode_from_string(const std::string& s) {
  if (s == "scalar") return NormMode::kScalar;
  if (s == "per_channel") return NormMode::kPerChannel;
  if (s == "none") return NormMode::kNone;
  throw ConfigError("unknown normalization mode '" + s + "'");
}

void NetworkConfig::validate() const {
  if (!is_pow2(image_size)) throw ConfigError("image_size must be a power of two");
  if (!is_pow2(stylemap_hw)) throw ConfigError("stylemap_hw must be a power of two");
  if (stylemap_hw > image_size) throw ConfigError("stylemap_hw must not exceed image_size");
  if (image_size < 4) throw ConfigError("image_size must be at least 4");
  if (stylemap_channels <= 0 || latent_dim <= 0 || mapping_hidden <= 0) throw ConfigError("sizes must be positive");
  if (mapping_layers < 1) throw ConfigError("mapping_layers must be >= 1");
  if (resizer_kernel < 1 || resizer_kernel % 2 == 0) throw ConfigError("resizer_kernel must be odd");
  if (mbstd_group < 1) throw ConfigError("mbstd_group must be >= 1");
  if (!(norm_eps > 0)) throw ConfigError("norm_eps must be positive");
  for (int r = std::min(4, stylemap_hw); r <= image_size; r *= 2) {
    auto it = channels.find(r);
    if (it == channels.end() || it->second <= 0)
      throw ConfigError("channels missing for resolution " + std::to_string(r));
  }
}

int NetworkConfig::channels_at(int resolution) const {
  auto it = channels.find(resolution);
  if (it == channels.end()) throw ConfigError("no channel count for resolution " + std::to_string(resolution));
  return it->second;
}

std::vector<int> NetworkConfig::synthesis_resolutions() const {
  std::vector<int> out;
  for (int r = stylemap_hw; r <= image_size; r *= 2) out.push_back(r);
  return out;
}

Shape NetworkConfig::level_shape(int level, int batch) const {
  const int r = level_resolution(level);
  return Shape{batch, channels_at(r), r, r};
}

NetworkConfig NetworkConfig::reference() {
  NetworkConfig c;
  c.image_size = 256;
  c.stylemap_hw = 8;
  c.stylemap_channels = 64;
  c.latent_dim = 64;
  c.mapping_hidden = 64;
  c.channels = {{4, 512}, {8, 512}, {16, 512}, {32, 512}, {64, 256}, {128, 128}, {256, 64}};
  return c;
}

NetworkConfig NetworkConfig::desk() { return NetworkConfig{}; }

template <class T>
Var<T> modulate(const Var<T>& h, const Var<T>& gamma, const Var<T>& beta, NormMode mode, T eps) {
  const Shape s = h.shape();
  if (s.rank() != 4) throw ShapeError("modulate expects NCHW activations, got " + s.str());
  if (gamma.shape() != s || beta.shape() != s)
    throw ShapeError("modulation parameters " + gamma.shape().str() + "/" + beta.shape().str() +
                     " do not match activations " + s.str());
  Var<T> normalized = h;
  if (mode != NormMode::kNone) {
    const Shape red = mode == NormMode::kScalar ? Shape{s[0], 1, 1, 1} : Shape{s[0], s[1], 1, 1};
    const T inv_count = T(1) / static_cast<T>(s.numel() / red.numel());
    const Var<T> mu = o::mul_scalar(o::sum_to(h, red), inv_count);
    const Var<T> centered = o::sub(h, mu);
    const Var<T> var = o::mul_scalar(o::sum_to(o::mul(centered, centered), red), inv_count);
    normalized = o::mul(centered, o::pow_scalar(o::add_scalar(var, eps), T(-0.5)));
  }
  return o::add(o::mul(gamma, normalized), beta);
}

// ---------------------------------------------------------------- mapping

template <class T>
MappingNetwork<T>::MappingNetwork(const NetworkConfig& cfg, Rng& rng)
    : channels_(cfg.stylemap_channels),
      hw_(cfg.stylemap_hw),
      latent_(cfg.latent_dim),
      slope_(static_cast<T>(cfg.lrelu_slope)) {
  int in = cfg.latent_dim;
  for (int i = 0; i < cfg.mapping_layers; ++i) {
    const bool last = i + 1 == cfg.mapping_layers;
    const int out = last ? cfg.stylemap_size() : cfg.mapping_hidden;
    layers.emplace_back(in, out, last ? T(1) : kSqrt2<T>, rng);
    in = out;
  }
}

template <class T>
Var<T> MappingNetwork<T>::operator()(const Var<T>& z) const {
  if (z.shape().rank() != 2 || z.shape()[1] != latent_)
    throw ConfigError("mapping network expects [N, " + std::to_string(latent_) + "] latents, got " + z.shape().str());
  Var<T> h = z;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = o::leaky_relu(h, slope_);
  }
  return o::reshape(h, Shape{z.shape()[0], channels_, hw_, hw_});
}

template <class T>
void MappingNetwork<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".fc" + std::to_string(i), out);
}

// ---------------------------------------------------------------- resizer

template <class T>
StylemapResizer<T>::StylemapResizer(const NetworkConfig& cfg, Rng& rng)
    : activation_(cfg.resizer_activation), slope_(static_cast<T>(cfg.lrelu_slope)) {
  int in = cfg.stylemap_channels;
  for (int level = 0; level < cfg.num_levels(); ++level) {
    const int out = cfg.channels_at(cfg.level_resolution(level));
    convs.emplace_back(in, out, cfg.resizer_kernel, activation_ ? kSqrt2<T> : T(1), rng);
    in = out;
  }
}

template <class T>
std::vector<Var<T>> StylemapResizer<T>::operator()(const Var<T>& w) const {
  std::vector<Var<T>> pyramid;
  pyramid.reserve(convs.size());
  Var<T> s = w;
  for (size_t level = 0; level < convs.size(); ++level) {
    if (level > 0 && level % 2 == 0) s = o::upsample2x(s);
    s = convs[level](s);
    if (activation_) s = o::leaky_relu(s, slope_);
    pyramid.push_back(s);
  }
  return pyramid;
}

template <class T>
void StylemapResizer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i), out);
}

// -------------------------------------------------------------- synthesis

template <class T>
SynthesisNetwork<T>::SynthesisNetwork(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int c0 = cfg.channels_at(cfg.stylemap_hw);
  const_input = Var<T>(rng.normal_tensor<T>(Shape{1, c0, cfg.stylemap_hw, cfg.stylemap_hw}), true);
  int in = c0;
  for (int level = 0; level < cfg.num_levels(); ++level) {
    const int out = cfg.channels_at(cfg.level_resolution(level));
    convs.emplace_back(in, out, 3, T(1), rng, /*with_bias=*/false);
    affine_gamma.emplace_back(out, out, 1, T(1), rng, true, T(1));
    affine_beta.emplace_back(out, out, 1, T(1), rng, true, T(0));
    in = out;
  }
  to_rgb = EqualConv2d<T>(in, 3, 1, T(1), rng);
}

template <class T>
Var<T> SynthesisNetwork<T>::operator()(const std::vector<Var<T>>& pyramid) const {
  if (pyramid.size() != convs.size())
    throw ShapeError("pyramid has " + std::to_string(pyramid.size()) + " levels, synthesis expects " +
                     std::to_string(convs.size()));
  const int n = pyramid[0].shape()[0];
  for (size_t level = 0; level < pyramid.size(); ++level)
    if (pyramid[level].shape() != cfg_.level_shape(static_cast<int>(level), n))
      throw ShapeError("pyramid level " + std::to_string(level) + " has shape " + pyramid[level].shape().str() +
                       ", expected " + cfg_.level_shape(static_cast<int>(level), n).str());
  const T slope = static_cast<T>(cfg_.lrelu_slope);
  const T eps = static_cast<T>(cfg_.norm_eps);
  const Shape s0 = const_input.shape();
  Var<T> h = o::broadcast_to(const_input, Shape{n, s0[1], s0[2], s0[3]});
  for (size_t level = 0; level < convs.size(); ++level) {
    if (level > 0 && level % 2 == 0) h = o::upsample2x(h);
    h = convs[level](h);
    h = modulate(h, affine_gamma[level](pyramid[level]), affine_beta[level](pyramid[level]), cfg_.norm, eps);
    h = o::leaky_relu(h, slope);
  }
  return to_rgb(h);
}

template <class T>
void SynthesisNetwork<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".const", const_input});
  for (size_t i = 0; i < convs.size(); ++i) {
    const std::string l = std::to_string(i);
    convs[i].collect(prefix + ".conv" + l, out);
    affine_gamma[i].collect(prefix + ".affine_gamma" + l, out);
    affine_beta[i].collect(prefix + ".affine_beta" + l, out);
  }
  to_rgb.collect(prefix + ".to_rgb", out);
}

// ------------------------------------------------------- encoder / critic

template <class T>
DownBlock<T>::DownBlock(int in_ch, int out_ch, T slope, Rng& rng)
    : conv0(in_ch, in_ch, 3, kSqrt2<T>, rng),
      conv1(in_ch, out_ch, 3, kSqrt2<T>, rng),
      skip(in_ch, out_ch, 1, T(1), rng, /*with_bias=*/false),
      slope_(slope) {}

template <class T>
Var<T> DownBlock<T>::operator()(const Var<T>& x) const {
  Var<T> h = o::leaky_relu(conv0(x), slope_);
  h = o::leaky_relu(conv1(o::avg_pool2x(h)), slope_);
  const Var<T> s = skip(o::avg_pool2x(x));
  return o::mul_scalar(o::add(h, s), T(1) / kSqrt2<T>);
}

template <class T>
void DownBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  conv0.collect(prefix + ".conv0", out);
  conv1.collect(prefix + ".conv1", out);
  skip.collect(prefix + ".skip", out);
}

template <class T>
Encoder<T>::Encoder(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  const T slope = static_cast<T>(cfg.lrelu_slope);
  from_rgb = EqualConv2d<T>(3, cfg.channels_at(cfg.image_size), 1, kSqrt2<T>, rng);
  for (int r = cfg.image_size; r > cfg.stylemap_hw; r /= 2)
    blocks.emplace_back(cfg.channels_at(r), cfg.channels_at(r / 2), slope, rng);
  const int c = cfg.channels_at(cfg.stylemap_hw);
  final_conv = EqualConv2d<T>(c, c, 3, kSqrt2<T>, rng);
  project = EqualConv2d<T>(c, cfg.stylemap_channels, 1, T(1), rng);
}

template <class T>
Var<T> Encoder<T>::operator()(const Var<T>& x) const {
  const Shape want = cfg_.image_shape(x.shape().rank() == 4 ? x.shape()[0] : 0);
  if (x.shape() != want) throw ShapeError("encoder input " + x.shape().str() + ", expected " + want.str());
  const T slope = static_cast<T>(cfg_.lrelu_slope);
  Var<T> h = o::leaky_relu(from_rgb(x), slope);
  for (const auto& b : blocks) h = b(h);
  h = o::leaky_relu(final_conv(h), slope);
  return project(h);
}

template <class T>
void Encoder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  from_rgb.collect(prefix + ".from_rgb", out);
  for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  final_conv.collect(prefix + ".final_conv", out);
  project.collect(prefix + ".project", out);
}

template <class T>
Var<T> minibatch_stddev(const Var<T>& x, int group_size) {
  const Shape s = x.shape();
  const int n = s[0];
  int g = std::min(group_size, n);
  while (n % g) --g;
  const int m = n / g;
  const int feat = s[1] * s[2] * s[3];
  const Var<T> y = o::reshape(x, Shape{g, m, feat});
  const Var<T> mu = o::mul_scalar(o::sum_to(y, Shape{1, m, feat}), T(1) / static_cast<T>(g));
  const Var<T> d = o::sub(y, mu);
  const Var<T> var = o::mul_scalar(o::sum_to(o::mul(d, d), Shape{1, m, feat}), T(1) / static_cast<T>(g));
  const Var<T> sd = o::pow_scalar(o::add_scalar(var, T(1e-8)), T(0.5));
  const Var<T> stat = o::mul_scalar(o::sum_to(sd, Shape{1, m, 1}), T(1) / static_cast<T>(feat));
  const Var<T> tiled = o::broadcast_to(stat, Shape{g, m, s[2] * s[3]});
  return o::concat_channels(x, o::reshape(tiled, Shape{n, 1, s[2], s[3]}));
}

template <class T>
Discriminator<T>::Discriminator(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  const T slope = static_cast<T>(cfg.lrelu_slope);
  from_rgb = EqualConv2d<T>(3, cfg.channels_at(cfg.image_size), 1, kSqrt2<T>, rng);
  for (int r = cfg.image_size; r > 4; r /= 2) blocks.emplace_back(cfg.channels_at(r), cfg.channels_at(r / 2), slope, rng);
  const int c = cfg.channels_at(4);
  final_conv = EqualConv2d<T>(c + 1, c, 3, kSqrt2<T>, rng);
  fc = EqualLinear<T>(c * 16, c, kSqrt2<T>, rng);
  out = EqualLinear<T>(c, 1, T(1), rng);
}

template <class T>
Var<T> Discriminator<T>::operator()(const Var<T>& x) const {
  const Shape want = cfg_.image_shape(x.shape().rank() == 4 ? x.shape()[0] : 0);
  if (x.shape() != want) throw ShapeError("discriminator input " + x.shape().str() + ", expected " + want.str());
  const T slope = static_cast<T>(cfg_.lrelu_slope);
  Var<T> h = o::leaky_relu(from_rgb(x), slope);
  for (const auto& b : blocks) h = b(h);
  h = minibatch_stddev(h, cfg_.mbstd_group);
  h = o::leaky_relu(final_conv(h), slope);
  const int n = x.shape()[0];
  h = o::reshape(h, Shape{n, h.shape()[1] * 16});
  h = o::leaky_relu(fc(h), slope);
  return out(h);
}

template <class T>
void Discriminator<T>::collect(const std::string& prefix, ParamList<T>& out_list) const {
  from_rgb.collect(prefix + ".from_rgb", out_list);
  for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out_list);
  final_conv.collect(prefix + ".final_conv", out_list);
  fc.collect(prefix + ".fc", out_list);
  out.collect(prefix + ".out", out_list);
}

// ------------------------------------------------------------------ model

template <class T>
SpatialGan<T>::SpatialGan(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng root(seed);
  Rng rf = root.split(), rg = root.split(), re = root.split(), rd = root.split();
  mapping = MappingNetwork<T>(cfg, rf);
  resizer = StylemapResizer<T>(cfg, rg);
  synthesis = SynthesisNetwork<T>(cfg, rg);
  encoder = Encoder<T>(cfg, re);
  discriminator = Discriminator<T>(cfg, rd);
}

template <class T>
Var<T> SpatialGan<T>::synthesize(const std::vector<Var<T>>& pyramid) const {
  return synthesis(pyramid);
}

template <class T>
Var<T> SpatialGan<T>::encode(const Var<T>& x) const {
  return encoder(x);
}

template <class T>
Var<T> SpatialGan<T>::discriminate(const Var<T>& x) const {
  return discriminator(x);
}

template <class T>
ParamList<T> SpatialGan<T>::mapping_params() const {
  ParamList<T> p;
  mapping.collect("F", p);
  return p;
}

template <class T>
ParamList<T> SpatialGan<T>::generator_params() const {
  ParamList<T> p;
  resizer.collect("G.resizer", p);
  synthesis.collect("G.synthesis", p);
  return p;
}

template <class T>
ParamList<T> SpatialGan<T>::encoder_params() const {
  ParamList<T> p;
  encoder.collect("E", p);
  return p;
}

template <class T>
ParamList<T> SpatialGan<T>::discriminator_params() const {
  ParamList<T> p;
  discriminator.collect("D", p);
  return p;
}

template <class T>
ParamList<T> SpatialGan<T>::all_params() const {
  ParamList<T> p = mapping_params();
  auto g = generator_params(), e = encoder_params(), d = discriminator_params();
  p.insert(p.end(), g.begin(), g.end());
  p.insert(p.end(), e.begin(), e.end());
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

template <class T>
SpatialGan<T> SpatialGan<T>::clone() const {
  SpatialGan copy(cfg_, 0);
  copy_params(all_params(), copy.all_params());
  return copy;
}

template <class S, class D>
void copy_params(const ParamList<S>& src, const ParamList<D>& dst) {
  std::unordered_map<std::string, const Param<S>*> by_name;
  for (const auto& p : src) by_name.emplace(p.name, &p);
  for (const auto& d : dst) {
    auto it = by_name.find(d.name);
    if (it == by_name.end()) throw NotFoundError("parameter '" + d.name + "' missing from source");
    const Tensor<S>& sv = it->second->var.value();
    if (sv.shape() != d.var.value().shape())
      throw ShapeError("parameter '" + d.name + "' shape " + sv.shape().str() + " vs " + d.var.value().shape().str());
    Var<D> dv = d.var;
    Tensor<D>& target = dv.mutable_value();
    for (std::int64_t i = 0; i < sv.numel(); ++i) target[i] = static_cast<D>(sv[i]);
  }
}

template <class T>
Tensor<T> truncate(const Tensor<T>& w, T psi, const Tensor<T>& w_mean) {
  Tensor<T> out(w.shape());
  const bool bcast = w_mean.shape() != w.shape();
  const std::int64_t per = w_mean.numel();
  if (bcast && (per == 0 || w.numel() % per != 0)) throw ShapeError("truncate: mean stylemap shape mismatch");
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    const T m = w_mean[bcast ? i % per : i];
    out[i] = (T(1) - psi) * m + psi * w[i];
  }
  return out;
}

template <class T>
Tensor<T> estimate_mean_stylemap(const SpatialGan<T>& model, int samples, std::uint64_t seed) {
  ag::NoGradGuard off;
  const NetworkConfig& cfg = model.config();
  Rng rng(seed);
  std::vector<double> acc(static_cast<size_t>(cfg.stylemap_size()), 0.0);
  int done = 0;
  while (done < samples) {
    const int b = std::min(256, samples - done);
    const Var<T> w = model.map(Var<T>(rng.normal_tensor<T>(Shape{b, cfg.latent_dim})));
    for (std::int64_t i = 0; i < w.value().numel(); ++i) acc[static_cast<size_t>(i % cfg.stylemap_size())] += w.value()[i];
    done += b;
  }
  Tensor<T> mean(cfg.stylemap_shape(1));
  for (std::int64_t i = 0; i < mean.numel(); ++i) mean[i] = static_cast<T>(acc[static_cast<size_t>(i)] / samples);
  return mean;
}

template Var<float> modulate(const Var<float>&, const Var<float>&, const Var<float>&, NormMode, float);
template Var<double> modulate(const Var<double>&, const Var<double>&, const Var<double>&, NormMode, double);
template Var<float> minibatch_stddev(const Var<float>&, int);
template Var<double> minibatch_stddev(const Var<double>&, int);
template class MappingNetwork<float>;
template class MappingNetwork<double>;
template class StylemapResizer<float>;
template class StylemapResizer<double>;
template class SynthesisNetwork<float>;
template class SynthesisNetwork<double>;
template class DownBlock<float>;
template class DownBlock<double>;
template class Encoder<float>;
template class Encoder<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class SpatialGan<float>;
template class SpatialGan<double>;
template void copy_params(const ParamList<float>&, const ParamList<float>&);
template void copy_params(const ParamList<float>&, const ParamList<double>&);
template void copy_params(const ParamList<double>&, const ParamList<float>&);
template void copy_params(const ParamList<double>&, const ParamList<double>&);
template Tensor<float> truncate(const Tensor<float>&, float, const Tensor<float>&);
template Tensor<double> truncate(const Tensor<double>&, double, const Tensor<double>&);
template Tensor<float> estimate_mean_stylemap(const SpatialGan<float>&, int, std::uint64_t);
template Tensor<double> estimate_mean_stylemap(const SpatialGan<double>&, int, std::uint64_t);

}  // namespace sgan
