#include "sgan/editor.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "sgan/error.hpp"
#include "sgan/rng.hpp"

namespace sgan {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

void require_same(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
}

/// Mask for sample n; a single mask applies to every sample.
int mask_index(const Tensor<float>& mask, int n) { return mask.dim(0) == 1 ? 0 : n; }

void check_mask_batch(const Tensor<float>& mask, const Tensor<float>& target) {
  if (mask.dim(0) != 1 && mask.dim(0) != target.dim(0))
    throw ShapeError("mask batch " + std::to_string(mask.dim(0)) + " does not match " + target.shape().str());
}

/// Elementwise select at cell granularity; `m` is already at the grid of `orig`.
Tensor<float> select(const Tensor<float>& orig, const Tensor<float>& ref, const Tensor<float>& m) {
  require_same(orig, ref, "blend");
  check_mask_batch(m, orig);
  Tensor<float> out = orig;
  const int n = orig.dim(0), c = orig.dim(1), h = orig.dim(2), w = orig.dim(3);
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (m.at(mask_index(m, i), 0, y, x) == 0.f) continue;
        for (int ch = 0; ch < c; ++ch) out.at(i, ch, y, x) = ref.at(i, ch, y, x);
      }
  return out;
}

Tensor<float> mask_for(const Tensor<float>& mask, const Tensor<float>& target) {
  if (target.rank() != 4 || target.dim(2) != target.dim(3))
    throw ShapeError("expected a square [N, C, H, W] map, got " + target.shape().str());
  return shrink_mask(mask, target.dim(2));
}

void check_box(const Box& b, int h, int w, const char* which) {
  if (b.height < 0 || b.width < 0 || b.top < 0 || b.left < 0 || b.top + b.height > h || b.left + b.width > w)
    throw ConfigError(std::string("transplant: ") + which + " box out of bounds");
}

}  // namespace

void validate_mask(const Tensor<float>& mask) {
  if (mask.rank() != 4 || mask.dim(1) != 1 || mask.dim(2) != mask.dim(3))
    throw ShapeError("mask must be [N, 1, S, S], got " + mask.shape().str());
  if (!is_pow2(mask.dim(2))) throw ShapeError("mask size must be a power of two, got " + std::to_string(mask.dim(2)));
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    if (mask[i] != 0.f && mask[i] != 1.f) throw ConfigError("mask values must be 0 or 1");
}

Tensor<float> shrink_mask(const Tensor<float>& mask, int size) {
  validate_mask(mask);
  const int s = mask.dim(2);
  if (size <= 0 || size > s || s % size != 0)
    throw ShapeError("cannot shrink a " + std::to_string(s) + " mask to " + std::to_string(size));
  const int f = s / size;
  Tensor<float> out(Shape{mask.dim(0), 1, size, size});
  for (int n = 0; n < mask.dim(0); ++n)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        float m = 0;
        for (int dy = 0; dy < f && m == 0; ++dy)
          for (int dx = 0; dx < f; ++dx) m = std::max(m, mask.at(n, 0, y * f + dy, x * f + dx));
        out.at(n, 0, y, x) = m;
      }
  return out;
}

Tensor<float> blend_w(const Tensor<float>& orig, const Tensor<float>& ref, const Tensor<float>& mask) {
  return select(orig, ref, mask_for(mask, orig));
}

Pyramid blend_wplus(const Pyramid& orig, const Pyramid& ref, const Tensor<float>& mask) {
  if (orig.size() != ref.size()) throw ShapeError("blend_wplus: pyramids have different depths");
  Pyramid out;
  for (size_t i = 0; i < orig.size(); ++i) out.push_back(select(orig[i], ref[i], mask_for(mask, orig[i])));
  return out;
}

Tensor<float> transplant(const Tensor<float>& orig, const Tensor<float>& ref,
                         const std::vector<TransplantRegion>& regions) {
  require_same(orig, ref, "transplant");
  if (orig.rank() != 4) throw ShapeError("transplant: expected [N, C, H, W]");
  const int h = orig.dim(2), w = orig.dim(3);
  for (const auto& r : regions) {
    check_box(r.src, h, w, "source");
    check_box(r.dst, h, w, "destination");
    if (r.src.height != r.dst.height || r.src.width != r.dst.width)
      throw ConfigError("transplant: source and destination boxes differ in size");
  }
  Tensor<float> out = orig;
  for (const auto& r : regions)
    for (int n = 0; n < orig.dim(0); ++n)
      for (int c = 0; c < orig.dim(1); ++c)
        for (int y = 0; y < r.src.height; ++y)
          for (int x = 0; x < r.src.width; ++x)
            out.at(n, c, r.dst.top + y, r.dst.left + x) = ref.at(n, c, r.src.top + y, r.src.left + x);
  return out;
}

Tensor<float> interpolate(const Tensor<float>& a, const Tensor<float>& b, float t) {
  require_same(a, b, "interpolate");
  Tensor<float> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = (1.f - t) * a[i] + t * b[i];
  return out;
}

Pyramid style_mix(const Pyramid& orig, const Pyramid& ref, const std::set<int>& levels, const Tensor<float>* mask) {
  if (orig.size() != ref.size()) throw ShapeError("style_mix: pyramids have different depths");
  for (int l : levels)
    if (l < 0 || l >= static_cast<int>(orig.size())) throw ConfigError("style_mix: level " + std::to_string(l) + " out of range");
  Pyramid out;
  for (size_t i = 0; i < orig.size(); ++i) {
    require_same(orig[i], ref[i], "style_mix");
    if (!levels.count(static_cast<int>(i)))
      out.push_back(orig[i]);
    else if (mask)
      out.push_back(select(orig[i], ref[i], mask_for(*mask, orig[i])));
    else
      out.push_back(ref[i]);
  }
  return out;
}

SemanticDirection calibrate_direction(const SpatialGan<float>& model, Tensor<float> direction, int samples,
                                      std::uint64_t seed) {
  const NetworkConfig& cfg = model.config();
  const int c = cfg.stylemap_channels, hw = cfg.stylemap_hw;
  const bool per_cell = direction.rank() == 1;
  if (per_cell ? direction.dim(0) != c : direction.shape() != Shape{c, hw, hw})
    throw ShapeError("semantic direction must be [C] or [C, H, W] of the stylemap, got " + direction.shape().str());
  if (samples < 2) throw ConfigError("calibration needs at least two samples");
  double norm = 0;
  for (std::int64_t i = 0; i < direction.numel(); ++i) norm += double(direction[i]) * direction[i];
  norm = std::sqrt(norm);
  if (!(norm > 0) || !std::isfinite(norm)) throw ConfigError("semantic direction must be non-zero and finite");
  for (std::int64_t i = 0; i < direction.numel(); ++i) direction[i] = static_cast<float>(direction[i] / norm);

  Rng rng(seed);
  double sum = 0, sq = 0;
  std::int64_t count = 0;
  ag::NoGradGuard off;
  for (int done = 0; done < samples;) {
    const int b = std::min(512, samples - done);
    const Tensor<float> w = model.map(Var<float>(rng.normal_tensor<float>(Shape{b, cfg.latent_dim}))).value();
    for (int n = 0; n < b; ++n) {
      if (per_cell) {
        for (int y = 0; y < hw; ++y)
          for (int x = 0; x < hw; ++x) {
            double p = 0;
            for (int ch = 0; ch < c; ++ch) p += double(w.at(n, ch, y, x)) * direction[ch];
            sum += p;
            sq += p * p;
            ++count;
          }
      } else {
        double p = 0;
        const float* row = w.ptr() + static_cast<std::int64_t>(n) * direction.numel();
        for (std::int64_t i = 0; i < direction.numel(); ++i) p += double(row[i]) * direction[i];
        sum += p;
        sq += p * p;
        ++count;
      }
    }
    done += b;
  }
  const double mean = sum / count;
  SemanticDirection out;
  out.direction = std::move(direction);
  out.sigma = std::sqrt(std::max(0.0, sq / count - mean * mean));
  return out;
}

Tensor<float> semantic_edit(const Tensor<float>& w, const SemanticDirection& dir, double strength,
                            const Tensor<float>* region) {
  if (w.rank() != 4) throw ShapeError("semantic_edit: expected a stylemap batch");
  const int n = w.dim(0), c = w.dim(1), h = w.dim(2), wd = w.dim(3);
  if (dir.per_cell() ? dir.direction.dim(0) != c : dir.direction.shape() != Shape{c, h, wd})
    throw ShapeError("semantic_edit: direction " + dir.direction.shape().str() + " does not fit " + w.shape().str());
  Tensor<float> m;
  if (region) {
    m = shrink_mask(*region, h);
    check_mask_batch(m, w);
  }
  const float step = static_cast<float>(strength * dir.sigma);
  Tensor<float> out = w;
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < wd; ++x) {
        if (region && m.at(mask_index(m, i), 0, y, x) == 0.f) continue;
        for (int ch = 0; ch < c; ++ch) {
          const float d = dir.per_cell() ? dir.direction[ch] : dir.direction[(static_cast<std::int64_t>(ch) * h + y) * wd + x];
          out.at(i, ch, y, x) += step * d;
        }
      }
  return out;
}

Tensor<float> fit_semantic_direction(const Tensor<float>& stylemaps, const std::vector<int>& labels, double l2) {
  if (stylemaps.rank() != 4) throw ShapeError("fit_semantic_direction: expected [N, C, H, W]");
  const int n = stylemaps.dim(0);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("fit_semantic_direction: one label per stylemap");
  int pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ConfigError("fit_semantic_direction: labels must be 0 or 1");
    pos += l;
  }
  if (pos == 0 || pos == n) throw ConfigError("fit_semantic_direction: need examples of both classes");
  const int d = static_cast<int>(stylemaps.numel() / n);

  // Iteratively reweighted least squares; the last column is an unpenalized bias.
  Eigen::MatrixXd x(n, d + 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) x(i, k) = stylemaps[static_cast<std::int64_t>(i) * d + k];
    x(i, d) = 1;
    y(i) = labels[static_cast<size_t>(i)];
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, l2 * n);
  penalty(d) = 0;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd p = (1.0 + (-(x * beta)).array().exp()).inverse().matrix();
    const Eigen::VectorXd wts = (p.array() * (1 - p.array())).max(1e-10).matrix();
    const Eigen::VectorXd g = x.transpose() * (y - p) - penalty.cwiseProduct(beta);
    Eigen::MatrixXd hess = x.transpose() * wts.asDiagonal() * x;
    hess.diagonal() += penalty;
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd delta = hess.ldlt().solve(g);
    beta += delta;
    if (delta.norm() < 1e-10 * (1 + beta.norm())) break;
  }
  const double norm = beta.head(d).norm();
  if (!(norm > 0) || !std::isfinite(norm)) throw Error("fit_semantic_direction: classifier did not converge");
  Tensor<float> out(Shape{stylemaps.dim(1), stylemaps.dim(2), stylemaps.dim(3)});
  for (int k = 0; k < d; ++k) out[k] = static_cast<float>(beta(k) / norm);
  return out;
}

BlendSpace blend_space_from_string(const std::string& s) {
  if (s == "wplus") return BlendSpace::kWPlus;
  if (s == "w") return BlendSpace::kW;
  throw ConfigError("unknown blend space '" + s + "' (expected wplus or w)");
}

Tensor<float> Editor::project(const Tensor<float>& images) const {
  if (images.shape() != model_->config().image_shape(images.rank() == 4 ? images.dim(0) : 0))
    throw ShapeError("expected images " + model_->config().image_shape(1).str() + ", got " + images.shape().str());
  ag::NoGradGuard off;
  return model_->encode(Var<float>(images)).value();
}

Pyramid Editor::pyramid(const Tensor<float>& w) const {
  ag::NoGradGuard off;
  Pyramid out;
  for (const auto& v : model_->resize(Var<float>(w))) out.push_back(v.value());
  return out;
}

Tensor<float> Editor::synthesize(const Pyramid& p) const {
  ag::NoGradGuard off;
  std::vector<Var<float>> vars;
  for (const auto& t : p) vars.emplace_back(t);
  return model_->synthesize(vars).value();
}

Tensor<float> Editor::generate(const Tensor<float>& w) const {
  ag::NoGradGuard off;
  return model_->generate(Var<float>(w)).value();
}

Tensor<float> Editor::local_edit(const Tensor<float>& x, const Tensor<float>& x_ref, const Tensor<float>& mask,
                                 BlendSpace space) const {
  validate_mask(mask);
  if (mask.dim(2) != model_->config().image_size)
    throw ShapeError("mask must match the image size " + std::to_string(model_->config().image_size));
  const Tensor<float> w = project(x), w_ref = project(x_ref);
  if (space == BlendSpace::kW) return generate(blend_w(w, w_ref, mask));
  return synthesize(blend_wplus(pyramid(w), pyramid(w_ref), mask));
}

Tensor<float> Editor::transplant(const Tensor<float>& x, const Tensor<float>& x_ref,
                                 const std::vector<TransplantRegion>& regions) const {
  return generate(sgan::transplant(project(x), project(x_ref), regions));
}

Tensor<float> Editor::interpolate(const Tensor<float>& x_a, const Tensor<float>& x_b, float t) const {
  return generate(sgan::interpolate(project(x_a), project(x_b), t));
}

Tensor<float> Editor::style_mix(const Tensor<float>& x, const Tensor<float>& x_ref, const std::set<int>& levels,
                                const Tensor<float>* mask) const {
  return synthesize(sgan::style_mix(pyramid(project(x)), pyramid(project(x_ref)), levels, mask));
}

Tensor<float> Editor::semantic_edit(const Tensor<float>& x, const SemanticDirection& dir, double strength,
                                    const Tensor<float>* region) const {
  return generate(sgan::semantic_edit(project(x), dir, strength, region));
}

}  // namespace sgan
