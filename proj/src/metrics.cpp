#include "sgan/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "sgan/error.hpp"
#include "sgan/ops.hpp"
#include "sgan/rng.hpp"

namespace sgan {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kNegTol = 1e-8;

/// Eigenvalues of a symmetric matrix with small negatives clipped.
Eigen::VectorXd clipped_eigenvalues(const Eigen::SelfAdjointEigenSolver<Mat>& es, const char* what) {
  if (es.info() != Eigen::Success) throw Error(std::string("frechet_distance: eigendecomposition failed for ") + what);
  Eigen::VectorXd l = es.eigenvalues();
  const double scale = std::max(1.0, l.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    if (l(i) < -kNegTol * scale) throw ConfigError(std::string("frechet_distance: ") + what + " is not positive semidefinite");
    l(i) = std::max(0.0, l(i));
  }
  return l;
}

Mat sqrt_psd(const Mat& m, const char* what) {
  const Eigen::SelfAdjointEigenSolver<Mat> es(m);
  const Eigen::VectorXd l = clipped_eigenvalues(es, what);
  return es.eigenvectors() * l.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

Mat to_mat(const GaussianStats& s) { return Eigen::Map<const RowMat>(s.cov.data(), s.d, s.d); }

template <class F>
void in_batches(int n, int batch, F&& f) {
  for (int b = 0; b < n; b += batch) f(b, std::min(batch, n - b));
}

}  // namespace

GaussianStats gaussian_stats(const FeatureSet& f) {
  if (f.n < 2) throw ConfigError("gaussian_stats: need at least two feature rows");
  for (double v : f.rows)
    if (!std::isfinite(v)) throw ConfigError("gaussian_stats: non-finite feature");
  const Eigen::Map<const RowMat> x(f.rows.data(), f.n, f.d);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Mat centered = x.rowwise() - mu;
  const Mat cov = centered.transpose() * centered / static_cast<double>(f.n - 1);
  GaussianStats s;
  s.d = f.d;
  s.mean.assign(mu.data(), mu.data() + f.d);
  s.cov.resize(static_cast<size_t>(f.d) * f.d);
  Eigen::Map<RowMat>(s.cov.data(), f.d, f.d) = cov;
  s.extractor_id = f.extractor_id;
  return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.extractor_id != b.extractor_id)
    throw ConfigError("frechet_distance: features come from different extractors ('" + a.extractor_id + "' vs '" +
                      b.extractor_id + "')");
  if (a.d != b.d) throw ConfigError("frechet_distance: feature dimensions differ");
  const Mat ca = to_mat(a), cb = to_mat(b);
  double mean_term = 0;
  for (int i = 0; i < a.d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Mat sa = sqrt_psd(ca, "first covariance");
  clipped_eigenvalues(Eigen::SelfAdjointEigenSolver<Mat>(cb, Eigen::EigenvaluesOnly), "second covariance");
  // (S_a S_b)^(1/2) is similar to (S_a^(1/2) S_b S_a^(1/2))^(1/2), which is symmetric.
  Mat m = sa * cb * sa;
  m = (m + m.transpose()) / 2;
  const Eigen::VectorXd l =
      clipped_eigenvalues(Eigen::SelfAdjointEigenSolver<Mat>(m, Eigen::EigenvaluesOnly), "covariance product");
  const double d = mean_term + ca.trace() + cb.trace() - 2 * l.cwiseSqrt().sum();
  return std::max(0.0, d);
}

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  if (a.extractor_id != b.extractor_id)
    throw ConfigError("frechet_distance: features come from different extractors");
  return frechet_distance(gaussian_stats(a), gaussian_stats(b));
}

FeatureSet image_features(const FeatureExtractor<float>& feat, const Tensor<float>& images) {
  ag::NoGradGuard off;
  const std::vector<Var<float>> maps = feat.features(Var<float>(images));
  const int n = images.dim(0);
  FeatureSet out;
  out.n = n;
  out.extractor_id = feat.id();
  for (const auto& m : maps) out.d += m.shape()[1];
  const Shape last = maps.back().shape();
  if (last[2] < 2 || last[3] < 2) throw ShapeError("image_features: images too small for the extractor");
  out.d += 4 * last[1];
  out.rows.reserve(static_cast<size_t>(n) * out.d);
  for (int i = 0; i < n; ++i) {
    for (const auto& mv : maps) {
      const Tensor<float>& m = mv.value();
      const int c = m.dim(1), h = m.dim(2), w = m.dim(3);
      for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) s += m.at(i, ch, y, x);
        out.rows.push_back(s / (h * w));
      }
    }
    const Tensor<float>& m = maps.back().value();
    const int c = m.dim(1), h = m.dim(2), w = m.dim(3);
    for (int ch = 0; ch < c; ++ch)
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) {
          double s = 0;
          int cnt = 0;
          for (int y = qy * h / 2; y < (qy + 1) * h / 2; ++y)
            for (int x = qx * w / 2; x < (qx + 1) * w / 2; ++x, ++cnt) s += m.at(i, ch, y, x);
          out.rows.push_back(s / cnt);
        }
  }
  return out;
}

FeatureSet concat(FeatureSet a, const FeatureSet& b) {
  if (a.n == 0) return b;
  if (b.n == 0) return a;
  if (a.d != b.d || a.extractor_id != b.extractor_id) throw ConfigError("concat: incompatible feature sets");
  a.rows.insert(a.rows.end(), b.rows.begin(), b.rows.end());
  a.n += b.n;
  return a;
}

FeatureSet dataset_features(const FeatureExtractor<float>& feat, const ImageSource& src, int n, int batch) {
  n = static_cast<int>(std::min<std::int64_t>(n, src.size()));
  FeatureSet out;
  in_batches(n, batch, [&](int b, int k) {
    std::vector<std::int64_t> idx(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = b + i;
    out = concat(std::move(out), image_features(feat, gather(src, idx)));
  });
  return out;
}

FeatureSet generated_features(const FeatureExtractor<float>& feat, const SpatialGan<float>& model, int n,
                              std::uint64_t seed, int batch) {
  Rng rng(seed);
  FeatureSet out;
  ag::NoGradGuard off;
  in_batches(n, batch, [&](int, int k) {
    const Var<float> z(rng.normal_tensor<float>(Shape{k, model.config().latent_dim}));
    out = concat(std::move(out), image_features(feat, model.generate(model.map(z)).value()));
  });
  return out;
}

double fid_lerp(const SpatialGan<float>& model, const ImageSource& test, const FeatureSet& reference,
                const FeatureExtractor<float>& feat, int n_samples, std::uint64_t seed, std::optional<float> fixed_t,
                int batch) {
  const int t_count = static_cast<int>(test.size());
  if (t_count < 2) throw ConfigError("fid_lerp: need at least two test images");
  const Editor ed(model);
  const NetworkConfig& cfg = model.config();
  const int cells = cfg.stylemap_size();
  std::vector<float> w(static_cast<size_t>(t_count) * cells);
  in_batches(t_count, batch, [&](int b, int k) {
    std::vector<std::int64_t> idx(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = b + i;
    const Tensor<float> p = ed.project(gather(test, idx));
    std::copy(p.ptr(), p.ptr() + p.numel(), w.begin() + static_cast<std::ptrdiff_t>(b) * cells);
  });

  Rng rng(seed);
  FeatureSet out;
  in_batches(n_samples, batch, [&](int, int k) {
    Tensor<float> mix(cfg.stylemap_shape(k));
    for (int s = 0; s < k; ++s) {
      const auto i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(t_count)));
      auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(t_count - 1)));
      if (j >= i) ++j;
      const double u = rng.uniform();
      const float t = fixed_t ? *fixed_t : static_cast<float>(u);
      const float* a = w.data() + i * cells;
      const float* c = w.data() + j * cells;
      float* dst = mix.ptr() + static_cast<std::int64_t>(s) * cells;
      for (int q = 0; q < cells; ++q) dst[q] = (1.f - t) * a[q] + t * c[q];
    }
    out = concat(std::move(out), image_features(feat, ed.generate(mix)));
  });
  return frechet_distance(out, reference);
}

ReconstructionMetrics reconstruction_metrics(const SpatialGan<float>& model, const ImageSource& src, int n,
                                             const FeatureExtractor<float>& feat, int batch) {
  n = static_cast<int>(std::min<std::int64_t>(n, src.size()));
  const Editor ed(model);
  ReconstructionMetrics r;
  ag::NoGradGuard off;
  in_batches(n, batch, [&](int b, int k) {
    std::vector<std::int64_t> idx(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = b + i;
    const Var<float> x(gather(src, idx));
    const Var<float> rec(ed.reconstruct(x.value()));
    r.mse += static_cast<double>(mse(rec, x).value()[0]) * k;
    r.perceptual += static_cast<double>(perceptual_loss(x, rec, feat).value()[0]) * k;
  });
  r.count = n;
  if (n > 0) {
    r.mse /= n;
    r.perceptual /= n;
  }
  return r;
}

SrcRefMse mse_src_ref(const Tensor<float>& output, const Tensor<float>& original, const Tensor<float>& reference,
                      const Tensor<float>& merged_mask) {
  if (output.shape() != original.shape() || output.shape() != reference.shape())
    throw ShapeError("mse_src_ref: image shapes differ");
  validate_mask(merged_mask);
  const int n = output.dim(0), c = output.dim(1), h = output.dim(2), w = output.dim(3);
  if (merged_mask.dim(2) != h || (merged_mask.dim(0) != 1 && merged_mask.dim(0) != n))
    throw ShapeError("mse_src_ref: mask does not match the images");
  double src = 0, ref = 0;
  std::int64_t ns = 0, nr = 0;
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool in = merged_mask.at(merged_mask.dim(0) == 1 ? 0 : i, 0, y, x) != 0.f;
        for (int ch = 0; ch < c; ++ch) {
          const double o = output.at(i, ch, y, x);
          const double d = o - (in ? reference : original).at(i, ch, y, x);
          (in ? ref : src) += d * d;
          ++(in ? nr : ns);
        }
      }
  SrcRefMse r;
  r.src_empty = ns == 0;
  r.ref_empty = nr == 0;
  r.mse_src = ns ? src / static_cast<double>(ns) : 0.0;
  r.mse_ref = nr ? ref / static_cast<double>(nr) : 0.0;
  return r;
}

Tensor<float> merge_masks(const Tensor<float>& a, const Tensor<float>& b) {
  validate_mask(a);
  validate_mask(b);
  if (a.shape() != b.shape()) throw ShapeError("merge_masks: shapes differ");
  Tensor<float> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = std::max(a[i], b[i]);
  return out;
}

double mask_iou(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mask_iou: shapes differ");
  std::int64_t inter = 0, uni = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const bool x = a[i] != 0.f, y = b[i] != 0.f;
    inter += x && y;
    uni += x || y;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::vector<std::pair<int, int>> iou_greedy_pairs(const std::vector<Tensor<float>>& masks) {
  struct Cand {
    double iou;
    int i, j;
  };
  std::vector<Cand> cands;
  const int n = static_cast<int>(masks.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) cands.push_back({mask_iou(masks[static_cast<size_t>(i)], masks[static_cast<size_t>(j)]), i, j});
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.iou > b.iou; });
  std::vector<char> used(static_cast<size_t>(n), 0);
  std::vector<std::pair<int, int>> out;
  for (const auto& c : cands) {
    if (used[static_cast<size_t>(c.i)] || used[static_cast<size_t>(c.j)]) continue;
    used[static_cast<size_t>(c.i)] = used[static_cast<size_t>(c.j)] = 1;
    out.emplace_back(c.i, c.j);
  }
  return out;
}

EditMse edit_mse(const SpatialGan<float>& model, const ImageSource& src, const std::string& semantic, int n) {
  if (!src.has_mask(semantic)) throw NotFoundError("edit_mse: dataset has no '" + semantic + "' masks");
  n = static_cast<int>(std::min<std::int64_t>(n, src.size()));
  std::vector<Tensor<float>> masks;
  for (int i = 0; i < n; ++i) masks.push_back(src.mask(i, semantic));
  const Editor ed(model);
  EditMse r;
  int ns = 0, nr = 0;
  for (const auto& [a, b] : iou_greedy_pairs(masks)) {
    const Tensor<float> x = src.get(a), y = src.get(b);
    const Tensor<float> m = merge_masks(masks[static_cast<size_t>(a)], masks[static_cast<size_t>(b)]);
    const SrcRefMse e = mse_src_ref(ed.local_edit(x, y, m), x, y, m);
    ++r.pairs;
    if (e.src_empty)
      ++r.src_empty;
    else {
      r.mse_src += e.mse_src;
      ++ns;
    }
    if (e.ref_empty)
      ++r.ref_empty;
    else {
      r.mse_ref += e.mse_ref;
      ++nr;
    }
  }
  if (ns) r.mse_src /= ns;
  if (nr) r.mse_ref /= nr;
  return r;
}

Json evaluate(const SpatialGan<float>& model, const ImageSource& train, const ImageSource& test,
              const EvalOptions& opt, const std::string& config_hash) {
  const RandomConvPyramid<float> feat;
  auto wants = [&](const char* m) { return std::find(opt.metrics.begin(), opt.metrics.end(), m) != opt.metrics.end(); };
  for (const auto& m : opt.metrics)
    if (m != "fid" && m != "fidlerp" && m != "recon" && m != "editmse") throw ConfigError("unknown metric '" + m + "'");

  Json metrics = Json::array();
  auto add = [&](const std::string& name, double value, Json extra = Json::object()) {
    extra["name"] = name;
    extra["value"] = value;
    metrics.push_back(extra);
  };
  FeatureSet train_feats;
  if (wants("fid") || wants("fidlerp")) train_feats = dataset_features(feat, train, opt.fid_samples);
  if (wants("fid")) {
    const FeatureSet gen = generated_features(feat, model, opt.fid_samples, opt.seed);
    add("fid", frechet_distance(gen, train_feats), {{"samples", gen.n}, {"reference_samples", train_feats.n}});
  }
  if (wants("fidlerp"))
    add("fid_lerp", fid_lerp(model, test, train_feats, feat, opt.fid_samples, opt.seed ^ 0x1e7b),
        {{"samples", opt.fid_samples}, {"reference_samples", train_feats.n}, {"projected", test.size()}});
  if (wants("recon")) {
    const ReconstructionMetrics r = reconstruction_metrics(model, test, opt.recon_samples, feat);
    add("recon_mse", r.mse, {{"samples", r.count}});
    add("recon_perceptual", r.perceptual, {{"samples", r.count}});
  }
  if (wants("editmse")) {
    const EditMse e = edit_mse(model, test, opt.semantic, opt.edit_samples);
    const Json extra{{"pairs", e.pairs}, {"pairing", "iou-greedy"}, {"semantic", opt.semantic}};
    Json src = extra, ref = extra;
    src["empty_regions"] = e.src_empty;
    ref["empty_regions"] = e.ref_empty;
    add("mse_src", e.mse_src, src);
    add("mse_ref", e.mse_ref, ref);
  }
  return Json{{"config_hash", config_hash},
              {"seed", opt.seed},
              {"feature_extractor", feat.id()},
              {"metrics", metrics}};
}

}  // namespace sgan
