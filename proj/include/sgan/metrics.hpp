#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sgan/config.hpp"
#include "sgan/data_io.hpp"
#include "sgan/editor.hpp"
#include "sgan/losses.hpp"
#include "sgan/networks.hpp"

namespace sgan {

/// N x d feature rows (row-major) tagged with the extractor that made them.
struct FeatureSet {
  int n = 0, d = 0;
  std::vector<double> rows;
  std::string extractor_id;

  double at(int i, int k) const { return rows[static_cast<size_t>(i) * d + k]; }
};

/// Mean and unbiased (N - 1) covariance.
struct GaussianStats {
  int d = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // d x d row-major
  std::string extractor_id;
};

GaussianStats gaussian_stats(const FeatureSet& f);

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)). Square roots come
/// from symmetric eigendecompositions; eigenvalues down to -1e-8 (relative to
/// the largest) are clipped to zero, anything more negative is an error.
/// Throws ConfigError on mismatched extractors or dimensions.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

/// Per-image features for FID: the channel means of every scale of the
/// extractor plus the coarsest scale average-pooled to 2x2.
FeatureSet image_features(const FeatureExtractor<float>& feat, const Tensor<float>& images);
FeatureSet concat(FeatureSet a, const FeatureSet& b);

/// Features of `n` dataset items (the first n, or all if n exceeds the size).
FeatureSet dataset_features(const FeatureExtractor<float>& feat, const ImageSource& src, int n, int batch = 64);
/// Features of n images generated from N(0, I) latents.
FeatureSet generated_features(const FeatureExtractor<float>& feat, const SpatialGan<float>& model, int n,
                              std::uint64_t seed, int batch = 64);

/// Projects test images, lerps random pairs with t ~ U(0, 1) (or `fixed_t`),
/// synthesizes and measures FID against `reference`.
double fid_lerp(const SpatialGan<float>& model, const ImageSource& test, const FeatureSet& reference,
                const FeatureExtractor<float>& feat, int n_samples, std::uint64_t seed,
                std::optional<float> fixed_t = std::nullopt, int batch = 64);

struct ReconstructionMetrics {
  double mse = 0, perceptual = 0;
  int count = 0;
};

/// Mean over items of MSE and perceptual distance between each target and
/// its encode-decode reconstruction.
ReconstructionMetrics reconstruction_metrics(const SpatialGan<float>& model, const ImageSource& src, int n,
                                             const FeatureExtractor<float>& feat, int batch = 64);

/// MSE to the original outside the mask and to the reference inside it.
/// An empty region reports 0 and sets its flag.
struct SrcRefMse {
  double mse_src = 0, mse_ref = 0;
  bool src_empty = false, ref_empty = false;
};

SrcRefMse mse_src_ref(const Tensor<float>& output, const Tensor<float>& original, const Tensor<float>& reference,
                      const Tensor<float>& merged_mask);

/// Elementwise union of two binary masks.
Tensor<float> merge_masks(const Tensor<float>& a, const Tensor<float>& b);
double mask_iou(const Tensor<float>& a, const Tensor<float>& b);

/// Greedy matching on mask IoU: repeatedly take the unpaired pair with the
/// highest IoU (ties broken by lowest indices). Each index is used once.
std::vector<std::pair<int, int>> iou_greedy_pairs(const std::vector<Tensor<float>>& masks);

struct EditMse {
  double mse_src = 0, mse_ref = 0;
  int pairs = 0, src_empty = 0, ref_empty = 0;
};

/// Pairs the first n items by IoU of their `semantic` masks, edits each
/// original with its partner inside the merged mask (w+ blending) and
/// averages MSE_src / MSE_ref over pairs with non-empty regions.
EditMse edit_mse(const SpatialGan<float>& model, const ImageSource& src, const std::string& semantic, int n);

struct EvalOptions {
  std::vector<std::string> metrics{"fid", "fidlerp", "recon", "editmse"};
  std::uint64_t seed = 0;
  /// Generated and reference sample counts for FID-type metrics.
  int fid_samples = 512;
  int recon_samples = 256;
  int edit_samples = 64;
  std::string semantic = "blob";
};

/// Runs the requested metrics. `train` feeds FID references, `test` the
/// projection-based metrics. Returns the report document.
Json evaluate(const SpatialGan<float>& model, const ImageSource& train, const ImageSource& test,
              const EvalOptions& opt, const std::string& config_hash);

}  // namespace sgan
