#pragma once

// Latent-space editing on stylemaps (w) and their resized pyramids (w+).
// Masks are binary [N or 1, 1, S, S] tensors; 1 selects the reference.

#include <cstdint>
#include <set>
#include <vector>

#include "sgan/networks.hpp"

namespace sgan {

using Pyramid = std::vector<Tensor<float>>;

/// Throws ConfigError unless every entry is exactly 0 or 1, ShapeError unless
/// the mask is [N, 1, S, S] with S a power of two.
void validate_mask(const Tensor<float>& mask);

/// Non-overlapping max pooling to [N, 1, size, size]; `size` must divide the
/// mask size.
Tensor<float> shrink_mask(const Tensor<float>& mask, int size);

/// m * ref + (1 - m) * orig with m shrunk to the stylemap grid.
Tensor<float> blend_w(const Tensor<float>& orig, const Tensor<float>& ref, const Tensor<float>& mask);
/// blend_w per pyramid level, the mask shrunk to each level's resolution.
Pyramid blend_wplus(const Pyramid& orig, const Pyramid& ref, const Tensor<float>& mask);

/// Stylemap-cell rectangle.
struct Box {
  int top = 0, left = 0, height = 0, width = 0;
  bool empty() const { return height == 0 || width == 0; }
};

struct TransplantRegion {
  Box src;  // in the reference
  Box dst;  // in the original
};

/// Copies each src crop of `ref` onto the dst box of `orig`, in order.
/// Boxes must have equal size and lie inside the stylemap grid.
Tensor<float> transplant(const Tensor<float>& orig, const Tensor<float>& ref,
                         const std::vector<TransplantRegion>& regions);

/// (1 - t) * a + t * b
Tensor<float> interpolate(const Tensor<float>& a, const Tensor<float>& b, float t);

/// Levels in `levels` come from `ref`, the rest from `orig`. With a mask the
/// chosen levels are only replaced inside it.
Pyramid style_mix(const Pyramid& orig, const Pyramid& ref, const std::set<int>& levels,
                  const Tensor<float>* mask = nullptr);

/// Unit direction in stylemap space: either [C, H, W] or a per-cell [C]
/// vector applied at every cell. `sigma` is the spread of F(z) along it, so
/// strengths are in standard deviations.
struct SemanticDirection {
  Tensor<float> direction;
  double sigma = 1.0;

  bool per_cell() const { return direction.rank() == 1; }
};

/// Normalizes `direction` and measures sigma from `samples` mapped latents.
SemanticDirection calibrate_direction(const SpatialGan<float>& model, Tensor<float> direction,
                                      int samples = 10000, std::uint64_t seed = 0);

/// w + strength * sigma * direction, restricted to the cells where `region`
/// (a mask at any power-of-two resolution >= the stylemap) is set.
Tensor<float> semantic_edit(const Tensor<float>& w, const SemanticDirection& dir, double strength,
                            const Tensor<float>* region = nullptr);

/// Normal of an L2-regularized logistic regression separating the labelled
/// stylemaps [N, C, H, W] (labels 0/1), unit norm, pointing to label 1.
/// Shape [C, H, W]. Throws ConfigError if only one class is present.
Tensor<float> fit_semantic_direction(const Tensor<float>& stylemaps, const std::vector<int>& labels,
                                     double l2 = 1e-3);

enum class BlendSpace { kWPlus, kW };
BlendSpace blend_space_from_string(const std::string& s);

/// Image-level editing on a fixed model snapshot. Stateless.
class Editor {
 public:
  explicit Editor(const SpatialGan<float>& model) : model_(&model) {}

  const SpatialGan<float>& model() const { return *model_; }

  Tensor<float> project(const Tensor<float>& images) const;
  Pyramid pyramid(const Tensor<float>& w) const;
  Tensor<float> synthesize(const Pyramid& p) const;
  Tensor<float> generate(const Tensor<float>& w) const;
  Tensor<float> reconstruct(const Tensor<float>& images) const { return generate(project(images)); }

  Tensor<float> local_edit(const Tensor<float>& x, const Tensor<float>& x_ref, const Tensor<float>& mask,
                           BlendSpace space = BlendSpace::kWPlus) const;
  Tensor<float> transplant(const Tensor<float>& x, const Tensor<float>& x_ref,
                           const std::vector<TransplantRegion>& regions) const;
  Tensor<float> interpolate(const Tensor<float>& x_a, const Tensor<float>& x_b, float t) const;
  Tensor<float> style_mix(const Tensor<float>& x, const Tensor<float>& x_ref, const std::set<int>& levels,
                          const Tensor<float>* mask = nullptr) const;
  Tensor<float> semantic_edit(const Tensor<float>& x, const SemanticDirection& dir, double strength,
                              const Tensor<float>* region = nullptr) const;

 private:
  const SpatialGan<float>* model_;
};

}  // namespace sgan
