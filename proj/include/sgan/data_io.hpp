#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sgan/tensor.hpp"

namespace sgan {

using Bytes = std::vector<std::uint8_t>;

/// Decoded 8-bit image, interleaved, rows top to bottom.
struct Image8 {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Throws IoError on malformed data. Palette and 16-bit images are expanded
/// to 8-bit; the channel count is what the file stores (1 gray, 2 gray+alpha,
/// 3 RGB, 4 RGBA).
Image8 decode_png(const Bytes& data);
Bytes encode_png(const Image8& img);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& data);

/// Area-averaging resample of an [N, C, H, W] tensor to [N, C, h, w]. Each
/// output pixel averages the source region it covers, weighted by overlap.
Tensor<float> resize_area(const Tensor<float>& x, int h, int w);

/// RGB image bytes -> [1, 3, size, size] in [-1, 1]. Any channel count other
/// than 3 is rejected.
Tensor<float> image_from_png(const Bytes& data, int size);
Tensor<float> load_image(const std::filesystem::path& path, int size);

/// [1, 3, H, W] (or [3, H, W]) in [-1, 1] -> 8-bit RGB PNG. Values are clamped.
Bytes image_to_png(const Tensor<float>& img);
void save_image(const std::filesystem::path& path, const Tensor<float>& img);

/// Grayscale mask bytes (0 = keep original, 255 = take reference) ->
/// [1, 1, size, size] in {0, 1}. Other pixel values, channel counts or sizes
/// that are not a power-of-two multiple of `size` are rejected.
Tensor<float> mask_from_png(const Bytes& data, int size);
Tensor<float> load_mask(const std::filesystem::path& path, int size);
Bytes mask_to_png(const Tensor<float>& mask);

/// Random-access source of [1, 3, S, S] images.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::int64_t size() const = 0;
  virtual int image_size() const = 0;
  virtual Tensor<float> get(std::int64_t i) const = 0;
  /// Binary semantic mask [1, 1, S, S] for item i, if the source has one.
  virtual bool has_mask(const std::string& semantic) const {
    (void)semantic;
    return false;
  }
  virtual Tensor<float> mask(std::int64_t i, const std::string& semantic) const;
};

/// Stack items into one [N, 3, S, S] batch.
Tensor<float> gather(const ImageSource& src, const std::vector<std::int64_t>& indices);

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// Procedural scenes: a two-tone sky/ground split by a horizon line plus
/// one to three soft colored gaussian blobs. Item i of a split is a pure
/// function of (seed, split, i). Splits use disjoint seed streams.
class ToyDataset : public ImageSource {
 public:
  ToyDataset(std::uint64_t seed, std::int64_t count, int image_size, Split split = Split::kTrain);

  std::int64_t size() const override { return count_; }
  int image_size() const override { return size_; }
  Tensor<float> get(std::int64_t i) const override;
  /// "blob": pixels where the first blob dominates.
  bool has_mask(const std::string& semantic) const override { return semantic == "blob"; }
  Tensor<float> mask(std::int64_t i, const std::string& semantic) const override;

  std::uint64_t item_seed(std::int64_t i) const;

 private:
  void render(std::int64_t i, Tensor<float>* image, Tensor<float>* mask) const;

  std::uint64_t seed_;
  std::int64_t count_;
  int size_;
  Split split_;
};

/// PNG files of `<root>/<split>/`, sorted by name, decoded eagerly.
/// Semantic masks live at `<root>/masks/<semantic>/<same file name>`.
class DirectoryDataset : public ImageSource {
 public:
  DirectoryDataset(const std::filesystem::path& root, Split split, int image_size);

  std::int64_t size() const override { return static_cast<std::int64_t>(images_.size()); }
  int image_size() const override { return size_; }
  Tensor<float> get(std::int64_t i) const override;
  bool has_mask(const std::string& semantic) const override;
  Tensor<float> mask(std::int64_t i, const std::string& semantic) const override;
  const std::vector<std::filesystem::path>& files() const { return files_; }

 private:
  std::filesystem::path root_;
  int size_;
  std::vector<std::filesystem::path> files_;
  std::vector<Tensor<float>> images_;
};

/// Opens "toy[:count]" or a directory path.
std::unique_ptr<ImageSource> open_dataset(const std::string& spec, Split split, int image_size, std::uint64_t seed);

/// Endless stream of shuffled indices: epoch e is a seeded permutation of
/// [0, n), epochs are concatenated. The whole state is the draw counter.
class Batcher {
 public:
  Batcher(std::int64_t n, int batch_size, std::uint64_t seed);

  std::vector<std::int64_t> next();
  std::int64_t position() const { return position_; }
  void set_position(std::int64_t p) { position_ = p; }
  std::vector<std::int64_t> epoch_permutation(std::int64_t epoch) const;

 private:
  std::int64_t n_;
  int batch_;
  std::uint64_t seed_;
  std::int64_t position_ = 0;
  mutable std::int64_t cached_epoch_ = -1;
  mutable std::vector<std::int64_t> cached_;
};

}  // namespace sgan
