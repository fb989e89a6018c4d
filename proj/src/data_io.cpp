#include "sgan/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sgan/error.hpp"
#include "sgan/rng.hpp"

namespace sgan {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

float to_unit(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.f; }

std::uint8_t to_byte(float v) {
  const float s = std::round((std::clamp(v, -1.f, 1.f) + 1.f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(s, 0.f, 255.f));
}

}  // namespace

Image8 decode_png(const Bytes& data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (data.empty() || !png_image_begin_read_from_memory(&image, data.data(), data.size()))
    throw IoError(std::string("PNG decode failed: ") + (data.empty() ? "empty input" : image.message));
  image.format &= ~static_cast<png_uint_32>(PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLORMAP);
  Image8 out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = static_cast<int>(PNG_IMAGE_SAMPLE_CHANNELS(image.format));
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("PNG decode failed: " + msg);
  }
  return out;
}

Bytes encode_png(const Image8& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  switch (img.channels) {
    case 1: image.format = PNG_FORMAT_GRAY; break;
    case 2: image.format = PNG_FORMAT_GA; break;
    case 3: image.format = PNG_FORMAT_RGB; break;
    case 4: image.format = PNG_FORMAT_RGBA; break;
    default: throw IoError("PNG encode: unsupported channel count " + std::to_string(img.channels));
  }
  if (img.pixels.size() != static_cast<size_t>(img.width) * img.height * img.channels)
    throw IoError("PNG encode: pixel buffer size does not match dimensions");
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("PNG encode failed: ") + image.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("PNG encode failed: ") + image.message);
  out.resize(size);
  return out;
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const Bytes& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Tensor<float> resize_area(const Tensor<float>& x, int h, int w) {
  const Shape s = x.shape();
  if (s.rank() != 4) throw ShapeError("resize_area expects NCHW, got " + s.str());
  if (h <= 0 || w <= 0) throw ShapeError("resize_area target must be positive");
  if (s[2] == h && s[3] == w) return x;
  // Per-axis overlap weights: out index -> (src index, weight) list.
  auto weights = [](int src, int dst) {
    std::vector<std::vector<std::pair<int, double>>> out(static_cast<size_t>(dst));
    const double scale = static_cast<double>(src) / dst;
    for (int o = 0; o < dst; ++o) {
      const double a = o * scale, b = (o + 1) * scale;
      for (int i = static_cast<int>(std::floor(a)); i < std::min(src, static_cast<int>(std::ceil(b))); ++i) {
        const double ov = std::min(b, i + 1.0) - std::max(a, static_cast<double>(i));
        if (ov > 0) out[static_cast<size_t>(o)].push_back({i, ov / scale});
      }
    }
    return out;
  };
  const auto wy = weights(s[2], h), wx = weights(s[3], w);
  Tensor<float> out(Shape{s[0], s[1], h, w});
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c)
      for (int y = 0; y < h; ++y)
        for (int q = 0; q < w; ++q) {
          double acc = 0;
          for (const auto& [iy, ay] : wy[static_cast<size_t>(y)])
            for (const auto& [ix, ax] : wx[static_cast<size_t>(q)]) acc += ay * ax * x.at(n, c, iy, ix);
          out.at(n, c, y, q) = static_cast<float>(acc);
        }
  return out;
}

Tensor<float> image_from_png(const Bytes& data, int size) {
  const Image8 img = decode_png(data);
  if (img.channels != 3)
    throw IoError("expected an RGB image (3 channels), got " + std::to_string(img.channels) + " channels");
  Tensor<float> t(Shape{1, 3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = to_unit(img.pixels[(static_cast<size_t>(y) * img.width + x) * 3 + c]);
  return resize_area(t, size, size);
}

Tensor<float> load_image(const fs::path& path, int size) { return image_from_png(read_file(path), size); }

Bytes image_to_png(const Tensor<float>& img) {
  const Shape s = img.shape();
  const bool rank4 = s.rank() == 4;
  if (!(rank4 ? (s[0] == 1 && s[1] == 3) : (s.rank() == 3 && s[0] == 3)))
    throw ShapeError("image_to_png expects [1, 3, H, W] or [3, H, W], got " + s.str());
  const int h = rank4 ? s[2] : s[1], w = rank4 ? s[3] : s[2];
  Image8 out{w, h, 3, std::vector<std::uint8_t>(static_cast<size_t>(w) * h * 3)};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.pixels[(static_cast<size_t>(y) * w + x) * 3 + c] = to_byte(img[(static_cast<std::int64_t>(c) * h + y) * w + x]);
  return encode_png(out);
}

void save_image(const fs::path& path, const Tensor<float>& img) { write_file(path, image_to_png(img)); }

Tensor<float> mask_from_png(const Bytes& data, int size) {
  const Image8 img = decode_png(data);
  if (img.channels != 1)
    throw IoError("expected a grayscale mask (1 channel), got " + std::to_string(img.channels) + " channels");
  if (img.width != img.height || img.width < size || img.width % size || !is_pow2(img.width / size))
    throw ShapeError("mask is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                     "; it must be square and a power-of-two multiple of " + std::to_string(size));
  const int f = img.width / size;
  Tensor<float> m(Shape{1, 1, size, size});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t v = img.pixels[static_cast<size_t>(y) * img.width + x];
      if (v != 0 && v != 255) throw ConfigError("mask pixels must be 0 or 255, found " + std::to_string(v));
      if (v) m.at(0, 0, y / f, x / f) = 1.f;
    }
  return m;
}

Tensor<float> load_mask(const fs::path& path, int size) { return mask_from_png(read_file(path), size); }

Bytes mask_to_png(const Tensor<float>& mask) {
  const Shape s = mask.shape();
  if (s.rank() != 4 || s[0] != 1 || s[1] != 1) throw ShapeError("mask_to_png expects [1, 1, H, W], got " + s.str());
  Image8 out{s[3], s[2], 1, std::vector<std::uint8_t>(static_cast<size_t>(s[2]) * s[3])};
  for (std::int64_t i = 0; i < mask.numel(); ++i) out.pixels[static_cast<size_t>(i)] = mask[i] > 0.5f ? 255 : 0;
  return encode_png(out);
}

Tensor<float> ImageSource::mask(std::int64_t, const std::string& semantic) const {
  throw NotFoundError("dataset has no '" + semantic + "' masks");
}

Tensor<float> gather(const ImageSource& src, const std::vector<std::int64_t>& indices) {
  const int s = src.image_size();
  Tensor<float> out(Shape{static_cast<int>(indices.size()), 3, s, s});
  const std::int64_t per = 3LL * s * s;
  for (size_t k = 0; k < indices.size(); ++k) {
    const Tensor<float> img = src.get(indices[k]);
    std::copy(img.ptr(), img.ptr() + per, out.ptr() + static_cast<std::int64_t>(k) * per);
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "'");
}

// ------------------------------------------------------------------ toy

ToyDataset::ToyDataset(std::uint64_t seed, std::int64_t count, int image_size, Split split)
    : seed_(seed), count_(count), size_(image_size), split_(split) {
  if (count <= 0) throw ConfigError("toy dataset needs a positive item count");
  if (image_size < 4) throw ConfigError("toy dataset image size must be at least 4");
}

std::uint64_t ToyDataset::item_seed(std::int64_t i) const {
  const std::uint64_t salt = 0x7000000000000000ULL * (static_cast<std::uint64_t>(split_) + 1);
  return splitmix(splitmix(seed_ ^ salt) + static_cast<std::uint64_t>(i));
}

void ToyDataset::render(std::int64_t i, Tensor<float>* image, Tensor<float>* mask) const {
  if (i < 0 || i >= count_) throw NotFoundError("toy item " + std::to_string(i) + " out of range");
  Rng rng(item_seed(i));
  const int s = size_;
  const double horizon = (0.35 + 0.3 * rng.uniform()) * s;
  double sky[3], ground[3];
  for (double& v : sky) v = -0.2 + 1.0 * rng.uniform();
  for (double& v : ground) v = -0.9 + 1.0 * rng.uniform();
  const int blobs = 1 + static_cast<int>(rng.below(3));
  struct Blob {
    double y, x, sigma, color[3];
  };
  std::vector<Blob> bs(static_cast<size_t>(blobs));
  for (auto& b : bs) {
    b.y = rng.uniform() * s;
    b.x = rng.uniform() * s;
    b.sigma = (0.06 + 0.1 * rng.uniform()) * s;
    for (double& c : b.color) c = -1.0 + 2.0 * rng.uniform();
  }
  if (image) *image = Tensor<float>(Shape{1, 3, s, s});
  if (mask) *mask = Tensor<float>(Shape{1, 1, s, s});
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      const bool above = py < horizon;
      const double shade = above ? 0.25 * (py / horizon) : -0.15 * ((py - horizon) / (s - horizon));
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = (above ? sky[c] : ground[c]) + shade;
      double first_alpha = 0;
      for (size_t k = 0; k < bs.size(); ++k) {
        const Blob& b = bs[k];
        const double d2 = (py - b.y) * (py - b.y) + (px - b.x) * (px - b.x);
        const double a = std::exp(-d2 / (2 * b.sigma * b.sigma));
        if (k == 0) first_alpha = a;
        for (int c = 0; c < 3; ++c) rgb[c] = rgb[c] * (1 - a) + b.color[c] * a;
      }
      if (image)
        for (int c = 0; c < 3; ++c) image->at(0, c, y, x) = static_cast<float>(std::clamp(rgb[c], -1.0, 1.0));
      if (mask) mask->at(0, 0, y, x) = first_alpha > 0.5 ? 1.f : 0.f;
    }
}

Tensor<float> ToyDataset::get(std::int64_t i) const {
  Tensor<float> img;
  render(i, &img, nullptr);
  return img;
}

Tensor<float> ToyDataset::mask(std::int64_t i, const std::string& semantic) const {
  if (semantic != "blob") return ImageSource::mask(i, semantic);
  Tensor<float> m;
  render(i, nullptr, &m);
  return m;
}

// ------------------------------------------------------------ directory

DirectoryDataset::DirectoryDataset(const fs::path& root, Split split, int image_size)
    : root_(root), size_(image_size) {
  const fs::path dir = root / to_string(split);
  if (!fs::is_directory(dir)) throw NotFoundError("dataset split directory " + dir.string() + " not found");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files_.push_back(e.path());
  std::sort(files_.begin(), files_.end());
  if (files_.empty()) throw NotFoundError("no PNG files in " + dir.string());
  for (const auto& f : files_) images_.push_back(load_image(f, size_));
}

Tensor<float> DirectoryDataset::get(std::int64_t i) const {
  if (i < 0 || i >= size()) throw NotFoundError("dataset item " + std::to_string(i) + " out of range");
  return images_[static_cast<size_t>(i)];
}

bool DirectoryDataset::has_mask(const std::string& semantic) const {
  return fs::is_directory(root_ / "masks" / semantic);
}

Tensor<float> DirectoryDataset::mask(std::int64_t i, const std::string& semantic) const {
  if (i < 0 || i >= size()) throw NotFoundError("dataset item " + std::to_string(i) + " out of range");
  return load_mask(root_ / "masks" / semantic / files_[static_cast<size_t>(i)].filename(), size_);
}

std::unique_ptr<ImageSource> open_dataset(const std::string& spec, Split split, int image_size, std::uint64_t seed) {
  if (spec == "toy" || spec.rfind("toy:", 0) == 0) {
    std::int64_t count = split == Split::kTrain ? 2048 : 256;
    if (spec.size() > 4) {
      try {
        count = std::stoll(spec.substr(4));
      } catch (const std::exception&) {
        throw ConfigError("bad toy dataset spec '" + spec + "'");
      }
    }
    return std::make_unique<ToyDataset>(seed, count, image_size, split);
  }
  return std::make_unique<DirectoryDataset>(spec, split, image_size);
}

// --------------------------------------------------------------- batcher

Batcher::Batcher(std::int64_t n, int batch_size, std::uint64_t seed) : n_(n), batch_(batch_size), seed_(seed) {
  if (n <= 0) throw ConfigError("batcher needs a non-empty dataset");
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
}

std::vector<std::int64_t> Batcher::epoch_permutation(std::int64_t epoch) const {
  std::vector<std::int64_t> p(static_cast<size_t>(n_));
  for (std::int64_t i = 0; i < n_; ++i) p[static_cast<size_t>(i)] = i;
  Rng rng(splitmix(seed_ + 0x51ED270B27ULL * static_cast<std::uint64_t>(epoch + 1)));
  for (std::int64_t i = n_ - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

std::vector<std::int64_t> Batcher::next() {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<size_t>(batch_));
  for (int k = 0; k < batch_; ++k, ++position_) {
    const std::int64_t epoch = position_ / n_;
    if (epoch != cached_epoch_) {
      cached_ = epoch_permutation(epoch);
      cached_epoch_ = epoch;
    }
    out.push_back(cached_[static_cast<size_t>(position_ % n_)]);
  }
  return out;
}

}  // namespace sgan
