#pragma once

// Named float32 tensors plus a JSON metadata document in one little-endian
// binary container. Layout is described in docs/checkpoint_format.md.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sgan/config.hpp"
#include "sgan/data_io.hpp"
#include "sgan/tensor.hpp"

namespace sgan {

struct Archive {
  Json metadata = Json::object();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  /// Throws Error on a duplicate name.
  void add(const std::string& name, Tensor<float> t);
  bool has(const std::string& name) const;
  /// Throws NotFoundError.
  const Tensor<float>& at(const std::string& name) const;
};

Bytes encode_archive(const Archive& a);
/// Throws IoError on truncation, bad magic or checksum mismatch.
Archive decode_archive(const Bytes& bytes);

/// Writes via a temporary file and rename.
void save_archive(const std::filesystem::path& path, const Archive& a);
Archive load_archive(const std::filesystem::path& path);

}  // namespace sgan
