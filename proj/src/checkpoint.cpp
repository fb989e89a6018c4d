#include "sgan/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "sgan/error.hpp"

namespace sgan {

namespace {

constexpr char kMagic[8] = {'S', 'G', 'A', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::uint8_t* p, size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <class U>
void put(Bytes& out, U v) {
  for (size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const Bytes& b, size_t end) : b_(b), end_(end) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(size_t n) const {
    if (n > end_ - pos_) throw IoError("checkpoint: truncated data");
  }
  const Bytes& b_;
  size_t end_, pos_ = 0;
};

}  // namespace

void Archive::add(const std::string& name, Tensor<float> t) {
  if (has(name)) throw Error("archive: duplicate tensor '" + name + "'");
  tensors.emplace_back(name, std::move(t));
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor<float>& Archive::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw NotFoundError("archive: no tensor named '" + name + "'");
}

Bytes encode_archive(const Archive& a) {
  Bytes out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kVersion);
  const std::string meta = a.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(a.tensors.size()));
  for (const auto& [name, t] : a.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape().dims()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.numel(); ++i) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(t[i]));
  }
  put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

Archive decode_archive(const Bytes& bytes) {
  if (bytes.size() < 8 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw IoError("checkpoint: not a checkpoint file");
  const size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (size_t i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (stored != fnv1a(bytes.data(), body)) throw IoError("checkpoint: checksum mismatch");

  Reader r(bytes, body);
  r.str(8);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  Archive a;
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > body) throw IoError("checkpoint: truncated data");
  try {
    a.metadata = Json::parse(r.str(meta_len));
  } catch (const Json::exception& e) {
    throw IoError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.str(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw IoError("checkpoint: bad rank for '" + name + "'");
    std::vector<int> dims(rank);
    for (auto& d : dims) d = static_cast<int>(r.get<std::uint32_t>());
    Tensor<float> t{Shape(std::span<const int>(dims))};
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<float>(r.get<std::uint32_t>());
    a.add(name, std::move(t));
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return a;
}

void save_archive(const std::filesystem::path& path, const Archive& a) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_file(tmp, encode_archive(a));
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::filesystem::path& path) { return decode_archive(read_file(path)); }

}  // namespace sgan
