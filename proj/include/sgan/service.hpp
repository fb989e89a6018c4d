#pragma once

// JSON-over-HTTP editing service. Endpoint schemas: docs/api.md.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "sgan/config.hpp"
#include "sgan/data_io.hpp"
#include "sgan/editor.hpp"
#include "sgan/networks.hpp"

namespace sgan {

std::string base64_encode(const Bytes& data);
/// Strict RFC 4648 decoding; an optional "data:...;base64," prefix is
/// skipped. Throws ConfigError on malformed input.
Bytes base64_decode(const std::string& text);

struct Session {
  Tensor<float> stylemap;  // [1, C, H, W]
  Pyramid pyramid;
  Bytes thumbnail;  // the projected input, PNG at model resolution
  std::chrono::system_clock::time_point created_at;
};

/// Capacity-bounded LRU map from id to immutable sessions. Readers hold a
/// shared_ptr, so eviction never invalidates a session mid-request.
class SessionStore {
 public:
  explicit SessionStore(size_t capacity);

  void put(const std::string& id, std::shared_ptr<const Session> s);
  /// nullptr if absent. Marks the entry most recently used.
  std::shared_ptr<const Session> get(const std::string& id);
  size_t size() const;
  size_t capacity() const { return capacity_; }

 private:
  using Order = std::list<std::string>;
  size_t capacity_;
  mutable std::mutex mu_;
  Order order_;  // front = most recent
  std::unordered_map<std::string, std::pair<std::shared_ptr<const Session>, Order::iterator>> map_;
};

struct ServiceConfig {
  size_t max_body_bytes = 4u << 20;
  int max_image_side = 1024;
  size_t session_capacity = 256;
};

struct ServiceResponse {
  int status = 200;
  Json body;
};

/// Named semantic directions as stored on disk:
/// {"name": {"shape": [C, H, W] or [C], "values": [...], "sigma": s}, ...}
std::map<std::string, SemanticDirection> load_directions(const std::filesystem::path& path);
Json directions_to_json(const std::map<std::string, SemanticDirection>& dirs);

class EditService {
 public:
  EditService(SpatialGan<float> model, std::map<std::string, SemanticDirection> directions = {},
              ServiceConfig cfg = {}, std::string model_id = "");

  /// Transport-independent dispatch; never throws.
  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

  /// Blocks serving HTTP until stop(). Returns false if the port cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it, or -1. Serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  bool running() const;

  SessionStore& sessions() { return sessions_; }
  const SpatialGan<float>& model() const { return model_; }

  ~EditService();

 private:
  ServiceResponse project(const Json& req);
  ServiceResponse edit(const Json& req);
  ServiceResponse interpolate(const Json& req);
  ServiceResponse transplant(const Json& req);
  ServiceResponse semantic(const Json& req);
  ServiceResponse health() const;
  std::shared_ptr<const Session> session(const Json& req, const char* key);
  Tensor<float> decode_mask(const Json& req, const char* key) const;

  SpatialGan<float> model_;
  Editor editor_;
  std::map<std::string, SemanticDirection> directions_;
  ServiceConfig cfg_;
  std::string model_id_;
  SessionStore sessions_;
  struct Http;
  std::unique_ptr<Http> http_;
};

}  // namespace sgan
