#include "sgan/service.hpp"

#include <httplib.h>

#include <cmath>
#include <cstring>

#include "sgan/error.hpp"

namespace sgan {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

struct HttpError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] void bad_request(const std::string& msg) { throw HttpError{400, "invalid_request", msg}; }

ServiceResponse error_response(int status, const std::string& code, const std::string& msg) {
  return {status, Json{{"error", {{"code", code}, {"message", msg}}}}};
}

const Json& field(const Json& req, const char* key) {
  if (!req.contains(key)) bad_request(std::string("missing field '") + key + "'");
  return req.at(key);
}

std::string string_field(const Json& req, const char* key) {
  const Json& v = field(req, key);
  if (!v.is_string()) bad_request(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

double number_field(const Json& req, const char* key) {
  const Json& v = field(req, key);
  if (!v.is_number()) bad_request(std::string("field '") + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad_request(std::string("field '") + key + "' must be finite");
  return d;
}

int int_field(const Json& obj, const char* key) {
  const Json& v = field(obj, key);
  if (!v.is_number_integer()) bad_request(std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

Box box_field(const Json& region, const char* key) {
  const Json& b = field(region, key);
  if (!b.is_object()) bad_request(std::string("field '") + key + "' must be an object");
  return Box{int_field(b, "top"), int_field(b, "left"), int_field(b, "height"), int_field(b, "width")};
}

/// Width and height from the PNG header, without decoding.
std::pair<std::uint32_t, std::uint32_t> png_dims(const Bytes& b) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (b.size() < 24 || std::memcmp(b.data(), sig, 8) != 0) bad_request("image is not a PNG");
  auto be32 = [&](size_t o) {
    return (std::uint32_t(b[o]) << 24) | (std::uint32_t(b[o + 1]) << 16) | (std::uint32_t(b[o + 2]) << 8) | b[o + 3];
  };
  return {be32(16), be32(20)};
}

std::string image_b64(const Tensor<float>& img) { return base64_encode(image_to_png(img)); }

/// Content address of a projected image, so equal inputs share a session.
std::string session_id(const Tensor<float>& img) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* p = reinterpret_cast<const unsigned char*>(img.ptr());
  for (size_t i = 0; i < sizeof(float) * static_cast<size_t>(img.numel()); ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  char buf[18];
  std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string base64_encode(const Bytes& data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t(data[i]) << 16) | (std::uint32_t(data[i + 1]) << 8) | data[i + 2];
    for (int k = 3; k >= 0; --k) out.push_back(kAlphabet[(v >> (6 * k)) & 63]);
  }
  if (i < data.size()) {
    std::uint32_t v = std::uint32_t(data[i]) << 16;
    if (i + 1 < data.size()) v |= std::uint32_t(data[i + 1]) << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < data.size() ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

Bytes base64_decode(const std::string& text) {
  std::string_view s(text);
  if (s.starts_with("data:")) {
    const size_t comma = s.find(',');
    if (comma == std::string_view::npos || s.substr(0, comma).find(";base64") == std::string_view::npos)
      throw ConfigError("base64: malformed data URL");
    s.remove_prefix(comma + 1);
  }
  if (s.size() % 4 != 0) throw ConfigError("base64: length is not a multiple of 4");
  int table[256];
  std::fill(std::begin(table), std::end(table), -1);
  for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kAlphabet[i])] = i;
  Bytes out;
  out.reserve(s.size() / 4 * 3);
  for (size_t i = 0; i < s.size(); i += 4) {
    const bool last = i + 4 == s.size();
    std::uint32_t v = 0;
    int pad = 0;
    for (size_t k = 0; k < 4; ++k) {
      const char c = s[i + k];
      if (c == '=' && last && k >= 2 && (k == 3 || s[i + 3] == '=')) {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = table[static_cast<unsigned char>(c)];
      if (d < 0 || pad) throw ConfigError("base64: invalid character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

SessionStore::SessionStore(size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("session capacity must be positive");
}

void SessionStore::put(const std::string& id, std::shared_ptr<const Session> s) {
  std::lock_guard lock(mu_);
  if (auto it = map_.find(id); it != map_.end()) {
    order_.erase(it->second.second);
    map_.erase(it);
  }
  order_.push_front(id);
  map_.emplace(id, std::make_pair(std::move(s), order_.begin()));
  while (map_.size() > capacity_) {
    map_.erase(order_.back());
    order_.pop_back();
  }
}

std::shared_ptr<const Session> SessionStore::get(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = map_.find(id);
  if (it == map_.end()) return nullptr;
  order_.splice(order_.begin(), order_, it->second.second);
  return it->second.first;
}

size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return map_.size();
}

std::map<std::string, SemanticDirection> load_directions(const std::filesystem::path& path) {
  const Bytes raw = read_file(path);
  std::map<std::string, SemanticDirection> out;
  try {
    const Json j = Json::parse(raw.begin(), raw.end());
    if (!j.is_object()) throw ConfigError("directions file must hold an object");
    for (const auto& [name, d] : j.items()) {
      reject_unknown_keys(d, {"shape", "values", "sigma"}, "direction " + name);
      const std::vector<int> shape = d.at("shape").get<std::vector<int>>();
      std::vector<float> values = d.at("values").get<std::vector<float>>();
      if (shape.empty() || shape.size() > 3) throw ConfigError("direction " + name + ": bad shape");
      SemanticDirection sd;
      sd.direction = Tensor<float>(Shape(std::span<const int>(shape)), std::move(values));
      sd.sigma = d.at("sigma").get<double>();
      out.emplace(name, std::move(sd));
    }
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return out;
}

Json directions_to_json(const std::map<std::string, SemanticDirection>& dirs) {
  Json j = Json::object();
  for (const auto& [name, d] : dirs) {
    std::vector<int> shape(d.direction.shape().dims().begin(), d.direction.shape().dims().end());
    j[name] = Json{{"shape", shape}, {"values", d.direction.storage()}, {"sigma", d.sigma}};
  }
  return j;
}

struct EditService::Http {
  httplib::Server server;
};

EditService::EditService(SpatialGan<float> model, std::map<std::string, SemanticDirection> directions,
                         ServiceConfig cfg, std::string model_id)
    : model_(std::move(model)),
      editor_(model_),
      directions_(std::move(directions)),
      cfg_(cfg),
      model_id_(std::move(model_id)),
      sessions_(cfg.session_capacity) {
  const NetworkConfig& nc = model_.config();
  for (const auto& [name, d] : directions_) {
    const bool ok = d.per_cell() ? d.direction.dim(0) == nc.stylemap_channels
                                 : d.direction.shape() == Shape{nc.stylemap_channels, nc.stylemap_hw, nc.stylemap_hw};
    if (!ok) throw ConfigError("direction '" + name + "' does not fit the model's stylemap");
  }
}

EditService::~EditService() { stop(); }

std::shared_ptr<const Session> EditService::session(const Json& req, const char* key) {
  const std::string id = string_field(req, key);
  auto s = sessions_.get(id);
  if (!s) throw HttpError{404, "unknown_session", "no session with id '" + id + "'"};
  return s;
}

Tensor<float> EditService::decode_mask(const Json& req, const char* key) const {
  const Bytes png = base64_decode(string_field(req, key));
  const auto [w, h] = png_dims(png);
  if (w > static_cast<std::uint32_t>(cfg_.max_image_side) || h > static_cast<std::uint32_t>(cfg_.max_image_side))
    throw HttpError{413, "too_large", "mask exceeds the maximum side of " + std::to_string(cfg_.max_image_side)};
  const int size = model_.config().image_size;
  if (w != h || w < static_cast<std::uint32_t>(size))
    bad_request("mask must be square and at least " + std::to_string(size) + " pixels");
  return mask_from_png(png, size);
}

ServiceResponse EditService::project(const Json& req) {
  const Bytes png = base64_decode(string_field(req, "image"));
  const auto [w, h] = png_dims(png);
  if (w > static_cast<std::uint32_t>(cfg_.max_image_side) || h > static_cast<std::uint32_t>(cfg_.max_image_side))
    throw HttpError{413, "too_large", "image exceeds the maximum side of " + std::to_string(cfg_.max_image_side)};
  const Tensor<float> img = image_from_png(png, model_.config().image_size);
  const std::string id = session_id(img);
  auto s = std::make_shared<Session>();
  s->stylemap = editor_.project(img);
  s->pyramid = editor_.pyramid(s->stylemap);
  s->thumbnail = image_to_png(img);
  s->created_at = std::chrono::system_clock::now();
  const Tensor<float> rec = editor_.synthesize(s->pyramid);
  sessions_.put(id, std::move(s));
  return {200, Json{{"id", id}, {"reconstruction", image_b64(rec)}}};
}

ServiceResponse EditService::edit(const Json& req) {
  const auto orig = session(req, "original_id"), ref = session(req, "reference_id");
  const Tensor<float> mask = decode_mask(req, "mask");
  const std::string space = req.contains("space") ? string_field(req, "space") : "wplus";
  Tensor<float> out;
  if (blend_space_from_string(space) == BlendSpace::kW)
    out = editor_.generate(blend_w(orig->stylemap, ref->stylemap, mask));
  else
    out = editor_.synthesize(blend_wplus(orig->pyramid, ref->pyramid, mask));
  return {200, Json{{"image", image_b64(out)}}};
}

ServiceResponse EditService::interpolate(const Json& req) {
  const auto a = session(req, "id_a"), b = session(req, "id_b");
  const double t = number_field(req, "t");
  if (t < 0 || t > 1) bad_request("t must lie in [0, 1]");
  const Tensor<float> out = editor_.generate(sgan::interpolate(a->stylemap, b->stylemap, static_cast<float>(t)));
  return {200, Json{{"image", image_b64(out)}}};
}

ServiceResponse EditService::transplant(const Json& req) {
  const auto orig = session(req, "original_id"), ref = session(req, "reference_id");
  const Json& regions = field(req, "regions");
  if (!regions.is_array()) bad_request("field 'regions' must be an array");
  std::vector<TransplantRegion> rs;
  for (const auto& r : regions) {
    if (!r.is_object()) bad_request("each region must be an object");
    rs.push_back({box_field(r, "src"), box_field(r, "dst")});
  }
  const Tensor<float> out = editor_.generate(sgan::transplant(orig->stylemap, ref->stylemap, rs));
  return {200, Json{{"image", image_b64(out)}}};
}

ServiceResponse EditService::semantic(const Json& req) {
  const auto s = session(req, "id");
  const std::string name = string_field(req, "direction");
  const auto it = directions_.find(name);
  if (it == directions_.end()) throw HttpError{404, "unknown_direction", "no direction named '" + name + "'"};
  const double strength = number_field(req, "strength");
  Tensor<float> region;
  if (req.contains("region") && !req.at("region").is_null()) region = decode_mask(req, "region");
  const Tensor<float> w = sgan::semantic_edit(s->stylemap, it->second, strength, region.empty() ? nullptr : &region);
  return {200, Json{{"image", image_b64(editor_.generate(w))}}};
}

ServiceResponse EditService::health() const {
  Json dirs = Json::array();
  for (const auto& [name, d] : directions_) dirs.push_back(name);
  return {200, Json{{"status", "ok"},
                    {"model", model_id_},
                    {"image_size", model_.config().image_size},
                    {"stylemap", {model_.config().stylemap_channels, model_.config().stylemap_hw, model_.config().stylemap_hw}},
                    {"sessions", sessions_.size()},
                    {"directions", dirs}}};
}

ServiceResponse EditService::handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::map<std::string, ServiceResponse (EditService::*)(const Json&)> posts{
      {"/project", &EditService::project},
      {"/edit", &EditService::edit},
      {"/interpolate", &EditService::interpolate},
      {"/transplant", &EditService::transplant},
      {"/semantic", &EditService::semantic}};
  try {
    if (path == "/health") {
      if (method != "GET") return error_response(405, "method_not_allowed", "use GET");
      return health();
    }
    const auto it = posts.find(path);
    if (it == posts.end()) return error_response(404, "not_found", "no endpoint " + path);
    if (method != "POST") return error_response(405, "method_not_allowed", "use POST");
    if (body.size() > cfg_.max_body_bytes)
      return error_response(413, "too_large", "request body exceeds " + std::to_string(cfg_.max_body_bytes) + " bytes");
    Json req;
    try {
      req = Json::parse(body);
    } catch (const Json::exception& e) {
      return error_response(400, "invalid_json", e.what());
    }
    if (!req.is_object()) return error_response(400, "invalid_request", "request body must be a JSON object");
    return (this->*(it->second))(req);
  } catch (const HttpError& e) {
    return error_response(e.status, e.code, e.message);
  } catch (const NotFoundError& e) {
    return error_response(404, "not_found", e.what());
  } catch (const ConfigError& e) {
    return error_response(400, "invalid_request", e.what());
  } catch (const ShapeError& e) {
    return error_response(400, "invalid_request", e.what());
  } catch (const IoError& e) {
    return error_response(400, "invalid_request", e.what());
  } catch (const Json::exception& e) {
    return error_response(400, "invalid_request", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

namespace {

void install(httplib::Server& srv, EditService& svc, size_t max_body) {
  auto route = [&svc](const httplib::Request& req, httplib::Response& res) {
    const ServiceResponse r = svc.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  // Let oversized bodies through to handle() so they get a JSON 413.
  srv.set_payload_max_length(max_body + 1);
  srv.Get(".*", route);
  srv.Post(".*", route);
  srv.Put(".*", route);
  srv.Delete(".*", route);
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const ServiceResponse r = error_response(res.status, res.status == 413 ? "too_large" : "http_error",
                                             httplib::status_message(res.status));
    res.set_content(r.body.dump(), "application/json");
  });
}

}  // namespace

bool EditService::listen(const std::string& host, int port) {
  if (!http_) http_ = std::make_unique<Http>();
  install(http_->server, *this, cfg_.max_body_bytes);
  return http_->server.listen(host, port);
}

int EditService::bind_any_port(const std::string& host) {
  if (!http_) http_ = std::make_unique<Http>();
  install(http_->server, *this, cfg_.max_body_bytes);
  return http_->server.bind_to_any_port(host);
}

bool EditService::listen_after_bind() { return http_ && http_->server.listen_after_bind(); }

void EditService::stop() {
  if (http_) http_->server.stop();
}

bool EditService::running() const { return http_ && http_->server.is_running(); }

}  // namespace sgan
