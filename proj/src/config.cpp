#include "sgan/config.hpp"

#include <cstdio>
#include <set>

#include "sgan/error.hpp"

namespace sgan {

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

namespace {

template <class V>
void get_opt(const Json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

void to_json(Json& j, const NetworkConfig& c) {
  Json ch = Json::object();
  for (const auto& [res, n] : c.channels) ch[std::to_string(res)] = n;
  j = Json{{"image_size", c.image_size},
           {"stylemap_hw", c.stylemap_hw},
           {"stylemap_channels", c.stylemap_channels},
           {"latent_dim", c.latent_dim},
           {"mapping_layers", c.mapping_layers},
           {"mapping_hidden", c.mapping_hidden},
           {"channels", ch},
           {"resizer_kernel", c.resizer_kernel},
           {"resizer_activation", c.resizer_activation},
           {"lrelu_slope", c.lrelu_slope},
           {"norm", to_string(c.norm)},
           {"norm_eps", c.norm_eps},
           {"mbstd_group", c.mbstd_group}};
}

void from_json(const Json& j, NetworkConfig& c) {
  const std::string w = "network";
  reject_unknown_keys(j,
                      {"image_size", "stylemap_hw", "stylemap_channels", "latent_dim", "mapping_layers",
                       "mapping_hidden", "channels", "resizer_kernel", "resizer_activation", "lrelu_slope", "norm",
                       "norm_eps", "mbstd_group"},
                      w);
  get_opt(j, "image_size", c.image_size, w);
  get_opt(j, "stylemap_hw", c.stylemap_hw, w);
  get_opt(j, "stylemap_channels", c.stylemap_channels, w);
  get_opt(j, "latent_dim", c.latent_dim, w);
  get_opt(j, "mapping_layers", c.mapping_layers, w);
  get_opt(j, "mapping_hidden", c.mapping_hidden, w);
  get_opt(j, "resizer_kernel", c.resizer_kernel, w);
  get_opt(j, "resizer_activation", c.resizer_activation, w);
  get_opt(j, "lrelu_slope", c.lrelu_slope, w);
  get_opt(j, "norm_eps", c.norm_eps, w);
  get_opt(j, "mbstd_group", c.mbstd_group, w);
  if (j.contains("norm")) c.norm = norm_mode_from_string(j.at("norm").get<std::string>());
  if (j.contains("channels")) {
    const Json& ch = j.at("channels");
    if (!ch.is_object()) throw ConfigError("network.channels: expected an object keyed by resolution");
    c.channels.clear();
    for (const auto& [k, v] : ch.items()) {
      int res = 0;
      try {
        size_t used = 0;
        res = std::stoi(k, &used);
        if (used != k.size()) throw std::invalid_argument(k);
      } catch (const std::exception&) {
        throw ConfigError("network.channels: bad resolution key '" + k + "'");
      }
      c.channels[res] = v.get<int>();
    }
  }
}

void to_json(Json& j, const LossWeights& w) {
  j = Json{{"adv_d", w.adv_d},
           {"adv_g", w.adv_g},
           {"domain_guided_d", w.domain_guided_d},
           {"domain_guided_eg", w.domain_guided_eg},
           {"latent_recon", w.latent_recon},
           {"image_recon", w.image_recon},
           {"perceptual", w.perceptual}};
}

void from_json(const Json& j, LossWeights& w) {
  const std::string s = "weights";
  reject_unknown_keys(
      j, {"adv_d", "adv_g", "domain_guided_d", "domain_guided_eg", "latent_recon", "image_recon", "perceptual"}, s);
  get_opt(j, "adv_d", w.adv_d, s);
  get_opt(j, "adv_g", w.adv_g, s);
  get_opt(j, "domain_guided_d", w.domain_guided_d, s);
  get_opt(j, "domain_guided_eg", w.domain_guided_eg, s);
  get_opt(j, "latent_recon", w.latent_recon, s);
  get_opt(j, "image_recon", w.image_recon, s);
  get_opt(j, "perceptual", w.perceptual, s);
}

std::string config_hash(const Json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sgan
