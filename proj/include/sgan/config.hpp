#pragma once

// JSON (de)serialization of configurations. Unknown keys are rejected so that
// typos in config files fail loudly.

#include <json.hpp>
#include <string>

#include "sgan/losses.hpp"
#include "sgan/networks.hpp"

namespace sgan {

using Json = nlohmann::json;

void to_json(Json& j, const NetworkConfig& c);
void from_json(const Json& j, NetworkConfig& c);
void to_json(Json& j, const LossWeights& w);
void from_json(const Json& j, LossWeights& w);

/// FNV-1a 64 of the compact dump, as 16 hex digits. Keys are sorted by the
/// JSON library, so equal configs hash equally.
std::string config_hash(const Json& j);

/// Throws ConfigError naming the first key of `j` not listed in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace sgan
