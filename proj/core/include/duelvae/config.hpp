#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "duelvae/training.hpp"

namespace duelvae {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration document (see configs/schema.json). Sections:
/// data, objective, model, training. Missing keys take defaults; unknown
/// keys are rejected.
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Compact, key-sorted serialization used for hashing.
std::string canonical_json(const nlohmann::json& doc);
std::string sha256_hex(std::string_view bytes);

/// Content hash of the configuration with machine-local fields (data root)
/// removed. Runs with equal digests are interchangeable.
std::string config_digest(const TrainConfig& cfg);

/// Applies "key=value" overrides addressed by dotted path, e.g.
/// "objective.lambda=0.1". Values are parsed as JSON, falling back to strings.
void apply_override(nlohmann::json& doc, std::string_view assignment);

}  // namespace duelvae
