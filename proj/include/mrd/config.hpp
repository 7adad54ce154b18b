#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mrd/mc.hpp"

namespace mrd {

// Config files are TOML (flat tables, scalars, arrays) or JSON; both map to
// the same JSON tree. Dispatch is by content, so echoed JSON configs reload
// through the same path.
nlohmann::json parse_toml(const std::string& text);
nlohmann::json load_config_file(const std::string& path);

LotConfig lot_config_from_json(const nlohmann::json& root);
nlohmann::json lot_config_to_json(const LotConfig& cfg);

ExperimentConfig experiment_from_json(const nlohmann::json& root);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);

}  // namespace mrd
