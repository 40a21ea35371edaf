#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hdm/xut_config.hpp"

namespace hdm::cli {

struct InspectReport {
  nlohmann::json json;
  std::string text;
  bool self_check_ok = false;
};

// Derived counts, parameter totals by module, routed region and the
// built-in table self-check.
InspectReport inspect_config(const backbone::XutConfig& cfg, int image_size, const std::string& label);

// A checkpoint (.hdm), a run config (.toml / .json) or a built-in name:
// xut-small, xut-base, xut-large, toy, micro. Corrupt checkpoints throw kIntegrity.
InspectReport inspect(const std::string& target);

// Block and attention-layer totals of the three table configurations
// against the published values.
nlohmann::json table_self_check(bool* all_ok);

}  // namespace hdm::cli
