#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "hdm/datapipe.hpp"
#include "hdm/flow.hpp"
#include "hdm/optim.hpp"
#include "hdm/textcond.hpp"
#include "hdm/xut_config.hpp"

namespace hdm::cli {

struct ScheduleConfig {
  std::int64_t steps = 2000;
  int batch = 4;
  int grad_accum = 1;
  double tread_rate = 0.5;
  double caption_dropout = 0.1;
  flow::TimeSampling time_sampling = flow::TimeSampling::kUniform;
  std::int64_t checkpoint_every = 0;  // 0: only the final step
  bool operator==(const ScheduleConfig&) const = default;
};

struct SamplingConfig {
  int steps = 50;
  double guidance = 1.0;
  double cond_rate = 0.0;
  double uncond_rate = 0.0;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;
  bool operator==(const SamplingConfig&) const = default;
};

struct RunConfig {
  backbone::XutConfig model = backbone::XutConfig::toy();
  textcond::TextEncoderConfig text;
  datapipe::DatasetSpec data;
  optim::AdamWConfig optimizer;
  ScheduleConfig schedule;
  SamplingConfig sampling;
  std::uint64_t seed = 0;
  // Checkpoint whose weights seed this run (chained progressive stages).
  std::string init_from;

  // Throws kInvalidConfig.
  void validate() const;
  bool operator==(const RunConfig&) const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// .toml or .json by extension; anything else is tried as JSON.
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json toml_file_to_json(const std::filesystem::path& path);

}  // namespace hdm::cli
