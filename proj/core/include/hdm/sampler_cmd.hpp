#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "hdm/image.hpp"
#include "hdm/trainer.hpp"

namespace hdm::cli {

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path output = "sample.png";
  std::string prompt;
  std::filesystem::path context_file;  // external embeddings; overrides prompt
  int height = 32;
  int width = 32;
  int steps = 50;
  double guidance = 1.0;
  double cond_rate = 0.0;
  double uncond_rate = 0.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
  double zoom = 1.0;
  std::uint64_t seed = 0;
};

struct SampleResult {
  Image image;
  std::string noise_hash;
  std::string png_fnv1a;  // empty unless written
  bool prompt_truncated = false;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

// Throws kUsage on sizes that are not patch multiples, non-positive zoom or
// a rejected guidance setting.
void validate_sample_options(const SampleOptions& opts, int patch);

SampleResult sample_image(const ModelBundle& bundle, const SampleOptions& opts);

// Loads the checkpoint, samples and writes opts.output.
SampleResult run_sample(const SampleOptions& opts);

}  // namespace hdm::cli
