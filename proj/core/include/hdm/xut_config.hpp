#pragma once

#include <cstdint>

#include <json.hpp>

#include "hdm/geometry.hpp"

namespace hdm::backbone {

// Architecture hyperparameters of the cross-U transformer.
struct XutConfig {
  int model_dim = 128;
  int context_dim = 64;
  int mlp_dim = 256;
  int n_heads = 4;
  int head_dim = 32;
  int n_depth = 2;
  int n_enc = 1;
  int n_dec = 2;
  int tread_before = 1;  // N: blocks ahead of the routed region
  int tread_after = 1;   // M: blocks after it
  int patch_size = 2;
  int in_channels = 3;
  int time_freq_dim = 64;
  double rope_base = 10000.0;
  double rope_fraction = 0.5;
  double rope_freq_scale = 1.0;

  // Throws kInvalidConfig on inconsistent values.
  void validate() const;

  geometry::RopeFrequencies rope() const;
  int patch_dim() const { return in_channels * patch_size * patch_size; }
  int u_blocks() const { return (n_enc + n_dec) * n_depth; }

  // Table configurations (arithmetic only, far too large to run here).
  static XutConfig xut_small();
  static XutConfig xut_base();
  static XutConfig xut_large();
  // ~1.2M parameter desk-scale configuration for 32x32 pixels.
  static XutConfig toy();
  // Under 50k parameters; used by gradient checks.
  static XutConfig micro();

  bool operator==(const XutConfig&) const = default;
};

void to_json(nlohmann::json& j, const XutConfig& cfg);
void from_json(const nlohmann::json& j, XutConfig& cfg);

struct DerivedCounts {
  std::int64_t total_blocks = 0;
  std::int64_t total_attention_layers = 0;
  // (256 / (8 * patch))^2: tokens for a 256^2 image behind an 8x latent encoder.
  std::int64_t seq_len_latent_256 = 0;
  // (image / patch)^2 in this project's pixel-space convention.
  std::int64_t seq_len_pixel = 0;
};

DerivedCounts derived_counts(const XutConfig& cfg, int pixel_image_size = 32);

}  // namespace hdm::backbone
