#pragma once

// Token routing: a random subset of image tokens skips the routed block
// region and is merged back afterwards with its pre-region value.

#include <cstdint>
#include <utility>
#include <vector>

#include "hdm/autograd.hpp"
#include "hdm/xut_config.hpp"

namespace hdm::routing {

struct RouteMask {
  std::vector<int> kept;      // ascending image-token indices
  std::vector<int> bypassed;  // ascending image-token indices
  double rate = 0.0;
  std::uint64_t seed = 0;

  int n_image_tokens() const { return static_cast<int>(kept.size() + bypassed.size()); }
};

// Exactly round(rate * n) tokens are bypassed, chosen uniformly given seed.
RouteMask make_route_mask(int n_image_tokens, double rate, std::uint64_t seed);

// Stream layout everywhere in the backbone: image rows [0, n_image) then text rows.
template <typename T>
struct RouteSplit {
  ag::Var<T> kept;             // kept image rows, then every text row
  ag::Var<T> bypass;           // bypassed image rows, untouched
  std::vector<int> kept_rows;  // row in the full stream for each kept-stream row
  std::vector<int> bypass_rows;
};

template <typename T>
RouteSplit<T> route_split(const ag::Var<T>& tokens, int n_image, const RouteMask& mask) {
  require(mask.n_image_tokens() == n_image, ErrorKind::kInvariant, "route mask does not match image token count");
  require(n_image <= tokens.rows(), ErrorKind::kInvariant, "image span exceeds token stream");
  RouteSplit<T> out;
  out.kept_rows.reserve(static_cast<std::size_t>(tokens.rows()) - mask.bypassed.size());
  for (int i : mask.kept) {
    require(i >= 0 && i < n_image, ErrorKind::kInvariant, "kept index outside image span");
    out.kept_rows.push_back(i);
  }
  for (int r = n_image; r < tokens.rows(); ++r) out.kept_rows.push_back(r);
  for (int i : mask.bypassed) {
    require(i >= 0 && i < n_image, ErrorKind::kInvariant, "bypassed index outside image span");
    out.bypass_rows.push_back(i);
  }
  out.kept = ag::gather_rows(tokens, std::span<const int>(out.kept_rows));
  out.bypass = ag::gather_rows(tokens, std::span<const int>(out.bypass_rows));
  return out;
}

template <typename T>
ag::Var<T> route_merge(const ag::Var<T>& processed, const RouteSplit<T>& split) {
  require(processed.rows() == static_cast<ag::Index>(split.kept_rows.size()), ErrorKind::kShape,
          "processed stream length does not match the route mask");
  return ag::merge_rows(processed, std::span<const int>(split.kept_rows), split.bypass,
                        std::span<const int>(split.bypass_rows));
}

// Half-open block range [first, last) over the flattened execution order.
std::pair<int, int> routed_region_bounds(int total_blocks, int before, int after);
std::pair<int, int> routed_region_bounds(const backbone::XutConfig& cfg);

// Guidance mixing. Auto-guidance is active when either rate is nonzero and
// then requires cond_rate < uncond_rate and cond_rate < 0.5.
struct GuidanceSpec {
  double scale = 1.0;
  double cond_rate = 0.0;
  double uncond_rate = 0.0;

  bool auto_guidance() const { return cond_rate != 0.0 || uncond_rate != 0.0; }
  // Throws kInvalidGuidance.
  void validate() const;
};

inline constexpr double kTrainingRouteRate = 0.5;

// v_uncond + scale * (v_cond - v_uncond)
template <typename T>
ag::Mat<T> auto_guidance(const ag::Mat<T>& v_cond, const ag::Mat<T>& v_uncond, double scale) {
  require(v_cond.rows() == v_uncond.rows() && v_cond.cols() == v_uncond.cols(), ErrorKind::kShape,
          "guidance velocities differ in shape");
  if (scale == 1.0) return v_cond;
  if (scale == 0.0) return v_uncond;
  return v_uncond + static_cast<T>(scale) * (v_cond - v_uncond);
}

}  // namespace hdm::routing
