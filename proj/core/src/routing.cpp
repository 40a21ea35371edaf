#include "hdm/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace hdm::routing {

RouteMask make_route_mask(int n_image_tokens, double rate, std::uint64_t seed) {
  require(n_image_tokens >= 0, ErrorKind::kInvalidDimension, "negative token count");
  require(rate >= 0.0 && rate <= 1.0 && std::isfinite(rate), ErrorKind::kInvalidRate,
          "route rate " + std::to_string(rate) + " outside [0, 1]");
  const int n_bypass = static_cast<int>(std::lround(rate * n_image_tokens));
  std::vector<int> order(static_cast<std::size_t>(n_image_tokens));
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates; std::shuffle's draw pattern is library specific.
  std::mt19937_64 rng(seed);
  for (int i = 0; i < n_bypass; ++i) {
    const auto span = static_cast<std::uint64_t>(n_image_tokens - i);
    const int j = i + static_cast<int>(rng() % span);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  RouteMask mask;
  mask.rate = rate;
  mask.seed = seed;
  mask.bypassed.assign(order.begin(), order.begin() + n_bypass);
  std::sort(mask.bypassed.begin(), mask.bypassed.end());
  mask.kept.reserve(static_cast<std::size_t>(n_image_tokens - n_bypass));
  std::size_t b = 0;
  for (int i = 0; i < n_image_tokens; ++i) {
    if (b < mask.bypassed.size() && mask.bypassed[b] == i) {
      ++b;
    } else {
      mask.kept.push_back(i);
    }
  }
  return mask;
}

std::pair<int, int> routed_region_bounds(int total_blocks, int before, int after) {
  require(before >= 0 && after >= 0 && before + after <= total_blocks, ErrorKind::kInvalidConfig,
          "routing needs N + M <= total blocks (N=" + std::to_string(before) + ", M=" + std::to_string(after) +
              ", total=" + std::to_string(total_blocks) + ")");
  return {before, total_blocks - after};
}

std::pair<int, int> routed_region_bounds(const backbone::XutConfig& cfg) {
  return routed_region_bounds(cfg.u_blocks() + cfg.tread_before + cfg.tread_after, cfg.tread_before,
                              cfg.tread_after);
}

void GuidanceSpec::validate() const {
  require(std::isfinite(scale), ErrorKind::kInvalidGuidance, "guidance scale must be finite");
  require(cond_rate >= 0.0 && cond_rate <= 1.0 && uncond_rate >= 0.0 && uncond_rate <= 1.0,
          ErrorKind::kInvalidGuidance, "guidance route rates must lie in [0, 1]");
  if (!auto_guidance()) return;
  require(cond_rate < uncond_rate, ErrorKind::kInvalidGuidance,
          "auto-guidance needs cr < ur (cr=" + std::to_string(cond_rate) + ", ur=" + std::to_string(uncond_rate) + ")");
  require(cond_rate < kTrainingRouteRate, ErrorKind::kInvalidGuidance,
          "auto-guidance needs cr below the training route rate 0.5");
}

}  // namespace hdm::routing
