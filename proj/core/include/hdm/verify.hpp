#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdm/xut_config.hpp"

namespace hdm::cli {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  // Fault injection for testing the harness itself, by check name. Only
  // "range" is wired: it skews r_w by one part in a million.
  std::set<std::string> inject;
};

std::vector<CheckResult> run_verify(const VerifyOptions& opts = {});
nlohmann::json to_json(const std::vector<CheckResult>& results);

struct GradCheckResult {
  int checked = 0;
  double max_rel_error = 0.0;
  std::int64_t parameters = 0;
  double loss = 0.0;
};

// Central differences against reverse-mode gradients of an MSE loss on a
// double-precision copy of cfg with random weights, inputs and targets.
// route_rate > 0 fixes one mask for every evaluation.
GradCheckResult finite_difference_check(const backbone::XutConfig& cfg, int n_checked, std::uint64_t seed,
                                        double route_rate, int grid = 4, int n_text = 3, double step = 1e-5);

// |a - b| / max(|a|, |b|, 1e-6)
double relative_error(double a, double b);

}  // namespace hdm::cli
