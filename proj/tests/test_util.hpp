#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "hdm/autograd.hpp"
#include "hdm/error.hpp"
#include "hdm/image.hpp"
#include "hdm/run_config.hpp"

namespace hdm::testing {

inline Image random_image(int c, int h, int w, std::uint64_t seed, float stddev = 1.0f) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> n(0.0f, stddev);
  Image img(c, h, w);
  for (auto& v : img.data) v = n(gen);
  return img;
}

template <typename T>
ag::Mat<T> random_mat(ag::Index r, ag::Index c, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, stddev);
  ag::Mat<T> m(r, c);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(gen));
  return m;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  }
  return worst;
}

// Kind of the hdm::Error thrown by f, or nullopt if it returns normally.
template <typename F>
std::optional<ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(HDM_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Tiny model on 8x8 procedural images; steps run in milliseconds.
inline cli::RunConfig micro_run(std::int64_t steps = 10) {
  cli::RunConfig c;
  c.model = backbone::XutConfig::micro();
  c.text.context_dim = c.model.context_dim;
  c.text.n_heads = 2;
  c.text.mlp_dim = 16;
  c.text.max_context = 8;
  c.data.source = "procedural:3";
  c.data.train_size = 8;
  c.optimizer.warmup_steps = 2;
  c.schedule.steps = steps;
  c.schedule.batch = 2;
  c.sampling.height = 8;
  c.sampling.width = 8;
  c.seed = 7;
  return c;
}

}  // namespace hdm::testing
