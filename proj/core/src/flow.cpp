#include "hdm/flow.hpp"

#include <bit>
#include <cmath>
#include <cstdio>

#include "hdm/container.hpp"
#include "hdm/error.hpp"
#include "hdm/rng.hpp"

namespace hdm::flow {

TimeSampling parse_time_sampling(const std::string& name) {
  if (name == "uniform") return TimeSampling::kUniform;
  if (name == "logit_normal") return TimeSampling::kLogitNormal;
  fail(ErrorKind::kInvalidConfig, "unknown time sampling '" + name + "'");
}

std::string to_string(TimeSampling s) { return s == TimeSampling::kUniform ? "uniform" : "logit_normal"; }

namespace {

void require_same_shape(const Image& a, const Image& b) {
  require(a.channels == b.channels && a.height == b.height && a.width == b.width, ErrorKind::kShape,
          "image shapes differ");
}

bool all_finite(const Image& x) {
  for (float v : x.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

Image interpolate(const Image& x0, const Image& x1, double t) {
  require_same_shape(x0, x1);
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  Image out = x0;
  const float a = static_cast<float>(1.0 - t);
  const float b = static_cast<float>(t);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * x1.data[i];
  return out;
}

double draw_time(std::mt19937_64& gen, TimeSampling sampling) {
  if (sampling == TimeSampling::kUniform) return rng::unit(gen);
  std::normal_distribution<double> normal(0.0, 1.0);
  return 1.0 / (1.0 + std::exp(-normal(gen)));
}

Image draw_noise(int channels, int height, int width, std::mt19937_64& gen) {
  Image out(channels, height, width);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& v : out.data) v = normal(gen);
  return out;
}

Image draw_noise(int channels, int height, int width, std::uint64_t seed) {
  auto gen = rng::stream(seed, {0x6e6f697365});
  return draw_noise(channels, height, width, gen);
}

FlowSample make_flow_sample(const Image& x0, const Image& x1, double t) {
  require(t >= 0.0 && t <= 1.0, ErrorKind::kShape, "time must lie in [0, 1]");
  FlowSample s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  s.xt = interpolate(x0, x1, t);
  s.v_target = x1;
  for (std::size_t i = 0; i < s.v_target.data.size(); ++i) s.v_target.data[i] -= x0.data[i];
  return s;
}

FlowSample draw_flow_sample(const Image& x0, std::mt19937_64& gen, TimeSampling sampling) {
  const double t = draw_time(gen, sampling);
  auto x1 = draw_noise(x0.channels, x0.height, x0.width, gen);
  return make_flow_sample(x0, x1, t);
}

double fm_loss(const VelocityFn& model, const FlowBatch& batch) {
  require(!batch.empty(), ErrorKind::kShape, "empty flow batch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto v = model(batch[i].xt, batch[i].t, i);
    require_same_shape(v, batch[i].v_target);
    for (std::size_t k = 0; k < v.data.size(); ++k) {
      const double d = static_cast<double>(v.data[k]) - batch[i].v_target.data[k];
      total += d * d;
    }
    count += v.data.size();
  }
  const double loss = total / static_cast<double>(count);
  require(std::isfinite(loss), ErrorKind::kTrainingDivergence, "flow-matching loss is not finite");
  return loss;
}

double fm_loss(const VelocityFn& model, const std::vector<Image>& x0, std::mt19937_64& gen, TimeSampling sampling) {
  FlowBatch batch;
  batch.reserve(x0.size());
  for (const auto& x : x0) batch.push_back(draw_flow_sample(x, gen, sampling));
  return fm_loss(model, batch);
}

std::vector<double> uniform_time_grid(int steps) {
  require(steps >= 1, ErrorKind::kInvalidConfig, "sampler needs at least one step");
  std::vector<double> grid(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) grid[static_cast<std::size_t>(i)] = 1.0 - static_cast<double>(i) / steps;
  grid.back() = 0.0;
  return grid;
}

void validate_time_grid(const std::vector<double>& grid) {
  require(grid.size() >= 2 && grid.front() == 1.0 && grid.back() == 0.0, ErrorKind::kInvalidConfig,
          "time grid must run from 1 to 0");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    require(grid[i] < grid[i - 1], ErrorKind::kInvalidConfig, "time grid must be strictly decreasing");
  }
}

std::vector<double> SamplerConfig::grid() const {
  auto g = schedule.empty() ? uniform_time_grid(steps) : schedule;
  validate_time_grid(g);
  return g;
}

Image euler_sample(const StepFn& velocity, Image x, const std::vector<double>& grid) {
  validate_time_grid(grid);
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const auto v = velocity(x, grid[i]);
    require_same_shape(v, x);
    const auto dt = static_cast<float>(grid[i + 1] - grid[i]);
    for (std::size_t k = 0; k < x.data.size(); ++k) x.data[k] += dt * v.data[k];
    require(all_finite(x), ErrorKind::kSamplerDivergence,
            "sampler state became non-finite at t=" + std::to_string(grid[i + 1]));
  }
  return x;
}

Image guided_velocity(const PassFn& pass, const Image& x, double t, const routing::GuidanceSpec& guidance) {
  guidance.validate();
  auto v_cond = pass(x, t, true, guidance.cond_rate);
  if (guidance.scale == 1.0) return v_cond;
  auto v_uncond = pass(x, t, false, guidance.uncond_rate);
  require_same_shape(v_cond, v_uncond);
  using Row = Eigen::Matrix<float, 1, Eigen::Dynamic>;
  const auto n = static_cast<ag::Index>(v_cond.data.size());
  const ag::Mat<float> vc = Eigen::Map<const Row>(v_cond.data.data(), n);
  const ag::Mat<float> vu = Eigen::Map<const Row>(v_uncond.data.data(), n);
  const auto mixed = routing::auto_guidance(vc, vu, guidance.scale);
  Image out = v_cond;
  std::copy(mixed.data(), mixed.data() + n, out.data.begin());
  return out;
}

PassFn model_pass(const backbone::XutModel<float>& model, const geometry::PositionMap& pos,
                  const ag::Mat<float>& cond_text, const ag::Mat<float>& null_text, std::uint64_t seed) {
  return [&model, &pos, &cond_text, &null_text, seed](const Image& x, double t, bool conditional, double rate) {
    const auto& text = conditional ? cond_text : null_text;
    if (rate == 0.0) return backbone::xut_forward(model, x, pos, text, t, nullptr);
    const int n_image = pos.height() * pos.width();
    const auto mask = routing::make_route_mask(
        n_image, rate, rng::derive(seed, {std::bit_cast<std::uint64_t>(t), conditional ? 1U : 0U}));
    return backbone::xut_forward(model, x, pos, text, t, &mask);
  };
}

std::string noise_hash(const Image& noise) {
  const auto h = container::fnv1a(noise.data.data(), noise.data.size() * sizeof(float));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hdm::flow
