#pragma once

// Flow matching with t = 1 as pure noise: x_t = (1 - t) x0 + t x1 and the
// model regresses v = x1 - x0. Sampling integrates from t = 1 down to 0.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hdm/backbone.hpp"
#include "hdm/image.hpp"
#include "hdm/routing.hpp"

namespace hdm::flow {

enum class TimeSampling { kUniform, kLogitNormal };

TimeSampling parse_time_sampling(const std::string& name);
std::string to_string(TimeSampling s);

struct FlowSample {
  Image x0;
  Image x1;
  Image xt;
  Image v_target;
  double t = 0.0;
};

using FlowBatch = std::vector<FlowSample>;

// (1 - t) x0 + t x1; exactly x0 at t = 0 and x1 at t = 1.
Image interpolate(const Image& x0, const Image& x1, double t);

double draw_time(std::mt19937_64& gen, TimeSampling sampling = TimeSampling::kUniform);
Image draw_noise(int channels, int height, int width, std::mt19937_64& gen);
// Initial sampler noise for a seed.
Image draw_noise(int channels, int height, int width, std::uint64_t seed);

FlowSample make_flow_sample(const Image& x0, const Image& x1, double t);
FlowSample draw_flow_sample(const Image& x0, std::mt19937_64& gen, TimeSampling sampling = TimeSampling::kUniform);

// Velocity prediction for one sample of the batch.
using VelocityFn = std::function<Image(const Image& x, double t, std::size_t sample)>;

// Mean squared error against v_target over every element of the batch.
// Throws kTrainingDivergence when it is not finite.
double fm_loss(const VelocityFn& model, const FlowBatch& batch);
// Draws t and x1 per sample from gen, then evaluates the loss.
double fm_loss(const VelocityFn& model, const std::vector<Image>& x0, std::mt19937_64& gen,
               TimeSampling sampling = TimeSampling::kUniform);

// 1, 1 - 1/steps, ..., 0.
std::vector<double> uniform_time_grid(int steps);
// Throws kInvalidConfig unless the grid runs strictly downward from 1 to 0.
void validate_time_grid(const std::vector<double>& grid);

struct SamplerConfig {
  int steps = 50;
  routing::GuidanceSpec guidance;
  std::uint64_t seed = 0;
  std::vector<double> schedule;  // empty means uniform_time_grid(steps)

  std::vector<double> grid() const;
};

// Velocity of one sampler step.
using StepFn = std::function<Image(const Image& x, double t)>;

// x <- x + (t_next - t_cur) v(x, t_cur) over the grid. Throws
// kSamplerDivergence when the state stops being finite.
Image euler_sample(const StepFn& velocity, Image x1, const std::vector<double>& grid);

// One model evaluation: conditional or null text, with a token routing rate.
using PassFn = std::function<Image(const Image& x, double t, bool conditional, double route_rate)>;

// Conditional pass at cond_rate, unconditional pass at uncond_rate, mixed by
// routing::auto_guidance. Scale 1 runs the conditional pass only.
Image guided_velocity(const PassFn& pass, const Image& x, double t, const routing::GuidanceSpec& guidance);

// Passes through a float backbone. Rate 0 disables routing altogether; other
// rates draw a mask keyed by (seed, t).
PassFn model_pass(const backbone::XutModel<float>& model, const geometry::PositionMap& pos,
                  const ag::Mat<float>& cond_text, const ag::Mat<float>& null_text, std::uint64_t seed);

std::string noise_hash(const Image& noise);

}  // namespace hdm::flow
