#include <gtest/gtest.h>

#include <cmath>

#include "hdm/flow.hpp"
#include "test_util.hpp"

using namespace hdm;
using namespace hdm::flow;
using hdm::testing::error_kind;
using hdm::testing::max_abs_diff;
using hdm::testing::random_image;

namespace {

Image scaled(const Image& x, double s) {
  Image out = x;
  for (auto& v : out.data) v = static_cast<float>(v * s);
  return out;
}

// Error of Euler on dx/dt = k x from t = 1 to 0 against the exact solution.
double euler_error(double k, int steps) {
  Image x1(1, 1, 1, 1.0f);
  const auto out = euler_sample([k](const Image& x, double) { return scaled(x, k); }, x1, uniform_time_grid(steps));
  return std::abs(out.data[0] - std::exp(-k));
}

double fitted_order(double k) {
  const double e1 = euler_error(k, 16);
  const double e2 = euler_error(k, 128);
  return std::log(e1 / e2) / std::log(8.0);
}

}  // namespace

TEST(Interpolant, Endpoints) {
  const auto x0 = random_image(3, 4, 4, 1);
  const auto x1 = random_image(3, 4, 4, 2);
  EXPECT_EQ(interpolate(x0, x1, 0.0), x0);
  EXPECT_EQ(interpolate(x0, x1, 1.0), x1);
  const auto mid = interpolate(x0, x1, 0.25);
  for (std::size_t i = 0; i < mid.data.size(); ++i) {
    EXPECT_NEAR(mid.data[i], 0.75 * x0.data[i] + 0.25 * x1.data[i], 1e-6);
  }
}

TEST(FlowSample, TargetIsNoiseMinusData) {
  const auto x0 = random_image(3, 4, 4, 3);
  const auto x1 = random_image(3, 4, 4, 4);
  const auto s = make_flow_sample(x0, x1, 0.3);
  for (std::size_t i = 0; i < x0.data.size(); ++i) EXPECT_FLOAT_EQ(s.v_target.data[i], x1.data[i] - x0.data[i]);
  EXPECT_EQ(s.t, 0.3);
}

TEST(FlowSample, TimeDrawsInUnitInterval) {
  std::mt19937_64 gen(5);
  for (auto mode : {TimeSampling::kUniform, TimeSampling::kLogitNormal}) {
    double mean = 0;
    for (int i = 0; i < 2000; ++i) {
      const double t = draw_time(gen, mode);
      ASSERT_GE(t, 0.0);
      ASSERT_LE(t, 1.0);
      mean += t / 2000;
    }
    EXPECT_NEAR(mean, 0.5, 0.03);
  }
  EXPECT_EQ(parse_time_sampling(to_string(TimeSampling::kLogitNormal)), TimeSampling::kLogitNormal);
  EXPECT_EQ(error_kind([] { parse_time_sampling("cosine"); }), ErrorKind::kInvalidConfig);
}

TEST(Loss, ExactVelocityGivesZero) {
  std::mt19937_64 gen(6);
  FlowBatch batch;
  for (int i = 0; i < 3; ++i) batch.push_back(draw_flow_sample(random_image(3, 4, 4, 10 + i), gen));
  const auto oracle = [&](const Image&, double, std::size_t s) { return batch[s].v_target; };
  EXPECT_EQ(fm_loss(oracle, batch), 0.0);
}

TEST(Loss, ConstantPredictionClosedForm) {
  std::mt19937_64 gen(7);
  FlowBatch batch;
  for (int i = 0; i < 2; ++i) batch.push_back(draw_flow_sample(random_image(1, 3, 3, 20 + i), gen));
  const float c = 0.7f;
  const auto constant = [&](const Image& x, double, std::size_t) { return Image(x.channels, x.height, x.width, c); };
  double ref = 0;
  int n = 0;
  for (const auto& s : batch) {
    for (std::size_t i = 0; i < s.x0.data.size(); ++i) {
      const double v = static_cast<double>(s.x1.data[i]) - s.x0.data[i];
      ref += (c - v) * (c - v);
      ++n;
    }
  }
  EXPECT_NEAR(fm_loss(constant, batch), ref / n, 1e-6);
}

TEST(Loss, CoincidentEndpointsWithZeroPrediction) {
  const auto x = random_image(3, 4, 4, 8);
  FlowBatch batch = {make_flow_sample(x, x, 0.6)};
  const auto zero = [](const Image& in, double, std::size_t) { return Image(in.channels, in.height, in.width); };
  EXPECT_EQ(fm_loss(zero, batch), 0.0);
}

TEST(Loss, NonFiniteIsDivergence) {
  FlowBatch batch = {make_flow_sample(random_image(1, 2, 2, 1), random_image(1, 2, 2, 2), 0.5)};
  const auto bad = [](const Image& in, double, std::size_t) {
    return Image(in.channels, in.height, in.width, std::nanf(""));
  };
  EXPECT_EQ(error_kind([&] { fm_loss(bad, batch); }), ErrorKind::kTrainingDivergence);
}

TEST(TimeGrid, UniformGrid) {
  const auto g = uniform_time_grid(4);
  ASSERT_EQ(g.size(), 5u);
  EXPECT_EQ(g.front(), 1.0);
  EXPECT_EQ(g.back(), 0.0);
  EXPECT_DOUBLE_EQ(g[1], 0.75);
  EXPECT_NO_THROW(validate_time_grid(g));
  EXPECT_EQ(error_kind([] { validate_time_grid({1.0, 0.5, 0.6, 0.0}); }), ErrorKind::kInvalidConfig);
  EXPECT_EQ(error_kind([] { validate_time_grid({0.9, 0.0}); }), ErrorKind::kInvalidConfig);
}

TEST(Euler, OneStepIsExactForConstantVelocity) {
  const auto x1 = random_image(3, 4, 4, 9);
  const auto v = random_image(3, 4, 4, 10);
  const auto out = euler_sample([&](const Image&, double) { return v; }, x1, uniform_time_grid(1));
  for (std::size_t i = 0; i < x1.data.size(); ++i) EXPECT_FLOAT_EQ(out.data[i], x1.data[i] - v.data[i]);
}

TEST(Euler, ManyStepsExactForConstantVelocity) {
  const auto x1 = random_image(3, 4, 4, 11);
  const auto v = random_image(3, 4, 4, 12);
  const auto out = euler_sample([&](const Image&, double) { return v; }, x1, uniform_time_grid(7));
  for (std::size_t i = 0; i < x1.data.size(); ++i) EXPECT_NEAR(out.data[i], x1.data[i] - v.data[i], 1e-5);
}

TEST(Euler, RecoversDataFromExactVelocityField) {
  const auto x0 = random_image(3, 4, 4, 13);
  const auto x1 = random_image(3, 4, 4, 14);
  Image v = x1;
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] -= x0.data[i];
  const auto out = euler_sample([&](const Image&, double) { return v; }, x1, uniform_time_grid(10));
  EXPECT_LE(max_abs_diff(out, x0), 1e-5);
}

// dx/dt = x run from 1 to 0 ends at e^-1 x1; dx/dt = -x ends at e x1.
TEST(Euler, FirstOrderConvergence) {
  EXPECT_NEAR(fitted_order(1.0), 1.0, 0.2);
  EXPECT_NEAR(fitted_order(-1.0), 1.0, 0.2);
  EXPECT_LT(euler_error(1.0, 1000), 1e-3);
  EXPECT_LT(euler_error(-1.0, 1000) / std::exp(1.0), 1e-3);
}

TEST(Euler, NonFiniteStateIsDivergence) {
  const auto blowup = [](const Image& x, double) { return scaled(x, 1e30); };
  EXPECT_EQ(error_kind([&] { euler_sample(blowup, Image(1, 2, 2, 1e10f), uniform_time_grid(4)); }),
            ErrorKind::kSamplerDivergence);
}

TEST(Guidance, MatchesDirectFormula) {
  const auto x = random_image(3, 4, 4, 15);
  const auto vc = random_image(3, 4, 4, 16);
  const auto vu = random_image(3, 4, 4, 17);
  std::vector<std::pair<bool, double>> calls;
  const PassFn pass = [&](const Image&, double, bool cond, double rate) {
    calls.emplace_back(cond, rate);
    return cond ? vc : vu;
  };
  const auto out = guided_velocity(pass, x, 0.5, {3.0, 0.1, 0.4});
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    EXPECT_NEAR(out.data[i], vu.data[i] + 3.0 * (vc.data[i] - vu.data[i]), 1e-5);
  }
  ASSERT_EQ(calls.size(), 2u);
  EXPECT_TRUE(std::find(calls.begin(), calls.end(), std::make_pair(true, 0.1)) != calls.end());
  EXPECT_TRUE(std::find(calls.begin(), calls.end(), std::make_pair(false, 0.4)) != calls.end());
}

TEST(Guidance, UnitScaleRunsConditionalOnly) {
  int n = 0;
  const PassFn pass = [&](const Image& x, double, bool cond, double) {
    ++n;
    EXPECT_TRUE(cond);
    return x;
  };
  guided_velocity(pass, random_image(1, 2, 2, 1), 0.5, {1.0, 0.0, 0.0});
  EXPECT_EQ(n, 1);
}

TEST(Sampler, NoiseIsSeedKeyed) {
  EXPECT_EQ(draw_noise(3, 8, 8, std::uint64_t{5}), draw_noise(3, 8, 8, std::uint64_t{5}));
  EXPECT_NE(draw_noise(3, 8, 8, std::uint64_t{5}), draw_noise(3, 8, 8, std::uint64_t{6}));
  EXPECT_EQ(noise_hash(draw_noise(3, 8, 8, std::uint64_t{5})), noise_hash(draw_noise(3, 8, 8, std::uint64_t{5})));
  EXPECT_NE(noise_hash(draw_noise(3, 8, 8, std::uint64_t{5})), noise_hash(draw_noise(3, 8, 8, std::uint64_t{6})));
}

TEST(Sampler, ModelPassesAreDeterministic) {
  backbone::XutModel<float> m(backbone::XutConfig::micro());
  m.randomize(3, 0.1);
  const auto pos = geometry::make_position_map(4, 4);
  const auto text = hdm::testing::random_mat<float>(3, 8, 1);
  const auto null = hdm::testing::random_mat<float>(1, 8, 2);
  const auto pass = model_pass(m, pos, text, null, 9);
  const auto x1 = draw_noise(3, 8, 8, std::uint64_t{1});
  const auto run = [&](double cr, double ur) {
    const routing::GuidanceSpec g{2.0, cr, ur};
    return euler_sample([&](const Image& x, double t) { return guided_velocity(pass, x, t, g); }, x1,
                        uniform_time_grid(5));
  };
  EXPECT_EQ(run(0.0, 0.5), run(0.0, 0.5));
  EXPECT_EQ(run(0.0, 0.0), run(0.0, 0.0));
  EXPECT_NE(run(0.0, 0.5), run(0.0, 0.0));
}

TEST(Sampler, RateZeroPassIsUnrouted) {
  backbone::XutModel<float> m(backbone::XutConfig::micro());
  m.randomize(4, 0.1);
  const auto pos = geometry::make_position_map(4, 4);
  const auto text = hdm::testing::random_mat<float>(3, 8, 1);
  const auto null = hdm::testing::random_mat<float>(1, 8, 2);
  const auto x = random_image(3, 8, 8, 3);
  const auto pass = model_pass(m, pos, text, null, 9);
  EXPECT_EQ(pass(x, 0.3, true, 0.0), backbone::xut_forward(m, x, pos, text, 0.3));
  EXPECT_EQ(pass(x, 0.3, false, 0.0), backbone::xut_forward(m, x, pos, null, 0.3));
}
