#include <benchmark/benchmark.h>

#include <random>

#include "hdm/backbone.hpp"
#include "hdm/flow.hpp"
#include "hdm/geometry.hpp"
#include "hdm/trainer.hpp"

namespace {

using namespace hdm;

ag::Mat<float> random_mat(ag::Index r, ag::Index c, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  ag::Mat<float> m(r, c);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
  return m;
}

void BM_Attention(benchmark::State& state) {
  const auto n = state.range(0);
  ag::Tape<float> tape;
  const auto q = tape.constant(random_mat(n, 128, 1));
  const auto k = tape.constant(random_mat(n, 128, 2));
  const auto v = tape.constant(random_mat(n, 128, 3));
  for (auto _ : state) benchmark::DoNotOptimize(ag::attention(q, k, v, 4).value().data());
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Attention)->Arg(64)->Arg(128)->Arg(260)->Unit(benchmark::kMicrosecond);

void BM_RotaryTable(benchmark::State& state) {
  const auto pos = geometry::make_position_map(16, 16);
  const auto freqs = backbone::XutConfig::toy().rope();
  for (auto _ : state) benchmark::DoNotOptimize(geometry::make_rotary_table<float>(pos.coords(), 4, freqs).cos.data());
}
BENCHMARK(BM_RotaryTable)->Unit(benchmark::kMicrosecond);

// Toy backbone forward on a 32x32 image (256 image tokens); arg = route rate in percent.
void BM_ToyForward(benchmark::State& state) {
  backbone::XutModel<float> m(backbone::XutConfig::toy());
  m.randomize(1, 0.02);
  std::mt19937_64 gen(2);
  const auto x = flow::draw_noise(3, 32, 32, gen);
  const auto pos = geometry::make_position_map(16, 16);
  const auto text = random_mat(4, 64, 3);
  const double rate = static_cast<double>(state.range(0)) / 100.0;
  const auto mask = routing::make_route_mask(256, rate, 4);
  for (auto _ : state) {
    const auto out = backbone::xut_forward(m, x, pos, text, 0.5, rate > 0 ? &mask : nullptr);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_ToyForward)->Arg(0)->Arg(50)->Unit(benchmark::kMillisecond);

// One optimizer step of the toy config at batch 4; arg = TREAD rate in percent.
void BM_ToyTrainStep(benchmark::State& state) {
  cli::RunConfig cfg;
  cfg.schedule.batch = 4;
  cfg.schedule.tread_rate = static_cast<double>(state.range(0)) / 100.0;
  cli::Trainer t(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(t.step().loss);
  state.SetItemsProcessed(state.iterations() * 4 * 256);
}
BENCHMARK(BM_ToyTrainStep)->Arg(0)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
