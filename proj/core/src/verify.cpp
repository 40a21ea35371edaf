#include "hdm/verify.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "hdm/backbone.hpp"
#include "hdm/container.hpp"
#include "hdm/datapipe.hpp"
#include "hdm/flow.hpp"
#include "hdm/geometry.hpp"
#include "hdm/inspect.hpp"
#include "hdm/rng.hpp"
#include "hdm/routing.hpp"

namespace hdm::cli {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

namespace {

template <typename T>
ag::Mat<T> normal_mat(ag::Index r, ag::Index c, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  ag::Mat<T> m(r, c);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(gen));
  return m;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

CheckResult check_ranges(bool skew) {
  auto gen = rng::stream(11, {});
  double worst_prod = 0.0;
  double worst_ratio = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int h = 1 + static_cast<int>(rng::below(gen, 4096));
    const int w = 1 + static_cast<int>(rng::below(gen, 4096));
    auto r = geometry::compute_ranges(h, w);
    if (skew) r.r_w *= 1.000001;
    worst_prod = std::max(worst_prod, std::abs(r.r_h * r.r_w - 1.0));
    worst_ratio = std::max(worst_ratio, std::abs(r.r_h / r.r_w - static_cast<double>(h) / w));
  }
  return {"range_constraints", worst_prod <= 1e-12 && worst_ratio <= 1e-12,
          "max |rh*rw-1|=" + fmt(worst_prod) + " max |rh/rw-H/W|=" + fmt(worst_ratio)};
}

CheckResult check_position_map() {
  const auto m = geometry::make_position_map(4, 2);
  const double s2 = std::sqrt(2.0);
  bool ok = std::abs(m.at(0, 0).h + s2) < 1e-12 && std::abs(m.at(3, 0).h - s2) < 1e-12 &&
            std::abs(m.at(1, 0).h + s2 / 3) < 1e-12 && std::abs(m.at(0, 1).w - 1 / s2) < 1e-12;
  const auto c = geometry::make_position_map(3, 3);
  ok = ok && c.at(1, 1) == geometry::Coord{0.0, 0.0};
  return {"position_map", ok, "4x2 endpoints and 3x3 center"};
}

CheckResult check_rope() {
  geometry::RopeFrequencies f{32, 0.5, 10000.0, 1.0};
  auto gen = rng::stream(12, {});
  std::normal_distribution<double> n(0.0, 1.0);
  double worst_norm = 0.0;
  double worst_shift = 0.0;
  bool untouched = true;
  for (int draw = 0; draw < 200; ++draw) {
    std::vector<double> q(32), k(32);
    for (auto& v : q) v = n(gen);
    for (auto& v : k) v = n(gen);
    const geometry::Coord p1{n(gen), n(gen)}, p2{n(gen), n(gen)}, d{n(gen), n(gen)};
    const auto rq = geometry::rope_rotate(q, p1, f);
    const auto rk = geometry::rope_rotate(k, p2, f);
    const auto sq = geometry::rope_rotate(q, {p1.h + d.h, p1.w + d.w}, f);
    const auto sk = geometry::rope_rotate(k, {p2.h + d.h, p2.w + d.w}, f);
    double a = 0, b = 0;
    for (int i = 0; i < 32; ++i) {
      a += rq[i] * rk[i];
      b += sq[i] * sk[i];
    }
    worst_shift = std::max(worst_shift, std::abs(a - b));
    for (int p = 0; p < 8; ++p) {
      const double n0 = std::hypot(q[2 * p], q[2 * p + 1]);
      const double n1 = std::hypot(rq[2 * p], rq[2 * p + 1]);
      worst_norm = std::max(worst_norm, std::abs(n0 - n1));
    }
    for (int i = 16; i < 32; ++i) untouched = untouched && rq[i] == q[i];
  }
  return {"rope_properties", worst_shift <= 1e-5 && worst_norm <= 1e-6 && untouched,
          "max logit shift=" + fmt(worst_shift) + " max pair-norm change=" + fmt(worst_norm)};
}

CheckResult check_camera_identity() {
  bool ok = true;
  for (int h = 1; h <= 8; ++h) {
    for (int w = 1; w <= 8; ++w) ok = ok && geometry::apply_camera({h, w}, {}) == geometry::make_position_map(h, w);
  }
  return {"camera_identity", ok, "identity transform on 8x8 grid sizes"};
}

CheckResult check_tread_rate0() {
  const auto cfg = backbone::XutConfig::micro();
  backbone::XutModel<float> model(cfg);
  model.randomize(21, 0.2);
  auto gen = rng::stream(21, {});
  Image img(cfg.in_channels, 8, 8);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (auto& v : img.data) v = n(gen);
  const auto pos = geometry::make_position_map(4, 4);
  const auto text = normal_mat<float>(3, cfg.context_dim, gen);
  const auto mask = routing::make_route_mask(16, 0.0, 5);
  const auto a = backbone::xut_forward(model, img, pos, text, 0.3, nullptr);
  const auto b = backbone::xut_forward(model, img, pos, text, 0.3, &mask);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(double(a.data[i]) - b.data[i]));
  return {"tread_rate0", worst <= 1e-6, "max abs diff=" + fmt(worst)};
}

CheckResult check_split_merge() {
  ag::Tape<float> tape;
  auto gen = rng::stream(22, {});
  auto x = tape.constant(normal_mat<float>(20, 5, gen));
  bool ok = true;
  for (double rate : {0.0, 0.25, 0.5, 1.0}) {
    const auto mask = routing::make_route_mask(16, rate, 9);
    const auto split = routing::route_split(x, 16, mask);
    ok = ok && routing::route_merge(split.kept, split).value() == x.value();
  }
  return {"split_merge", ok, "round trip over rates 0, 0.25, 0.5, 1"};
}

CheckResult check_crop_slicing() {
  auto gen = rng::stream(23, {});
  const int patch = 2;
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const int x = patch * (1 + static_cast<int>(rng::below(gen, 8)));
    const int h = 2 + static_cast<int>(rng::below(gen, 60));
    const int w = 2 + static_cast<int>(rng::below(gen, 60));
    Image img(1, h, w);
    const auto resized = datapipe::resize_min_dim(img, x);
    const auto full = geometry::make_position_map(resized.height / patch, resized.width / patch);
    auto crop_gen = rng::stream(23, {static_cast<std::uint64_t>(trial)});
    const auto crop = datapipe::shifted_square_crop(resized, full, patch, crop_gen);
    const auto fresh = geometry::make_position_map(resized.height / patch, resized.width / patch);
    ok = crop.pos == fresh.slice(crop.y0 / patch, crop.x0 / patch, x / patch, x / patch);
  }
  return {"crop_slicing", ok, "1000 random resize + crop trials"};
}

CheckResult check_gradients() {
  const auto r0 = finite_difference_check(backbone::XutConfig::micro(), 200, 31, 0.0);
  const auto r5 = finite_difference_check(backbone::XutConfig::micro(), 200, 32, 0.5);
  const double worst = std::max(r0.max_rel_error, r5.max_rel_error);
  return {"grad_check", worst < 1e-4,
          std::to_string(r0.checked + r5.checked) + " entries of " + std::to_string(r0.parameters) +
              " params, max rel err=" + fmt(worst)};
}

CheckResult check_euler() {
  auto gen = rng::stream(24, {});
  const auto x0 = flow::draw_noise(3, 4, 4, gen);
  const auto x1 = flow::draw_noise(3, 4, 4, gen);
  Image v = x1;
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] -= x0.data[i];
  const auto out = flow::euler_sample([&](const Image&, double) { return v; }, x1, flow::uniform_time_grid(1));
  double worst = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) worst = std::max(worst, std::abs(double(out.data[i]) - x0.data[i]));
  // v = x integrates to x1 * e^-1 on the way from t = 1 to 0.
  std::vector<double> errs;
  for (int steps : {8, 16, 32, 64}) {
    Image one(1, 1, 1, 1.0f);
    const auto r = flow::euler_sample([](const Image& x, double) { return x; }, one, flow::uniform_time_grid(steps));
    errs.push_back(std::abs(r.data[0] - std::exp(-1.0)));
  }
  const double order = std::log2(errs.front() / errs.back()) / 3.0;
  return {"euler_oracle", worst <= 1e-6 && std::abs(order - 1.0) <= 0.2,
          "one-step error=" + fmt(worst) + " observed order=" + std::to_string(order)};
}

CheckResult check_table() {
  bool ok = false;
  table_self_check(&ok);
  return {"derived_counts", ok, "xut-small 16/20, xut-base 20/24, xut-large 20/24"};
}

CheckResult check_container() {
  container::TensorFile f;
  auto gen = rng::stream(25, {});
  f.add("a", normal_mat<float>(3, 4, gen));
  f.add("b", normal_mat<float>(1, 7, gen));
  f.metadata()["note"] = "roundtrip";
  const auto bytes = f.serialize();
  return {"container_roundtrip", container::TensorFile::deserialize(bytes).serialize() == bytes,
          std::to_string(bytes.size()) + " bytes"};
}

}  // namespace

GradCheckResult finite_difference_check(const backbone::XutConfig& cfg, int n_checked, std::uint64_t seed,
                                        double route_rate, int grid, int n_text, double step) {
  backbone::XutModel<double> model(cfg);
  model.randomize(seed, 0.2);
  auto gen = rng::stream(seed, {0x6664});
  const int n_image = grid * grid;
  const auto tokens = normal_mat<double>(n_image, cfg.patch_dim(), gen);
  const auto text = normal_mat<double>(n_text, cfg.context_dim, gen);
  const auto target = normal_mat<double>(n_image, cfg.patch_dim(), gen);
  const auto pos = geometry::make_position_map(grid, grid);
  std::optional<routing::RouteMask> mask;
  if (route_rate > 0.0) mask = routing::make_route_mask(n_image, route_rate, seed);

  auto inputs = [&] {
    backbone::ForwardInputs<double> in;
    in.image_tokens = tokens;
    in.positions = pos.coords();
    in.text = text;
    in.t = 0.37;
    in.route = mask ? &*mask : nullptr;
    return in;
  };
  auto loss_value = [&] {
    ag::Tape<double> tape;
    const auto bound = model.bind(tape, false);
    return ag::mse(model.forward(tape, bound, inputs()), target).value()(0, 0);
  };

  GradCheckResult r;
  r.parameters = model.params().count();
  ag::Tape<double> tape;
  const auto bound = model.bind(tape, true);
  const auto loss = ag::mse(model.forward(tape, bound, inputs()), target);
  r.loss = loss.value()(0, 0);
  tape.backward(loss);

  for (int i = 0; i < n_checked; ++i) {
    auto pick = rng::below(gen, static_cast<std::uint64_t>(r.parameters));
    std::size_t t = 0;
    while (pick >= static_cast<std::uint64_t>(model.params()[t].value.size())) {
      pick -= static_cast<std::uint64_t>(model.params()[t].value.size());
      ++t;
    }
    auto& value = model.params()[t].value.data()[pick];
    const auto& g = bound[t].grad();
    const double analytic = g.size() == 0 ? 0.0 : g.data()[pick];
    const double saved = value;
    value = saved + step;
    const double up = loss_value();
    value = saved - step;
    const double down = loss_value();
    value = saved;
    const double numeric = (up - down) / (2 * step);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
    ++r.checked;
  }
  return r;
}

std::vector<CheckResult> run_verify(const VerifyOptions& opts) {
  const std::vector<std::pair<std::string, std::function<CheckResult()>>> checks = {
      {"range_constraints", [&] { return check_ranges(opts.inject.contains("range")); }},
      {"position_map", check_position_map},
      {"rope_properties", check_rope},
      {"camera_identity", check_camera_identity},
      {"tread_rate0", check_tread_rate0},
      {"split_merge", check_split_merge},
      {"crop_slicing", check_crop_slicing},
      {"grad_check", check_gradients},
      {"euler_oracle", check_euler},
      {"derived_counts", check_table},
      {"container_roundtrip", check_container},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : checks) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {name, false, std::string("threw: ") + e.what()};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json to_json(const std::vector<CheckResult>& results) {
  auto arr = nlohmann::json::array();
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed;
    arr.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}});
  }
  return {{"checks", arr}, {"passed", ok}};
}

}  // namespace hdm::cli
