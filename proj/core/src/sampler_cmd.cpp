#include "hdm/sampler_cmd.hpp"

#include <chrono>
#include <cstdio>

#include "hdm/container.hpp"
#include "hdm/datapipe.hpp"
#include "hdm/error.hpp"
#include "hdm/flow.hpp"
#include "hdm/image_io.hpp"
#include "hdm/rng.hpp"

namespace hdm::cli {

nlohmann::json SampleResult::to_json() const {
  return {{"noise_hash", noise_hash},
          {"png_fnv1a", png_fnv1a},
          {"prompt_truncated", prompt_truncated},
          {"height", image.height},
          {"width", image.width},
          {"seconds", seconds}};
}

void validate_sample_options(const SampleOptions& o, int patch) {
  require(o.height > 0 && o.width > 0 && o.height % patch == 0 && o.width % patch == 0, ErrorKind::kUsage,
          "height and width must be positive multiples of the patch size " + std::to_string(patch));
  require(o.steps >= 1, ErrorKind::kUsage, "steps must be at least 1");
  require(o.zoom > 0.0, ErrorKind::kUsage, "zoom must be positive");
  try {
    routing::GuidanceSpec{o.guidance, o.cond_rate, o.uncond_rate}.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kUsage, e.what());
  }
}

SampleResult sample_image(const ModelBundle& bundle, const SampleOptions& o) {
  const auto& cfg = bundle.model.config();
  validate_sample_options(o, cfg.patch_size);
  const auto start = std::chrono::steady_clock::now();
  SampleResult r;

  ag::Mat<float> cond;
  if (!o.context_file.empty()) {
    cond = textcond::load_context_file(o.context_file);
    require(cond.cols() == cfg.context_dim, ErrorKind::kUsage, "context file width does not match the model");
  } else {
    auto ctx = bundle.text.encode_prompt(o.prompt);
    r.prompt_truncated = ctx.truncated;
    cond = ctx.valid_rows();
  }
  const ag::Mat<float> null = bundle.text.null_condition();

  const auto pos = datapipe::inference_position_map(o.height, o.width, cfg.patch_size,
                                                    {o.shift_x, o.shift_y, o.zoom});
  auto noise = flow::draw_noise(cfg.in_channels, o.height, o.width, o.seed);
  r.noise_hash = flow::noise_hash(noise);

  const routing::GuidanceSpec guidance{o.guidance, o.cond_rate, o.uncond_rate};
  const auto pass = flow::model_pass(bundle.model, pos, cond, null, rng::derive(o.seed, {0x726f757465}));
  const auto velocity = [&](const Image& x, double t) { return flow::guided_velocity(pass, x, t, guidance); };
  r.image = flow::euler_sample(velocity, std::move(noise), flow::uniform_time_grid(o.steps));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

SampleResult run_sample(const SampleOptions& o) {
  const auto bundle = load_bundle(o.checkpoint);
  auto r = sample_image(bundle, o);
  const auto bytes = image_io::encode_png(r.image);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(container::fnv1a(bytes.data(), bytes.size())));
  r.png_fnv1a = buf;
  image_io::write_png(o.output, r.image);
  return r;
}

}  // namespace hdm::cli
