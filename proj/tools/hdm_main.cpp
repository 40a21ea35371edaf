// hdm: train, sample, inspect and verify.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "hdm/error.hpp"
#include "hdm/inspect.hpp"
#include "hdm/run_config.hpp"
#include "hdm/sampler_cmd.hpp"
#include "hdm/trainer.hpp"
#include "hdm/verify.hpp"

namespace {

enum ExitCode { kOk = 0, kChecksFailed = 1, kUsage = 2, kDiverged = 3, kIntegrity = 4, kFailure = 5 };

int exit_code_for(hdm::ErrorKind kind) {
  using hdm::ErrorKind;
  switch (kind) {
    case ErrorKind::kUsage:
    case ErrorKind::kInvalidConfig:
    case ErrorKind::kInvalidGuidance:
    case ErrorKind::kInvalidRate:
    case ErrorKind::kInvalidDimension:
    case ErrorKind::kInvalidTransform:
      return kUsage;
    case ErrorKind::kTrainingDivergence:
    case ErrorKind::kSamplerDivergence:
      return kDiverged;
    case ErrorKind::kIntegrity:
      return kIntegrity;
    default:
      return kFailure;
  }
}

struct TrainArgs {
  std::string config;
  std::string resume;
  std::string out = "run";
  long long steps = -1;
};

int cmd_train(const TrainArgs& a, bool json) {
  if (a.config.empty() == a.resume.empty()) {
    throw hdm::Error(hdm::ErrorKind::kUsage, "train needs exactly one of --config or --resume");
  }
  auto trainer = a.resume.empty() ? hdm::cli::Trainer(hdm::cli::load_run_config(a.config))
                                  : hdm::cli::Trainer::resume(a.resume);
  hdm::cli::TrainOptions opts;
  opts.out_dir = a.out;
  if (a.steps >= 0) opts.steps = a.steps;
  opts.on_step = [json](const hdm::cli::StepMetrics& m) {
    if (json) {
      std::cout << m.to_json().dump() << std::endl;
      return;
    }
    std::printf("step %lld loss %.5f lr %.2e grad_norm %.3f tok/s %.0f routed_rows %.1f\n",
                static_cast<long long>(m.step), m.loss, m.lr, m.grad_norm, m.image_tokens_per_sec,
                m.routed_rows_per_block);
    std::fflush(stdout);
  };
  const auto final_ckpt = hdm::cli::run_training(trainer, opts);
  if (json) {
    std::cout << nlohmann::json{{"event", "done"}, {"checkpoint", final_ckpt.string()}, {"step", trainer.steps_done()}}
                     .dump()
              << std::endl;
  } else {
    std::printf("wrote %s\n", final_ckpt.string().c_str());
  }
  return kOk;
}

int cmd_sample(const hdm::cli::SampleOptions& o, bool json) {
  const auto r = hdm::cli::run_sample(o);
  if (r.prompt_truncated) std::cerr << "warning: prompt truncated to the text context length\n";
  if (json) {
    auto j = r.to_json();
    j["output"] = o.output.string();
    std::cout << j.dump() << std::endl;
  } else {
    std::printf("noise_hash %s\nwrote %s (%dx%d, fnv1a %s)\n", r.noise_hash.c_str(), o.output.string().c_str(),
                r.image.height, r.image.width, r.png_fnv1a.c_str());
  }
  return kOk;
}

int cmd_inspect(const std::string& target, bool json) {
  const auto r = hdm::cli::inspect(target);
  if (json) {
    std::cout << r.json.dump(2) << std::endl;
  } else {
    std::cout << r.text;
  }
  return r.self_check_ok ? kOk : kChecksFailed;
}

int cmd_verify(const std::vector<std::string>& inject, bool json) {
  hdm::cli::VerifyOptions opts;
  opts.inject.insert(inject.begin(), inject.end());
  const auto results = hdm::cli::run_verify(opts);
  bool ok = true;
  for (const auto& r : results) ok = ok && r.passed;
  if (json) {
    std::cout << hdm::cli::to_json(results).dump(2) << std::endl;
  } else {
    for (const auto& r : results) {
      std::printf("%-20s %s  %6.2fs  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.seconds, r.detail.c_str());
    }
    std::printf("%s\n", ok ? "all checks passed" : "some checks FAILED");
  }
  return ok ? kOk : kChecksFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-U transformer diffusion: train, sample, inspect, verify"};
  app.require_subcommand(1);
  bool json = false;
  app.add_flag("--json", json, "Machine-readable JSON output on stdout");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train from a TOML/JSON run config or resume a checkpoint");
  t->add_option("-c,--config", train.config, "Run config (.toml or .json)");
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_option("-o,--out", train.out, "Output directory for checkpoints and metrics.jsonl");
  t->add_option("--steps", train.steps, "Total steps (overrides the config)");

  hdm::cli::SampleOptions so;
  std::string ckpt, out = "sample.png", context;
  auto* s = app.add_subcommand("sample", "Generate an image from a checkpoint");
  s->add_option("checkpoint", ckpt, "Checkpoint file")->required();
  s->add_option("-p,--prompt", so.prompt, "Caption");
  s->add_option("--context", context, "Context embedding file (overrides --prompt)");
  s->add_option("--height", so.height, "Image height in pixels");
  s->add_option("--width", so.width, "Image width in pixels");
  s->add_option("--steps", so.steps, "Euler steps");
  s->add_option("--guidance", so.guidance, "Guidance scale");
  s->add_option("--cr", so.cond_rate, "Routing rate of the conditional pass");
  s->add_option("--ur", so.uncond_rate, "Routing rate of the unconditional pass");
  s->add_option("--shift-x", so.shift_x, "Camera shift along w");
  s->add_option("--shift-y", so.shift_y, "Camera shift along h");
  s->add_option("--zoom", so.zoom, "Camera zoom (>1 zooms in)");
  s->add_option("--seed", so.seed, "Noise seed");
  s->add_option("-o,--out", out, "Output PNG");

  std::string target;
  auto* i = app.add_subcommand("inspect", "Report derived counts and parameter totals");
  i->add_option("target", target, "Checkpoint, run config, or xut-small|xut-base|xut-large|toy|micro")->required();

  std::vector<std::string> inject;
  auto* v = app.add_subcommand("verify", "Run the fast invariant suite");
  v->add_option("--inject", inject, "Deliberately break a check (range)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*t) return cmd_train(train, json);
    if (*s) {
      so.checkpoint = ckpt;
      so.output = out;
      so.context_file = context;
      return cmd_sample(so, json);
    }
    if (*i) return cmd_inspect(target, json);
    if (*v) return cmd_verify(inject, json);
  } catch (const hdm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (json) std::cout << nlohmann::json{{"error", e.what()}}.dump() << std::endl;
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
