#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hdm/container.hpp"
#include "hdm/inspect.hpp"
#include "hdm/run_config.hpp"
#include "hdm/sampler_cmd.hpp"
#include "hdm/trainer.hpp"
#include "hdm/verify.hpp"
#include "test_util.hpp"

using namespace hdm;
using namespace hdm::cli;
using hdm::testing::error_kind;
using hdm::testing::micro_run;
using hdm::testing::scratch_dir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int count_lines(const std::filesystem::path& p) {
  std::ifstream f(p);
  int n = 0;
  for (std::string line; std::getline(f, line);) n += line.empty() ? 0 : 1;
  return n;
}

int run_hdm(const std::string& args) {
  const std::string cmd = std::string(HDM_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

// Trains the micro config once per process and returns the final checkpoint.
const std::filesystem::path& trained_micro() {
  static const std::filesystem::path path = [] {
    const auto dir = scratch_dir("micro_trained");
    auto cfg = micro_run(30);
    Trainer t(cfg);
    return run_training(t, {dir, std::nullopt, {}});
  }();
  return path;
}

SampleOptions micro_sample_opts() {
  SampleOptions o;
  o.checkpoint = trained_micro();
  o.height = 8;
  o.width = 8;
  o.steps = 6;
  o.prompt = "red circle center";
  o.seed = 3;
  return o;
}

}  // namespace

TEST(Config, TomlMatchesJsonRoundTrip) {
  const auto cfg = load_run_config(std::filesystem::path(HDM_SOURCE_DIR) / "configs" / "toy.toml");
  EXPECT_EQ(cfg.model, backbone::XutConfig::toy());
  EXPECT_EQ(cfg.schedule.steps, 2000);
  EXPECT_EQ(cfg.schedule.tread_rate, 0.5);
  EXPECT_EQ(cfg.optimizer.beta2, 0.95);
  EXPECT_EQ(cfg.data.source, "procedural:0");
  EXPECT_EQ(run_config_from_json(to_json(cfg)), cfg);

  const auto dir = scratch_dir("config_json");
  std::ofstream(dir / "run.json") << to_json(cfg).dump(2);
  EXPECT_EQ(load_run_config(dir / "run.json"), cfg);
}

TEST(Config, PartialTomlKeepsDefaults) {
  const auto dir = scratch_dir("config_partial");
  std::ofstream(dir / "run.toml") << "seed = 5\n[schedule]\nsteps = 12\ntime_sampling = \"logit_normal\"\n";
  const auto cfg = load_run_config(dir / "run.toml");
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(cfg.schedule.steps, 12);
  EXPECT_EQ(cfg.schedule.time_sampling, flow::TimeSampling::kLogitNormal);
  EXPECT_EQ(cfg.schedule.batch, ScheduleConfig{}.batch);
  EXPECT_EQ(cfg.model, backbone::XutConfig::toy());
}

TEST(Config, RejectsInvalidValues) {
  const auto dir = scratch_dir("config_bad");
  std::ofstream(dir / "a.toml") << "[data]\ntrain_size = 31\n";
  EXPECT_EQ(error_kind([&] { load_run_config(dir / "a.toml"); }), ErrorKind::kInvalidConfig);
  std::ofstream(dir / "b.toml") << "[schedule]\ntread_rate = 1.5\n";
  EXPECT_EQ(error_kind([&] { load_run_config(dir / "b.toml"); }), ErrorKind::kInvalidRate);
  std::ofstream(dir / "c.toml") << "[model\nbroken";
  EXPECT_EQ(error_kind([&] { load_run_config(dir / "c.toml"); }), ErrorKind::kInvalidConfig);
  EXPECT_EQ(error_kind([&] { load_run_config(dir / "missing.toml"); }), ErrorKind::kIo);
}

TEST(Train, TenStepsGiveTenLogLinesAndOneCheckpoint) {
  const auto dir = scratch_dir("train10");
  Trainer t(micro_run(10));
  const auto final_ckpt = run_training(t, {dir, std::nullopt, {}});
  EXPECT_EQ(count_lines(dir / "metrics.jsonl"), 10);
  int ckpts = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) ckpts += e.path().extension() == ".hdm";
  EXPECT_EQ(ckpts, 1);
  EXPECT_EQ(final_ckpt.filename(), checkpoint_name(10));
  std::ifstream f(dir / "metrics.jsonl");
  std::string first;
  std::getline(f, first);
  const auto j = nlohmann::json::parse(first);
  EXPECT_EQ(j.at("step"), 1);
  EXPECT_TRUE(j.contains("loss"));
  EXPECT_TRUE(j.contains("image_tokens_per_sec"));
}

TEST(Train, PeriodicCheckpoints) {
  const auto dir = scratch_dir("train_periodic");
  auto cfg = micro_run(6);
  cfg.schedule.checkpoint_every = 2;
  Trainer t(cfg);
  run_training(t, {dir, std::nullopt, {}});
  for (int s : {2, 4, 6}) EXPECT_TRUE(std::filesystem::exists(dir / checkpoint_name(s))) << s;
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto a_dir = scratch_dir("resume_a");
  const auto b_dir = scratch_dir("resume_b");
  Trainer a(micro_run(10));
  const auto a_ckpt = run_training(a, {a_dir, std::nullopt, {}});
  Trainer b(micro_run(10));
  const auto mid = run_training(b, {b_dir, 5, {}});
  EXPECT_EQ(b.steps_done(), 5);
  auto resumed = Trainer::resume(mid);
  EXPECT_EQ(resumed.steps_done(), 5);
  const auto b_ckpt = run_training(resumed, {b_dir, 10, {}});
  EXPECT_EQ(container::TensorFile::load(a_ckpt).blob(), container::TensorFile::load(b_ckpt).blob());
  EXPECT_EQ(count_lines(b_dir / "metrics.jsonl"), 10);
}

TEST(Train, TwentyStepsAreReproducible) {
  Trainer a(micro_run(20)), b(micro_run(20));
  for (int i = 0; i < 20; ++i) {
    a.step();
    b.step();
  }
  EXPECT_EQ(a.checkpoint().blob(), b.checkpoint().blob());
  auto other = micro_run(20);
  other.seed = 8;
  Trainer c(other);
  c.step();
  Trainer d(micro_run(20));
  d.step();
  EXPECT_NE(c.checkpoint().blob(), d.checkpoint().blob());
}

TEST(Train, CheckpointSaveLoadSaveIsByteIdentical) {
  const auto dir = scratch_dir("ckpt_rt");
  Trainer t(micro_run(3));
  for (int i = 0; i < 3; ++i) t.step();
  t.save_checkpoint(dir / "a.hdm");
  const auto again = Trainer::resume(dir / "a.hdm");
  again.save_checkpoint(dir / "b.hdm");
  EXPECT_EQ(slurp(dir / "a.hdm"), slurp(dir / "b.hdm"));
  const auto file = container::TensorFile::load(dir / "a.hdm");
  EXPECT_EQ(container::TensorFile::deserialize(file.serialize()).serialize(), file.serialize());
}

TEST(Train, CorruptCheckpointIsIntegrityError) {
  const auto dir = scratch_dir("ckpt_corrupt");
  Trainer t(micro_run(1));
  t.save_checkpoint(dir / "ok.hdm");
  auto bytes = slurp(dir / "ok.hdm");
  bytes[bytes.size() - 10] ^= 0x5a;
  std::ofstream(dir / "bad.hdm", std::ios::binary) << bytes;
  EXPECT_EQ(error_kind([&] { Trainer::resume(dir / "bad.hdm"); }), ErrorKind::kIntegrity);
  EXPECT_EQ(error_kind([&] { inspect((dir / "bad.hdm").string()); }), ErrorKind::kIntegrity);
  std::ofstream(dir / "short.hdm", std::ios::binary) << bytes.substr(0, 12);
  EXPECT_EQ(error_kind([&] { load_bundle(dir / "short.hdm"); }), ErrorKind::kIntegrity);
  EXPECT_EQ(run_hdm("inspect " + (dir / "bad.hdm").string()), 4);
}

TEST(Train, RoutingShrinksRoutedRowsAndRaisesThroughput) {
  auto cfg = micro_run(3);
  cfg.model = backbone::XutConfig::toy();
  cfg.text = textcond::TextEncoderConfig{};
  cfg.data.train_size = 32;
  cfg.schedule.batch = 2;
  auto routed_cfg = cfg;
  routed_cfg.schedule.tread_rate = 0.5;
  auto plain_cfg = cfg;
  plain_cfg.schedule.tread_rate = 0.0;
  Trainer routed(routed_cfg), plain(plain_cfg);
  double routed_tps = 0, plain_tps = 0, routed_rows = 0, plain_rows = 0;
  for (int i = 0; i < 3; ++i) {
    const auto r = routed.step();
    const auto p = plain.step();
    routed_tps += r.image_tokens_per_sec;
    plain_tps += p.image_tokens_per_sec;
    routed_rows += r.routed_rows_per_block;
    plain_rows += p.routed_rows_per_block;
  }
  EXPECT_LT(routed_rows, plain_rows);
  EXPECT_NEAR(plain_rows - routed_rows, 3 * 128.0, 1e-9);
  EXPECT_GT(routed_tps, plain_tps);
}

TEST(Sample, SameInvocationGivesIdenticalBytes) {
  const auto dir = scratch_dir("sample_det");
  auto o = micro_sample_opts();
  o.output = dir / "a.png";
  const auto a = run_sample(o);
  o.output = dir / "b.png";
  const auto b = run_sample(o);
  EXPECT_EQ(slurp(dir / "a.png"), slurp(dir / "b.png"));
  EXPECT_EQ(a.png_fnv1a, b.png_fnv1a);
  EXPECT_EQ(a.noise_hash, b.noise_hash);
}

TEST(Sample, CameraShiftKeepsNoiseChangesImage) {
  const auto bundle = load_bundle(trained_micro());
  auto o = micro_sample_opts();
  const auto base = sample_image(bundle, o);
  o.shift_x = 0.0;
  o.zoom = 1.0;
  EXPECT_EQ(sample_image(bundle, o).image, base.image);
  o.shift_x = 0.25;
  const auto shifted = sample_image(bundle, o);
  EXPECT_EQ(shifted.noise_hash, base.noise_hash);
  EXPECT_NE(shifted.image, base.image);
  for (double z : {0.75, 1.33}) {
    auto oz = micro_sample_opts();
    oz.zoom = z;
    const auto zoomed = sample_image(bundle, oz);
    EXPECT_EQ(zoomed.noise_hash, base.noise_hash);
    EXPECT_NE(zoomed.image, base.image);
  }
}

TEST(Sample, GuidanceRateConstraint) {
  auto o = micro_sample_opts();
  o.guidance = 2.0;
  o.cond_rate = 0.5;
  o.uncond_rate = 0.25;
  EXPECT_EQ(error_kind([&] { validate_sample_options(o, 2); }), ErrorKind::kUsage);
  o.cond_rate = 0.3;
  o.uncond_rate = 0.3;
  EXPECT_EQ(error_kind([&] { validate_sample_options(o, 2); }), ErrorKind::kUsage);
  o.cond_rate = 0.25;
  o.uncond_rate = 0.5;
  EXPECT_NO_THROW(validate_sample_options(o, 2));
  EXPECT_NO_THROW(sample_image(load_bundle(trained_micro()), o));
  const auto ck = trained_micro().string();
  EXPECT_EQ(run_hdm("sample " + ck + " --height 8 --width 8 --steps 2 --guidance 2 --cr 0.5 --ur 0.25 -o " +
                    (scratch_dir("cli_guid") / "x.png").string()),
            2);
}

TEST(Sample, RejectsBadGeometry) {
  auto o = micro_sample_opts();
  o.height = 7;
  EXPECT_EQ(error_kind([&] { validate_sample_options(o, 2); }), ErrorKind::kUsage);
  o = micro_sample_opts();
  o.zoom = 0.0;
  EXPECT_EQ(error_kind([&] { validate_sample_options(o, 2); }), ErrorKind::kUsage);
}

TEST(Sample, RectangularTarget) {
  auto o = micro_sample_opts();
  o.height = 8;
  o.width = 16;
  const auto r = sample_image(load_bundle(trained_micro()), o);
  EXPECT_EQ(r.image.height, 8);
  EXPECT_EQ(r.image.width, 16);
}

TEST(Sample, NullAndRealCaptionsDiffer) {
  const auto bundle = load_bundle(trained_micro());
  EXPECT_GT(bundle.text.null_condition().cwiseAbs().maxCoeff(), 0.0f);
  auto o = micro_sample_opts();
  const auto real = sample_image(bundle, o);
  o.prompt = "";
  const auto null = sample_image(bundle, o);
  EXPECT_EQ(real.noise_hash, null.noise_hash);
  EXPECT_NE(real.image, null.image);
}

TEST(Sample, ContextFileOverridesPrompt) {
  const auto dir = scratch_dir("sample_ctx");
  const auto bundle = load_bundle(trained_micro());
  auto o = micro_sample_opts();
  const auto from_prompt = sample_image(bundle, o);
  textcond::save_context_file(dir / "ctx.hdm", bundle.text.encode_prompt(o.prompt).rows);
  o.prompt = "blue square top";
  o.context_file = dir / "ctx.hdm";
  EXPECT_EQ(sample_image(bundle, o).image, from_prompt.image);
}

TEST(Inspect, TableConfigurations) {
  EXPECT_NE(inspect("xut-base").text.find("blocks=20 attn=24"), std::string::npos);
  EXPECT_NE(inspect("xut-small").text.find("blocks=16 attn=20"), std::string::npos);
  EXPECT_NE(inspect("xut-large").text.find("blocks=20 attn=24"), std::string::npos);
  bool ok = false;
  table_self_check(&ok);
  EXPECT_TRUE(ok);
}

TEST(Inspect, ToyMatchesHandFormula) {
  const auto r = inspect("toy");
  const int blocks = (1 + 2) * 2 + 1 + 1;
  EXPECT_EQ(r.json.at("derived").at("blocks"), blocks);
  EXPECT_EQ(r.json.at("derived").at("attn"), blocks + 2);
  EXPECT_TRUE(r.self_check_ok);
}

TEST(Inspect, ReportSurvivesCheckpointRoundTrip) {
  const auto dir = scratch_dir("inspect_rt");
  const auto a = inspect(trained_micro().string());
  const auto bundle_trainer = Trainer::resume(trained_micro());
  bundle_trainer.save_checkpoint(dir / "copy.hdm");
  const auto b = inspect((dir / "copy.hdm").string());
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.json, b.json);
}

TEST(Inspect, UnknownTargetIsUsageError) {
  EXPECT_TRUE(error_kind([] { inspect("no-such-model"); }).has_value());
}

TEST(Verify, FreshBuildPassesEveryCheck) {
  const auto results = run_verify();
  EXPECT_GE(results.size(), 10u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
  EXPECT_EQ(run_hdm("verify"), 0);
}

TEST(Verify, InjectedRangeFaultFailsOnlyThatCheck) {
  VerifyOptions opts;
  opts.inject = {"range"};
  for (const auto& r : run_verify(opts)) {
    EXPECT_EQ(r.passed, r.name != "range_constraints") << r.name;
  }
  EXPECT_EQ(run_hdm("verify --inject range"), 1);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_hdm("train"), 2);
  EXPECT_EQ(run_hdm("bogus"), 2);
  EXPECT_EQ(run_hdm("--json inspect toy"), 0);
}
