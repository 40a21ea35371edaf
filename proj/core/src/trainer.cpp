#include "hdm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "hdm/error.hpp"
#include "hdm/flow.hpp"
#include "hdm/rng.hpp"

namespace hdm::cli {

namespace {

constexpr std::uint64_t kTrainStream = 0x747261696e;
constexpr std::uint64_t kModelInit = 0x6d6f64656c;
constexpr const char* kNullName = "text.null";

std::vector<const ag::Mat<float>*> shapes_of(const backbone::XutModel<float>& model,
                                             const textcond::ToyCausalEncoder& text) {
  std::vector<const ag::Mat<float>*> out;
  for (const auto& t : model.params()) out.push_back(&t.value);
  out.push_back(&text.params()[text.params().index_of("null")].value);
  return out;
}

std::vector<std::string> names_of(const backbone::XutModel<float>& model) {
  std::vector<std::string> out;
  for (const auto& t : model.params()) out.push_back("model." + t.name);
  out.emplace_back(kNullName);
  return out;
}

void assign_checked(ag::Mat<float>& dst, const ag::Mat<float>& src, const std::string& name) {
  require(dst.rows() == src.rows() && dst.cols() == src.cols(), ErrorKind::kIntegrity,
          "checkpoint tensor " + name + " has the wrong shape");
  dst = src;
}

}  // namespace

nlohmann::json StepMetrics::to_json(bool with_timing) const {
  nlohmann::json j = {{"step", step},
                      {"loss", loss},
                      {"lr", lr},
                      {"grad_norm", grad_norm},
                      {"routed_rows_per_block", routed_rows_per_block},
                      {"dropped_captions", dropped_captions}};
  if (with_timing) {
    j["seconds"] = seconds;
    j["image_tokens_per_sec"] = image_tokens_per_sec;
  }
  return j;
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld.hdm", static_cast<long long>(step));
  return buf;
}

Trainer::Trainer(const RunConfig& cfg) : Trainer(cfg, true) {}

Trainer::Trainer(const RunConfig& cfg, bool init)
    : cfg_(cfg),
      text_(cfg.text),
      model_(cfg.model),
      pipeline_(cfg.data, cfg.model.patch_size, text_.tokenizer()),
      opt_(cfg.optimizer, names_of(model_), shapes_of(model_, text_), cfg.model.model_dim) {
  cfg_.validate();
  if (!init) return;
  model_.init(rng::derive(cfg_.seed, {kModelInit}));
  if (!cfg_.init_from.empty()) {
    load_state(container::TensorFile::load(cfg_.init_from), false);
  }
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint) {
  auto file = container::TensorFile::load(checkpoint);
  require(file.metadata().contains("config"), ErrorKind::kIntegrity, "checkpoint carries no run config");
  Trainer t(run_config_from_json(file.metadata()["config"]), false);
  t.load_state(file, true);
  return t;
}

std::vector<std::string> Trainer::trainable_names() const { return names_of(model_); }

std::vector<ag::Mat<float>*> Trainer::trainable() {
  std::vector<ag::Mat<float>*> out;
  for (auto& t : model_.params()) out.push_back(&t.value);
  out.push_back(&text_.null_row());
  return out;
}

void Trainer::load_state(const container::TensorFile& file, bool with_optimizer) {
  for (auto& t : model_.params()) assign_checked(t.value, file.get("model." + t.name), "model." + t.name);
  for (auto& t : text_.params()) assign_checked(t.value, file.get("text." + t.name), "text." + t.name);
  if (!with_optimizer) return;
  const auto names = trainable_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    assign_checked(opt_.first_moments()[i], file.get("opt.m." + names[i]), "opt.m." + names[i]);
    assign_checked(opt_.second_moments()[i], file.get("opt.v." + names[i]), "opt.v." + names[i]);
  }
  const auto& meta = file.metadata();
  try {
    step_ = meta.at("step").get<std::int64_t>();
    opt_.set_count(meta.at("optimizer_count").get<std::int64_t>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIntegrity, std::string("checkpoint metadata incomplete: ") + e.what());
  }
}

container::TensorFile Trainer::checkpoint() const {
  container::TensorFile f;
  for (const auto& t : model_.params()) f.add("model." + t.name, t.value);
  for (const auto& t : text_.params()) f.add("text." + t.name, t.value);
  const auto names = trainable_names();
  for (std::size_t i = 0; i < names.size(); ++i) f.add("opt.m." + names[i], opt_.first_moments()[i]);
  for (std::size_t i = 0; i < names.size(); ++i) f.add("opt.v." + names[i], opt_.second_moments()[i]);
  auto& meta = f.metadata();
  meta["kind"] = "checkpoint";
  meta["step"] = step_;
  meta["optimizer_count"] = opt_.count();
  meta["config"] = to_json(cfg_);
  meta["model_config"] = cfg_.model;
  // All draws are keyed by (seed, step, sample), so this is the whole RNG state.
  meta["rng"] = {{"seed", cfg_.seed}, {"next_step", step_}};
  return f;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const { checkpoint().save(path); }

Trainer::Accumulated Trainer::accumulate(std::int64_t k, double tread_rate) const {
  const int per_step = cfg_.schedule.batch * cfg_.schedule.grad_accum;
  const int patch = cfg_.model.patch_size;
  const float weight = 1.0f / static_cast<float>(per_step);
  Accumulated acc;
  acc.grads = zero_grads(model_.params());
  acc.grads.push_back(ag::Mat<float>::Zero(1, cfg_.model.context_dim));
  for (int j = 0; j < per_step; ++j) {
    const auto sample = pipeline_.sample(static_cast<std::uint64_t>(k) * per_step + j);
    auto gen = rng::stream(cfg_.seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(j), kTrainStream});
    const auto fs = flow::draw_flow_sample(sample.image, gen, cfg_.schedule.time_sampling);
    const bool drop = rng::unit(gen) < cfg_.schedule.caption_dropout;
    const int n_image = sample.pos.height() * sample.pos.width();
    std::optional<routing::RouteMask> mask;
    if (tread_rate > 0.0) mask = routing::make_route_mask(n_image, tread_rate, gen());

    ag::Tape<float> tape;
    const auto bound = model_.bind(tape, true);
    backbone::ForwardInputs<float> in;
    in.image_tokens = backbone::patchify<float>(fs.xt, patch).tokens;
    in.positions = sample.pos.coords();
    in.t = fs.t;
    in.route = mask ? &*mask : nullptr;
    ag::Var<float> null_leaf;
    const bool use_null = drop || sample.caption_tokens.empty();
    if (use_null) {
      null_leaf = tape.leaf(text_.null_condition());
      in.text_var = null_leaf;
      ++acc.dropped;
    } else {
      auto ctx = text_.encode_prompt(sample.caption);
      if (ctx.truncated && !warned_truncation_) {
        std::cerr << "warning: caption longer than " << cfg_.text.max_context << " tokens was truncated\n";
        warned_truncation_ = true;
      }
      in.text = ctx.valid_rows();
    }
    const auto n_text = use_null ? 1 : in.text.rows();
    const auto pred = model_.forward(tape, bound, in);
    const auto target = backbone::patchify<float>(fs.v_target, patch).tokens;
    const auto loss = ag::mse(pred, target);
    tape.backward(loss);

    for (std::size_t i = 0; i < bound.size(); ++i) {
      if (bound[i].grad().size() != 0) acc.grads[i] += weight * bound[i].grad();
    }
    if (use_null && null_leaf.grad().size() != 0) acc.grads.back() += weight * null_leaf.grad();
    acc.loss += static_cast<double>(loss.value()(0, 0)) / per_step;
    const auto kept = mask ? static_cast<double>(mask->kept.size()) : static_cast<double>(n_image);
    acc.routed_rows += (kept + static_cast<double>(n_text)) / per_step;
  }
  return acc;
}

std::vector<ag::Mat<float>> Trainer::gradients(std::int64_t step_index, double* loss,
                                               std::optional<double> tread_rate) const {
  auto acc = accumulate(step_index, tread_rate.value_or(cfg_.schedule.tread_rate));
  if (loss) *loss = acc.loss;
  return std::move(acc.grads);
}

StepMetrics Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  auto acc = accumulate(step_, cfg_.schedule.tread_rate);
  require(std::isfinite(acc.loss), ErrorKind::kTrainingDivergence,
          "non-finite loss at step " + std::to_string(step_ + 1));
  const auto info = opt_.step(trainable(), acc.grads);
  ++step_;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const int per_step = cfg_.schedule.batch * cfg_.schedule.grad_accum;
  const int tok = cfg_.data.train_size / cfg_.model.patch_size;
  StepMetrics m;
  m.step = step_;
  m.loss = acc.loss;
  m.lr = info.lr;
  m.grad_norm = info.grad_norm;
  m.seconds = secs;
  m.image_tokens_per_sec = secs > 0.0 ? static_cast<double>(per_step) * tok * tok / secs : 0.0;
  m.routed_rows_per_block = acc.routed_rows;
  m.dropped_captions = acc.dropped;
  return m;
}

std::filesystem::path run_training(Trainer& trainer, const TrainOptions& opts) {
  if (opts.steps) trainer.set_total_steps(*opts.steps);
  const auto total = trainer.config().schedule.steps;
  const auto every = trainer.config().schedule.checkpoint_every;
  std::filesystem::create_directories(opts.out_dir);
  std::ofstream metrics(opts.out_dir / "metrics.jsonl", std::ios::app);
  require(static_cast<bool>(metrics), ErrorKind::kIo, "cannot open metrics log in " + opts.out_dir.string());
  std::filesystem::path last;
  while (trainer.steps_done() < total) {
    const auto m = trainer.step();
    metrics << m.to_json().dump() << '\n';
    metrics.flush();
    if (opts.on_step) opts.on_step(m);
    if (every > 0 && m.step % every == 0) {
      last = opts.out_dir / checkpoint_name(m.step);
      trainer.save_checkpoint(last);
    }
  }
  const auto final_path = opts.out_dir / checkpoint_name(trainer.steps_done());
  if (last != final_path) trainer.save_checkpoint(final_path);
  return final_path;
}

ModelBundle load_bundle(const std::filesystem::path& checkpoint) {
  auto file = container::TensorFile::load(checkpoint);
  require(file.metadata().contains("config"), ErrorKind::kIntegrity, "checkpoint carries no run config");
  auto cfg = run_config_from_json(file.metadata()["config"]);
  ModelBundle b{cfg, backbone::XutModel<float>(cfg.model), textcond::ToyCausalEncoder(cfg.text), 0};
  for (auto& t : b.model.params()) assign_checked(t.value, file.get("model." + t.name), "model." + t.name);
  for (auto& t : b.text.params()) assign_checked(t.value, file.get("text." + t.name), "text." + t.name);
  b.step = file.metadata().value("step", std::int64_t{0});
  return b;
}

}  // namespace hdm::cli
