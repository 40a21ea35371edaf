#include "hdm/run_config.hpp"

#include <fstream>

#include <toml.hpp>

#include "hdm/error.hpp"

namespace hdm::cli {

void RunConfig::validate() const {
  model.validate();
  text.validate();
  optimizer.validate();
  require(text.context_dim == model.context_dim, ErrorKind::kInvalidConfig,
          "text.context_dim must equal model.context_dim");
  require(data.train_size >= model.patch_size && data.train_size % model.patch_size == 0, ErrorKind::kInvalidConfig,
          "data.train_size must be a multiple of the patch size");
  require(schedule.steps >= 0 && schedule.batch >= 1 && schedule.grad_accum >= 1, ErrorKind::kInvalidConfig,
          "schedule needs steps >= 0, batch >= 1, grad_accum >= 1");
  require(schedule.tread_rate >= 0.0 && schedule.tread_rate <= 1.0, ErrorKind::kInvalidRate,
          "tread_rate must lie in [0, 1]");
  require(schedule.caption_dropout >= 0.0 && schedule.caption_dropout <= 1.0, ErrorKind::kInvalidConfig,
          "caption_dropout must lie in [0, 1]");
  require(schedule.checkpoint_every >= 0, ErrorKind::kInvalidConfig, "checkpoint_every must be >= 0");
  require(sampling.steps >= 1, ErrorKind::kInvalidConfig, "sampling.steps must be >= 1");
  require(sampling.height % model.patch_size == 0 && sampling.width % model.patch_size == 0 && sampling.height > 0 &&
              sampling.width > 0,
          ErrorKind::kInvalidConfig, "sampling size must be a multiple of the patch size");
  routing::GuidanceSpec{sampling.guidance, sampling.cond_rate, sampling.uncond_rate}.validate();
}

bool RunConfig::operator==(const RunConfig& o) const { return to_json(*this) == to_json(o); }

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json model = c.model;
  nlohmann::json optimizer = c.optimizer;
  return {
      {"model", model},
      {"text",
       {{"context_dim", c.text.context_dim},
        {"max_context", c.text.max_context},
        {"n_layers", c.text.n_layers},
        {"n_heads", c.text.n_heads},
        {"mlp_dim", c.text.mlp_dim},
        {"seed", c.text.seed}}},
      {"data",
       {{"source", c.data.source},
        {"train_size", c.data.train_size},
        {"seed", c.data.seed},
        {"shuffle", c.data.shuffle},
        {"rect_fraction", c.data.rect_fraction}}},
      {"optimizer", optimizer},
      {"schedule",
       {{"steps", c.schedule.steps},
        {"batch", c.schedule.batch},
        {"grad_accum", c.schedule.grad_accum},
        {"tread_rate", c.schedule.tread_rate},
        {"caption_dropout", c.schedule.caption_dropout},
        {"time_sampling", flow::to_string(c.schedule.time_sampling)},
        {"checkpoint_every", c.schedule.checkpoint_every}}},
      {"sampling",
       {{"steps", c.sampling.steps},
        {"guidance", c.sampling.guidance},
        {"cond_rate", c.sampling.cond_rate},
        {"uncond_rate", c.sampling.uncond_rate},
        {"height", c.sampling.height},
        {"width", c.sampling.width},
        {"seed", c.sampling.seed}}},
      {"seed", c.seed},
      {"init_from", c.init_from},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("model")) c.model = j.at("model").get<backbone::XutConfig>();
    const auto sec = [&](const char* name) { return j.value(name, nlohmann::json::object()); };
    const auto text = sec("text");
    c.text.context_dim = text.value("context_dim", c.model.context_dim);
    c.text.max_context = text.value("max_context", c.text.max_context);
    c.text.n_layers = text.value("n_layers", c.text.n_layers);
    c.text.n_heads = text.value("n_heads", c.text.n_heads);
    c.text.mlp_dim = text.value("mlp_dim", c.text.mlp_dim);
    c.text.seed = text.value("seed", c.text.seed);
    const auto data = sec("data");
    c.data.source = data.value("source", c.data.source);
    c.data.train_size = data.value("train_size", c.data.train_size);
    c.data.seed = data.value("seed", c.data.seed);
    c.data.shuffle = data.value("shuffle", c.data.shuffle);
    c.data.rect_fraction = data.value("rect_fraction", c.data.rect_fraction);
    if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<optim::AdamWConfig>();
    const auto s = sec("schedule");
    c.schedule.steps = s.value("steps", c.schedule.steps);
    c.schedule.batch = s.value("batch", c.schedule.batch);
    c.schedule.grad_accum = s.value("grad_accum", c.schedule.grad_accum);
    c.schedule.tread_rate = s.value("tread_rate", c.schedule.tread_rate);
    c.schedule.caption_dropout = s.value("caption_dropout", c.schedule.caption_dropout);
    c.schedule.time_sampling = flow::parse_time_sampling(s.value("time_sampling", std::string("uniform")));
    c.schedule.checkpoint_every = s.value("checkpoint_every", c.schedule.checkpoint_every);
    const auto smp = sec("sampling");
    c.sampling.steps = smp.value("steps", c.sampling.steps);
    c.sampling.guidance = smp.value("guidance", c.sampling.guidance);
    c.sampling.cond_rate = smp.value("cond_rate", c.sampling.cond_rate);
    c.sampling.uncond_rate = smp.value("uncond_rate", c.sampling.uncond_rate);
    c.sampling.height = smp.value("height", c.sampling.height);
    c.sampling.width = smp.value("width", c.sampling.width);
    c.sampling.seed = smp.value("seed", c.sampling.seed);
    c.seed = j.value("seed", c.seed);
    c.init_from = j.value("init_from", c.init_from);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidConfig, std::string("malformed run config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

nlohmann::json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    auto out = nlohmann::json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    auto out = nlohmann::json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  fail(ErrorKind::kInvalidConfig, "unsupported TOML value type (dates are not accepted)");
}

}  // namespace

nlohmann::json toml_file_to_json(const std::filesystem::path& path) {
  try {
    const auto table = toml::parse_file(path.string());
    return toml_to_json(table);
  } catch (const toml::parse_error& e) {
    fail(ErrorKind::kInvalidConfig, path.string() + ": " + std::string(e.description()));
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::kIo, "config not found: " + path.string());
  if (path.extension() == ".toml") return run_config_from_json(toml_file_to_json(path));
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidConfig, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace hdm::cli
