#include "hdm/inspect.hpp"

#include <sstream>

#include "hdm/backbone.hpp"
#include "hdm/error.hpp"
#include "hdm/routing.hpp"
#include "hdm/run_config.hpp"
#include "hdm/trainer.hpp"

namespace hdm::cli {

nlohmann::json table_self_check(bool* all_ok) {
  struct Row {
    const char* name;
    backbone::XutConfig cfg;
    std::int64_t blocks, attn;
  };
  const Row rows[] = {{"xut-small", backbone::XutConfig::xut_small(), 16, 20},
                      {"xut-base", backbone::XutConfig::xut_base(), 20, 24},
                      {"xut-large", backbone::XutConfig::xut_large(), 20, 24}};
  auto out = nlohmann::json::array();
  bool ok = true;
  for (const auto& r : rows) {
    const auto d = backbone::derived_counts(r.cfg);
    const bool row_ok = d.total_blocks == r.blocks && d.total_attention_layers == r.attn;
    ok = ok && row_ok;
    out.push_back({{"config", r.name},
                   {"blocks", d.total_blocks},
                   {"attn", d.total_attention_layers},
                   {"expected_blocks", r.blocks},
                   {"expected_attn", r.attn},
                   {"ok", row_ok}});
  }
  if (all_ok) *all_ok = ok;
  return out;
}

InspectReport inspect_config(const backbone::XutConfig& cfg, int image_size, const std::string& label) {
  cfg.validate();
  const auto d = backbone::derived_counts(cfg, image_size);
  const auto [first, last] = routing::routed_region_bounds(cfg);
  const backbone::XutModel<float> layout(cfg, false);
  const auto modules = layout.parameter_count_by_module();
  std::int64_t total = 0;
  for (const auto& [_, n] : modules) total += n;

  InspectReport r;
  r.json["config"] = label;
  r.json["model"] = cfg;
  r.json["derived"] = {{"blocks", d.total_blocks},
                       {"attn", d.total_attention_layers},
                       {"seq_len_latent_256", d.seq_len_latent_256},
                       {"seq_len_pixel", d.seq_len_pixel},
                       {"pixel_image_size", image_size}};
  r.json["routed_blocks"] = {first, last};
  r.json["parameters"] = {{"total", total}, {"by_module", modules}};
  r.json["self_check"] = table_self_check(&r.self_check_ok);
  r.json["self_check_ok"] = r.self_check_ok;

  std::ostringstream s;
  s << "config: " << label << "\n";
  s << "blocks=" << d.total_blocks << " attn=" << d.total_attention_layers << "\n";
  s << "seq_len latent@256=" << d.seq_len_latent_256 << " pixel@" << image_size << "=" << d.seq_len_pixel << "\n";
  s << "routed blocks [" << first << ", " << last << ")\n";
  s << "parameters total=" << total << "\n";
  for (const auto& [name, n] : modules) s << "  " << name << " " << n << "\n";
  s << "table self-check:\n";
  for (const auto& row : r.json["self_check"]) {
    s << "  " << row["config"].get<std::string>() << " blocks=" << row["blocks"] << " attn=" << row["attn"]
      << " expected " << row["expected_blocks"] << "/" << row["expected_attn"] << " "
      << (row["ok"].get<bool>() ? "ok" : "MISMATCH") << "\n";
  }
  r.text = s.str();
  return r;
}

InspectReport inspect(const std::string& target) {
  if (target == "xut-small") return inspect_config(backbone::XutConfig::xut_small(), 256, target);
  if (target == "xut-base") return inspect_config(backbone::XutConfig::xut_base(), 256, target);
  if (target == "xut-large") return inspect_config(backbone::XutConfig::xut_large(), 256, target);
  if (target == "toy") return inspect_config(backbone::XutConfig::toy(), 32, target);
  if (target == "micro") return inspect_config(backbone::XutConfig::micro(), 8, target);

  const std::filesystem::path path(target);
  require(std::filesystem::exists(path), ErrorKind::kUsage, "no such file or built-in config: " + target);
  if (path.extension() == ".hdm") {
    const auto bundle = load_bundle(path);
    auto r = inspect_config(bundle.model.config(), bundle.config.data.train_size, "checkpoint");
    r.json["checkpoint_step"] = bundle.step;
    r.json["text_encoder_parameters"] = bundle.text.parameter_count();
    r.text += "checkpoint step=" + std::to_string(bundle.step) + "\n";
    return r;
  }
  const auto cfg = load_run_config(path);
  return inspect_config(cfg.model, cfg.data.train_size, "run config");
}

}  // namespace hdm::cli
