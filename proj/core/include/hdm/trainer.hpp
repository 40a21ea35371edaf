#pragma once

// Training loop. Every random draw of step k, sample j derives from
// (seed, k, j), so a run resumed from a checkpoint retraces the
// uninterrupted run bit for bit.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "hdm/backbone.hpp"
#include "hdm/container.hpp"
#include "hdm/datapipe.hpp"
#include "hdm/optim.hpp"
#include "hdm/run_config.hpp"
#include "hdm/textcond.hpp"

namespace hdm::cli {

struct StepMetrics {
  std::int64_t step = 0;  // steps completed after this update
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
  double image_tokens_per_sec = 0.0;
  double routed_rows_per_block = 0.0;  // mean stream rows inside the routed region
  int dropped_captions = 0;

  nlohmann::json to_json(bool with_timing = true) const;
};

// Weights and config restored from a checkpoint, ready for sampling.
struct ModelBundle {
  RunConfig config;
  backbone::XutModel<float> model;
  textcond::ToyCausalEncoder text;
  std::int64_t step = 0;
};

ModelBundle load_bundle(const std::filesystem::path& checkpoint);

std::string checkpoint_name(std::int64_t step);

class Trainer {
 public:
  // Fresh weights from cfg.seed, or from cfg.init_from when set.
  explicit Trainer(const RunConfig& cfg);

  // Config, weights, optimizer state and step counter from a checkpoint.
  static Trainer resume(const std::filesystem::path& checkpoint);

  StepMetrics step();

  std::int64_t steps_done() const { return step_; }
  const RunConfig& config() const { return cfg_; }
  // Total steps the run stops at; the config value unless overridden.
  void set_total_steps(std::int64_t steps) { cfg_.schedule.steps = steps; }

  const backbone::XutModel<float>& model() const { return model_; }
  backbone::XutModel<float>& model() { return model_; }
  const textcond::ToyCausalEncoder& text_encoder() const { return text_; }
  const optim::AdamW& optimizer() const { return opt_; }

  container::TensorFile checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;

  // Gradient of the mean loss of the samples step k would draw, without
  // updating anything. Index-aligned with trainable_names().
  std::vector<ag::Mat<float>> gradients(std::int64_t step_index, double* loss = nullptr,
                                        std::optional<double> tread_rate = std::nullopt) const;
  std::vector<std::string> trainable_names() const;

 private:
  Trainer(const RunConfig& cfg, bool init);
  void load_state(const container::TensorFile& file, bool with_optimizer);
  std::vector<ag::Mat<float>*> trainable();

  struct Accumulated {
    std::vector<ag::Mat<float>> grads;
    double loss = 0.0;
    double routed_rows = 0.0;
    int dropped = 0;
  };
  Accumulated accumulate(std::int64_t step_index, double tread_rate) const;

  RunConfig cfg_;
  textcond::ToyCausalEncoder text_;
  backbone::XutModel<float> model_;
  datapipe::Pipeline pipeline_;
  optim::AdamW opt_;
  std::int64_t step_ = 0;
  mutable bool warned_truncation_ = false;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::int64_t> steps;  // overrides schedule.steps
  std::function<void(const StepMetrics&)> on_step;
};

// Steps until the configured total, appending to out_dir/metrics.jsonl and
// writing checkpoints. Returns the path of the final checkpoint.
std::filesystem::path run_training(Trainer& trainer, const TrainOptions& opts);

}  // namespace hdm::cli
