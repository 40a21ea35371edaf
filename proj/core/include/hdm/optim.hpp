#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdm/autograd.hpp"

namespace hdm::optim {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; tensors named *.w only
  double grad_clip = 1.0;      // global L2 norm, <= 0 disables
  int warmup_steps = 100;
  bool mu_p = false;  // lr * base_dim / model_dim
  int base_dim = 1;

  void validate() const;
  bool operator==(const AdamWConfig&) const = default;
};

void to_json(nlohmann::json& j, const AdamWConfig& c);
void from_json(const nlohmann::json& j, AdamWConfig& c);

struct StepInfo {
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
};

class AdamW {
 public:
  AdamW(const AdamWConfig& cfg, std::vector<std::string> names, const std::vector<const ag::Mat<float>*>& shapes,
        int model_dim);

  // Learning rate used for the update that produces step count+1.
  double lr_at(std::int64_t step) const;

  StepInfo step(const std::vector<ag::Mat<float>*>& params, std::vector<ag::Mat<float>>& grads);

  std::int64_t count() const { return count_; }
  void set_count(std::int64_t c) { count_ = c; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<ag::Mat<float>>& first_moments() { return m_; }
  std::vector<ag::Mat<float>>& second_moments() { return v_; }
  const std::vector<ag::Mat<float>>& first_moments() const { return m_; }
  const std::vector<ag::Mat<float>>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  int model_dim_;
  std::vector<std::string> names_;
  std::vector<bool> decay_;
  std::vector<ag::Mat<float>> m_;
  std::vector<ag::Mat<float>> v_;
  std::int64_t count_ = 0;
};

double global_norm(const std::vector<ag::Mat<float>>& grads);

}  // namespace hdm::optim
