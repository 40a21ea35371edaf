#include "hdm/optim.hpp"

#include <cmath>

#include "hdm/error.hpp"

namespace hdm::optim {

void AdamWConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::kInvalidConfig, "learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::kInvalidConfig,
          "betas must lie in [0, 1)");
  require(eps > 0.0 && weight_decay >= 0.0, ErrorKind::kInvalidConfig, "eps must be positive, weight decay >= 0");
  require(warmup_steps >= 0 && base_dim >= 1, ErrorKind::kInvalidConfig, "warmup >= 0 and base_dim >= 1 required");
}

void to_json(nlohmann::json& j, const AdamWConfig& c) {
  j = {{"kind", "adamw"},         {"lr", c.lr},
       {"beta1", c.beta1},        {"beta2", c.beta2},
       {"eps", c.eps},            {"weight_decay", c.weight_decay},
       {"grad_clip", c.grad_clip}, {"warmup_steps", c.warmup_steps},
       {"mu_p", c.mu_p},          {"base_dim", c.base_dim}};
}

void from_json(const nlohmann::json& j, AdamWConfig& c) {
  const AdamWConfig d;
  require(j.value("kind", std::string("adamw")) == "adamw", ErrorKind::kInvalidConfig,
          "only the adamw optimizer is available");
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  if (j.contains("betas")) {
    const auto b = j.at("betas").get<std::vector<double>>();
    require(b.size() == 2, ErrorKind::kInvalidConfig, "betas needs two entries");
    c.beta1 = b[0];
    c.beta2 = b[1];
  }
  c.eps = j.value("eps", d.eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.mu_p = j.value("mu_p", d.mu_p);
  c.base_dim = j.value("base_dim", d.base_dim);
}

double global_norm(const std::vector<ag::Mat<float>>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

AdamW::AdamW(const AdamWConfig& cfg, std::vector<std::string> names, const std::vector<const ag::Mat<float>*>& shapes,
             int model_dim)
    : cfg_(cfg), model_dim_(model_dim), names_(std::move(names)) {
  cfg_.validate();
  require(names_.size() == shapes.size(), ErrorKind::kInvariant, "optimizer names and tensors differ in count");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    decay_.push_back(names_[i].ends_with(".w"));
    m_.push_back(ag::Mat<float>::Zero(shapes[i]->rows(), shapes[i]->cols()));
    v_.push_back(ag::Mat<float>::Zero(shapes[i]->rows(), shapes[i]->cols()));
  }
}

double AdamW::lr_at(std::int64_t step) const {
  double lr = cfg_.lr;
  if (cfg_.mu_p) lr *= static_cast<double>(cfg_.base_dim) / model_dim_;
  if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps) lr *= static_cast<double>(step + 1) / cfg_.warmup_steps;
  return lr;
}

StepInfo AdamW::step(const std::vector<ag::Mat<float>*>& params, std::vector<ag::Mat<float>>& grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(), ErrorKind::kInvariant,
          "optimizer state does not match the parameters");
  StepInfo info;
  info.grad_norm = global_norm(grads);
  require(std::isfinite(info.grad_norm), ErrorKind::kTrainingDivergence, "gradient norm is not finite");
  if (cfg_.grad_clip > 0.0 && info.grad_norm > cfg_.grad_clip) {
    const auto s = static_cast<float>(cfg_.grad_clip / info.grad_norm);
    for (auto& g : grads) g *= s;
  }
  info.lr = lr_at(count_);
  ++count_;
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto c1 = static_cast<float>(1.0 - std::pow(cfg_.beta1, static_cast<double>(count_)));
  const auto c2 = static_cast<float>(1.0 - std::pow(cfg_.beta2, static_cast<double>(count_)));
  const auto lr = static_cast<float>(info.lr);
  const auto eps = static_cast<float>(cfg_.eps);
  const auto wd = static_cast<float>(cfg_.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = grads[i];
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
    if (decay_[i] && wd > 0.0f) p *= 1.0f - lr * wd;
    p.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
  return info;
}

}  // namespace hdm::optim
