#include "autoprosam/train/optim.hpp"

#include <cmath>

#include "autoprosam/core/errors.hpp"

namespace aps::train {

void OptimConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("optim.base_lr: must be > 0");
  if (epochs < 1) throw ConfigError("optim.epochs: must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ConfigError("optim.warmup_epochs: must be in [0, epochs)");
  if (!(final_lr_fraction > 0) || final_lr_fraction > 1) throw ConfigError("optim.final_lr_fraction: must be in (0, 1]");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("optim.beta1/beta2: must be in [0, 1)");
  if (!(eps > 0)) throw ConfigError("optim.eps: must be > 0");
  if (weight_decay < 0) throw ConfigError("optim.weight_decay: must be >= 0");
  if (batch_size < 1) throw ConfigError("optim.batch_size: must be >= 1");
  if (steps_per_epoch < 1) throw ConfigError("optim.steps_per_epoch: must be >= 1");
  for (auto p : patch_size) {
    if (p < 1) throw ConfigError("optim.patch_size: extents must be >= 1");
  }
}

double OptimConfig::gamma() const {
  const std::int64_t decay_epochs = epochs - 1 - warmup_epochs;
  if (decay_epochs <= 0) return 1.0;
  return std::pow(final_lr_fraction, 1.0 / static_cast<double>(decay_epochs));
}

double lr_at(std::int64_t epoch, std::int64_t step_in_epoch, const OptimConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw ContractError("lr_at: epoch outside [0, epochs)");
  if (epoch < cfg.warmup_epochs) {
    const double step = static_cast<double>(epoch * cfg.steps_per_epoch + step_in_epoch);
    return cfg.base_lr * step / static_cast<double>(cfg.warmup_epochs * cfg.steps_per_epoch);
  }
  return cfg.base_lr * std::pow(cfg.gamma(), static_cast<double>(epoch - cfg.warmup_epochs));
}

bool is_trainable(const model::Parameter& p, FreezePolicy policy) {
  return policy == FreezePolicy::AllTunable || !p.frozen;
}

GradMap collect_grads(const model::ModelParams& params) {
  GradMap grads;
  for (const auto& p : params.all()) {
    const Tensor& g = p.var.grad();
    grads[p.name] = g.numel() == p.var.numel() ? g : Tensor(p.var.shape());
  }
  return grads;
}

void apply_freeze_policy(const model::ModelParams& params, GradMap& grads, FreezePolicy policy) {
  for (auto& [name, g] : grads) {
    if (!params.contains(name)) throw ContractError("apply_freeze_policy: gradient for unknown parameter '" + name + "'");
    if (!is_trainable(params.at(name), policy)) g.fill(0.0);
  }
}

void configure_requires_grad(model::ModelParams& params, FreezePolicy policy) {
  for (auto& p : params.all()) p.var.set_requires_grad(is_trainable(p, policy));
}

void AdamW::step(model::ModelParams& params, const GradMap& grads, double lr, FreezePolicy policy) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params.all()) {
    if (!is_trainable(p, policy)) continue;
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (g.numel() != p.var.numel()) throw ShapeError("AdamW: gradient shape mismatch for '" + p.name + "'");
    auto [mi, fresh] = m_.try_emplace(p.name, Tensor(p.var.shape()));
    if (fresh) v_.emplace(p.name, Tensor(p.var.shape()));
    Tensor& m = mi->second;
    Tensor& v = v_.at(p.name);
    Tensor& w = p.var.mutable_value();
    const double decay = p.weight_decay ? cfg_.weight_decay : 0.0;
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + decay * w[i]);
    }
  }
}

void AdamW::save_to(io::Archive& archive) const {
  archive.set_meta("optim_step", std::to_string(t_));
  for (const auto& [name, m] : m_) {
    archive.put("optim.m." + name, m);
    archive.put("optim.v." + name, v_.at(name));
  }
}

void AdamW::load_from(const io::Archive& archive) {
  m_.clear();
  v_.clear();
  const auto step = archive.meta("optim_step");
  t_ = step ? std::stoll(*step) : 0;
  for (const auto& e : archive.entries()) {
    if (e.name.starts_with("optim.m.")) {
      const std::string name = e.name.substr(8);
      if (!archive.contains("optim.v." + name)) throw DataError("checkpoint: missing 'optim.v." + name + "'");
      m_[name] = e.values;
      v_[name] = archive.get("optim.v." + name).values;
    }
  }
}

}  // namespace aps::train
