#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "autoprosam/core/tensor.hpp"
#include "autoprosam/data/volume.hpp"
#include "autoprosam/io/archive.hpp"
#include "autoprosam/model/params.hpp"

namespace aps::train {

struct OptimConfig {
  double base_lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  std::int64_t epochs = 200;
  std::int64_t warmup_epochs = 5;
  double final_lr_fraction = 0.01;
  std::int64_t batch_size = 1;
  std::int64_t steps_per_epoch = 1;
  data::Index3 patch_size{32, 32, 32};

  void validate() const;
  // Per-epoch decay factor; the last epoch starts at base_lr * final_lr_fraction.
  double gamma() const;
};

// Linear warmup from 0 over warmup_epochs * steps_per_epoch steps, then
// base_lr * gamma^(epoch - warmup_epochs), constant within an epoch.
double lr_at(std::int64_t epoch, std::int64_t step_in_epoch, const OptimConfig& cfg);

enum class FreezePolicy { Standard, AllTunable };

using GradMap = std::map<std::string, Tensor>;

GradMap collect_grads(const model::ModelParams& params);
// Zeroes gradients of frozen parameters (Standard policy).
void apply_freeze_policy(const model::ModelParams& params, GradMap& grads, FreezePolicy policy);
// Marks which leaves record gradients: frozen ones do not under Standard.
void configure_requires_grad(model::ModelParams& params, FreezePolicy policy);
bool is_trainable(const model::Parameter& p, FreezePolicy policy);

// Adam with decoupled weight decay. Moment buffers exist only for
// parameters the policy lets it update.
class AdamW {
 public:
  explicit AdamW(OptimConfig cfg) : cfg_(std::move(cfg)) {}

  void step(model::ModelParams& params, const GradMap& grads, double lr, FreezePolicy policy);
  std::int64_t step_count() const { return t_; }
  bool has_state(const std::string& name) const { return m_.contains(name); }
  std::size_t state_size() const { return m_.size(); }

  void save_to(io::Archive& archive) const;
  void load_from(const io::Archive& archive);

 private:
  OptimConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace aps::train
