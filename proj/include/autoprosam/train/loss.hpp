#pragma once

#include <cstdint>
#include <span>

#include "autoprosam/core/autograd.hpp"

namespace aps::train {

struct LossConfig {
  double dice_smooth = 1e-5;
  bool include_background_in_dice = false;
  double dice_weight = 1.0;
  double ce_weight = 1.0;

  void validate() const;
};

struct LossTerms {
  double dice = 0.0;  // 1 - mean soft Dice over included classes
  double ce = 0.0;    // mean voxel-wise cross-entropy
  double total = 0.0;
};

// probs [B, K+1, D, H, W] (softmax outputs), labels B*D*H*W values in {0..K}
// in (b, d, h, w) order. Dice sums run over the whole batch per class.
Var seg_loss(const Var& probs, std::span<const std::int32_t> labels, const LossConfig& cfg,
             LossTerms* terms = nullptr);
LossTerms seg_loss_terms(const Tensor& probs, std::span<const std::int32_t> labels, const LossConfig& cfg);

}  // namespace aps::train
