#include "autoprosam/train/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "autoprosam/core/errors.hpp"

namespace aps::train {

namespace {

constexpr double kNormTolerance = 1e-4;
constexpr double kProbFloor = 1e-12;

struct Dims {
  std::int64_t B, K1, S;
};

Dims check_inputs(const Tensor& p, std::span<const std::int32_t> labels) {
  const auto& s = p.shape();
  if (s.size() < 3) throw ShapeError("seg_loss: probs must be [B, K+1, spatial...]");
  const Dims d{s[0], s[1], p.numel() / (s[0] * s[1])};
  if (static_cast<std::int64_t>(labels.size()) != d.B * d.S) {
    throw ShapeError("seg_loss: label count " + std::to_string(labels.size()) + " does not match probs " +
                     shape_to_string(s));
  }
  for (auto l : labels) {
    if (l < 0 || l >= d.K1) throw ContractError("seg_loss: label value " + std::to_string(l) + " outside [0, K]");
  }
  for (std::int64_t b = 0; b < d.B; ++b) {
    for (std::int64_t i = 0; i < d.S; ++i) {
      double total = 0.0;
      for (std::int64_t k = 0; k < d.K1; ++k) total += p[(b * d.K1 + k) * d.S + i];
      if (!(std::abs(total - 1.0) <= kNormTolerance)) {
        throw ContractError("seg_loss: probabilities at voxel " + std::to_string(i) + " of sample " +
                            std::to_string(b) + " sum to " + std::to_string(total));
      }
    }
  }
  return d;
}

struct ClassSums {
  double inter = 0, pred = 0, gt = 0;
};

std::vector<ClassSums> class_sums(const Tensor& p, std::span<const std::int32_t> labels, const Dims& d) {
  std::vector<ClassSums> sums(static_cast<std::size_t>(d.K1));
  for (std::int64_t b = 0; b < d.B; ++b) {
    for (std::int64_t k = 0; k < d.K1; ++k) {
      auto& cs = sums[static_cast<std::size_t>(k)];
      const double* pk = p.data() + (b * d.K1 + k) * d.S;
      const std::int32_t* lb = labels.data() + b * d.S;
      for (std::int64_t i = 0; i < d.S; ++i) {
        const double g = lb[i] == k ? 1.0 : 0.0;
        cs.inter += pk[i] * g;
        cs.pred += pk[i];
        cs.gt += g;
      }
    }
  }
  return sums;
}

LossTerms compute(const Tensor& p, std::span<const std::int32_t> labels, const LossConfig& cfg, const Dims& d,
                  const std::vector<ClassSums>& sums) {
  const std::int64_t first = cfg.include_background_in_dice ? 0 : 1;
  const double eps = cfg.dice_smooth;
  LossTerms t;
  double dice_sum = 0.0;
  for (std::int64_t k = first; k < d.K1; ++k) {
    const auto& cs = sums[static_cast<std::size_t>(k)];
    dice_sum += (2.0 * cs.inter + eps) / (cs.pred + cs.gt + eps);
  }
  const std::int64_t included = d.K1 - first;
  t.dice = included > 0 ? 1.0 - dice_sum / static_cast<double>(included) : 0.0;
  double ce = 0.0;
  for (std::int64_t b = 0; b < d.B; ++b) {
    for (std::int64_t i = 0; i < d.S; ++i) {
      const auto y = labels[static_cast<std::size_t>(b * d.S + i)];
      ce -= std::log(std::max(p[(b * d.K1 + y) * d.S + i], kProbFloor));
    }
  }
  t.ce = ce / static_cast<double>(d.B * d.S);
  t.total = cfg.dice_weight * t.dice + cfg.ce_weight * t.ce;
  return t;
}

}  // namespace

void LossConfig::validate() const {
  if (!(dice_smooth > 0)) throw ConfigError("loss.dice_smooth: must be > 0");
  if (dice_weight < 0 || ce_weight < 0) throw ConfigError("loss weights: must be >= 0");
}

LossTerms seg_loss_terms(const Tensor& probs, std::span<const std::int32_t> labels, const LossConfig& cfg) {
  cfg.validate();
  const Dims d = check_inputs(probs, labels);
  return compute(probs, labels, cfg, d, class_sums(probs, labels, d));
}

Var seg_loss(const Var& probs, std::span<const std::int32_t> labels, const LossConfig& cfg, LossTerms* terms) {
  cfg.validate();
  const Tensor& p = probs.value();
  const Dims d = check_inputs(p, labels);
  auto sums = class_sums(p, labels, d);
  const LossTerms t = compute(p, labels, cfg, d, sums);
  if (terms) *terms = t;

  auto np = probs.node();
  std::vector<std::int32_t> y(labels.begin(), labels.end());
  return detail::make_result(Tensor({1}, t.total), {probs}, [np, y = std::move(y), sums = std::move(sums), cfg, d](const Tensor& g) {
    const Tensor& pv = np->value;
    Tensor gp(pv.shape());
    const double go = g[0];
    const std::int64_t first = cfg.include_background_in_dice ? 0 : 1;
    const std::int64_t included = d.K1 - first;
    const double eps = cfg.dice_smooth;
    const double ce_scale = cfg.ce_weight / static_cast<double>(d.B * d.S);
    for (std::int64_t k = 0; k < d.K1; ++k) {
      double a = 0.0, c = 0.0;  // d(dice term)/dp = a * g_v + c
      if (k >= first && included > 0) {
        const auto& cs = sums[static_cast<std::size_t>(k)];
        const double den = cs.pred + cs.gt + eps;
        const double scale = -cfg.dice_weight / static_cast<double>(included);
        a = scale * 2.0 / den;
        c = -scale * (2.0 * cs.inter + eps) / (den * den);
      }
      for (std::int64_t b = 0; b < d.B; ++b) {
        double* gk = gp.data() + (b * d.K1 + k) * d.S;
        const double* pk = pv.data() + (b * d.K1 + k) * d.S;
        const std::int32_t* lb = y.data() + b * d.S;
        for (std::int64_t i = 0; i < d.S; ++i) {
          const bool hit = lb[i] == k;
          double v = (hit ? a : 0.0) + c;
          if (hit && pk[i] > kProbFloor) v -= ce_scale / pk[i];
          gk[i] = go * v;
        }
      }
    }
    np->accumulate_grad(gp);
  });
}

}  // namespace aps::train
