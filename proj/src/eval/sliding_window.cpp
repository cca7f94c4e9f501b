#include "autoprosam/eval/sliding_window.hpp"

#include <cmath>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/data/pipeline.hpp"
#include "autoprosam/model/model.hpp"

namespace aps::eval {

void SlidingWindowConfig::validate() const {
  for (auto p : patch_size) {
    if (p < 1) throw ConfigError("sliding_window.patch_size: extents must be >= 1");
  }
  if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0)) throw ConfigError("sliding_window.overlap: must be in [0, 1)");
  if (blending == Blending::Gaussian && !(gaussian_sigma_fraction > 0)) {
    throw ConfigError("sliding_window.gaussian_sigma_fraction: must be > 0");
  }
}

std::int64_t SlidingWindowConfig::stride(std::size_t axis) const {
  const double s = static_cast<double>(patch_size[axis]) * (1.0 - overlap_ratio);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(s + 1e-9)));
}

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, std::int64_t stride) {
  if (extent <= patch) return {0};
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + patch < extent; s += stride) starts.push_back(s);
  if (starts.empty() || starts.back() != extent - patch) starts.push_back(extent - patch);
  return starts;
}

Tensor blending_weights(const SlidingWindowConfig& cfg) {
  const auto& p = cfg.patch_size;
  Tensor w({p[0], p[1], p[2]}, 1.0);
  if (cfg.blending == Blending::Constant) return w;
  std::array<std::vector<double>, 3> axis;
  for (std::size_t a = 0; a < 3; ++a) {
    const double sigma = cfg.gaussian_sigma_fraction * static_cast<double>(p[a]);
    const double c = 0.5 * static_cast<double>(p[a] - 1);
    for (std::int64_t i = 0; i < p[a]; ++i) {
      const double x = (static_cast<double>(i) - c) / sigma;
      axis[a].push_back(std::max(std::exp(-0.5 * x * x), 1e-6));
    }
  }
  std::int64_t o = 0;
  for (std::int64_t d = 0; d < p[0]; ++d)
    for (std::int64_t h = 0; h < p[1]; ++h)
      for (std::int64_t x = 0; x < p[2]; ++x) {
        w[o++] = axis[0][static_cast<std::size_t>(d)] * axis[1][static_cast<std::size_t>(h)] *
                 axis[2][static_cast<std::size_t>(x)];
      }
  return w;
}

Tensor sliding_window_infer(const data::Volume& volume, const PatchPredictor& predictor,
                            const SlidingWindowConfig& cfg, Tensor* weight_total) {
  cfg.validate();
  const data::Index3 orig = volume.shape();
  const auto& patch = cfg.patch_size;
  data::Index3 padded{};
  for (std::size_t a = 0; a < 3; ++a) padded[a] = std::max(orig[a], patch[a]);
  const data::Volume src = padded == orig ? volume : data::extract_patch(volume, {0, 0, 0}, padded);

  std::array<std::vector<std::int64_t>, 3> starts;
  for (std::size_t a = 0; a < 3; ++a) starts[a] = window_starts(padded[a], patch[a], cfg.stride(a));
  const Tensor wpatch = blending_weights(cfg);
  const std::int64_t PV = wpatch.numel();
  const std::int64_t V = padded[0] * padded[1] * padded[2];

  Tensor acc, wsum({V});
  std::int64_t K = 0;
  // Windows run in a fixed order so the floating-point accumulation is reproducible.
  for (auto d0 : starts[0])
    for (auto h0 : starts[1])
      for (auto w0 : starts[2]) {
        const data::Volume crop = data::extract_patch(src, {d0, h0, w0}, patch);
        const Tensor logits = predictor(crop.data.reshaped({1, 1, patch[0], patch[1], patch[2]}));
        if (logits.rank() != 5 || logits.dim(0) != 1 || logits.dim(2) != patch[0] || logits.dim(3) != patch[1] ||
            logits.dim(4) != patch[2]) {
          throw ShapeError("sliding_window_infer: predictor returned " + shape_to_string(logits.shape()));
        }
        if (acc.empty()) {
          K = logits.dim(1);
          acc = Tensor({K, V});
        } else if (logits.dim(1) != K) {
          throw ShapeError("sliding_window_infer: predictor changed its channel count");
        }
        std::int64_t o = 0;
        for (std::int64_t d = 0; d < patch[0]; ++d)
          for (std::int64_t h = 0; h < patch[1]; ++h)
            for (std::int64_t w = 0; w < patch[2]; ++w, ++o) {
              const std::int64_t g = ((d0 + d) * padded[1] + (h0 + h)) * padded[2] + (w0 + w);
              const double wt = wpatch[o];
              wsum[g] += wt;
              for (std::int64_t k = 0; k < K; ++k) acc[k * V + g] += wt * logits[k * PV + o];
            }
      }

  Tensor out({1, K, orig[0], orig[1], orig[2]});
  const std::int64_t OV = orig[0] * orig[1] * orig[2];
  for (std::int64_t d = 0; d < orig[0]; ++d)
    for (std::int64_t h = 0; h < orig[1]; ++h)
      for (std::int64_t w = 0; w < orig[2]; ++w) {
        const std::int64_t g = (d * padded[1] + h) * padded[2] + w;
        const std::int64_t o = (d * orig[1] + h) * orig[2] + w;
        for (std::int64_t k = 0; k < K; ++k) out[k * OV + o] = acc[k * V + g] / wsum[g];
      }

  if (weight_total) {
    // Re-accumulate normalized weights; each voxel should total exactly 1.
    Tensor total({orig[0], orig[1], orig[2]});
    for (auto d0 : starts[0])
      for (auto h0 : starts[1])
        for (auto w0 : starts[2]) {
          std::int64_t o = 0;
          for (std::int64_t d = 0; d < patch[0]; ++d)
            for (std::int64_t h = 0; h < patch[1]; ++h)
              for (std::int64_t w = 0; w < patch[2]; ++w, ++o) {
                const std::int64_t dd = d0 + d, hh = h0 + h, ww = w0 + w;
                if (dd >= orig[0] || hh >= orig[1] || ww >= orig[2]) continue;
                const std::int64_t g = (dd * padded[1] + hh) * padded[2] + ww;
                total[(dd * orig[1] + hh) * orig[2] + ww] += wpatch[o] / wsum[g];
              }
        }
    *weight_total = std::move(total);
  }
  return out;
}

Tensor sliding_window_infer(const data::Volume& volume, const model::AutoProSam& model,
                            const SlidingWindowConfig& cfg) {
  if (cfg.patch_size != model.patch_size()) {
    throw ConfigError("sliding_window.patch_size must equal the model input size " +
                      shape_to_string({model.patch_size()[0], model.patch_size()[1], model.patch_size()[2]}));
  }
  return sliding_window_infer(volume, [&model](const Tensor& patch) { return model.predict_logits(patch); }, cfg);
}

}  // namespace aps::eval
