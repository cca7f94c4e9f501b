#pragma once

#include <functional>
#include <vector>

#include "autoprosam/core/tensor.hpp"
#include "autoprosam/data/volume.hpp"

namespace aps::model {
class AutoProSam;
}

namespace aps::eval {

enum class Blending { Constant, Gaussian };

struct SlidingWindowConfig {
  data::Index3 patch_size{32, 32, 32};
  double overlap_ratio = 0.75;
  Blending blending = Blending::Constant;
  double gaussian_sigma_fraction = 0.125;

  void validate() const;
  std::int64_t stride(std::size_t axis) const;
};

// Starts at multiples of the stride while the window fits, plus a final
// window clamped to the edge. An extent <= patch gives {0}.
std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, std::int64_t stride);

// Per-voxel window weight [pd, ph, pw]; constant 1 or a separable gaussian
// peaking at 1 in the patch centre.
Tensor blending_weights(const SlidingWindowConfig& cfg);

// patch [1, C_in, pd, ph, pw] -> logits [1, K, pd, ph, pw]
using PatchPredictor = std::function<Tensor(const Tensor& patch)>;

// Stitches per-window logits into [1, K, D, H, W]. Volumes smaller than the
// patch are edge-padded, inferred and cropped. When weight_total is given it
// receives the per-voxel sum of normalized window weights.
Tensor sliding_window_infer(const data::Volume& volume, const PatchPredictor& predictor,
                            const SlidingWindowConfig& cfg, Tensor* weight_total = nullptr);
Tensor sliding_window_infer(const data::Volume& volume, const model::AutoProSam& model,
                            const SlidingWindowConfig& cfg);

}  // namespace aps::eval
