#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "autoprosam/data/volume.hpp"
#include "autoprosam/model/config.hpp"
#include "autoprosam/model/encoder.hpp"
#include "autoprosam/model/params.hpp"

namespace aps::model {

struct UpsampleStage {
  std::int64_t factor = 1;  // isotropic
  bool trilinear = false;
  std::int64_t out_channels = 1;
};

// Stages that bring the token grid back to voxel resolution (factor k total).
std::vector<UpsampleStage> upsample_plan(std::int64_t patch_kernel, UpsampleMode mode, std::int64_t fusion_channels);

// Lightweight 3D mask decoder with multi-layer aggregation. Parameters live
// under "decoder." and are trained from scratch.
class MaskDecoder {
 public:
  struct Dims {
    std::int64_t embed_dim = 32;       // channels of the stage taps
    std::int64_t final_channels = 8;   // channels of the bottleneck map
    std::int64_t prompt_channels = 8;
    std::int64_t patch_kernel = 8;
    std::int64_t image_channels = 1;
  };

  MaskDecoder(const DecoderConfig& cfg, const Dims& dims, const ModelParams& params);

  static void init_params(const DecoderConfig& cfg, const Dims& dims, std::uint64_t seed, ModelParams& params);

  // Projects the final map (and, with MLAM, the four stage taps) to F
  // channels and sums them; with the APG branch, concatenates the prompt
  // embedding and fuses back to F channels with a 3x3x3 convolution.
  Var mlam_fuse(const FeaturePyramid& pyramid, const std::optional<Var>& prompt) const;
  // fused [B, F, D', H', W'] + image [B, 1, D, H, W] -> logits [B, K+1, D, H, W]
  Var decode(const Var& fused, const Var& image) const;

 private:
  DecoderConfig cfg_;
  Dims dims_;
  const ModelParams& params_;
};

// Per-voxel argmax over the K+1 channels of logits [1, K+1, D, H, W] or
// [K+1, D, H, W]; ties resolve to the lowest class index.
data::LabelMap predict_labels(const Tensor& logits, const data::Spacing& spacing = {1.0, 1.0, 1.0});

}  // namespace aps::model
