#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "autoprosam/core/ops.hpp"

namespace aps::model {

using Index3 = ops::Index3;

struct EncoderConfig {
  std::int64_t embed_dim = 32;        // C
  std::int64_t block_count = 4;       // L
  std::int64_t head_count = 4;
  std::int64_t patch_kernel = 8;      // k; stride of the patch embedding
  std::int64_t window_size = 4;       // tokens per axis
  double adapter_ratio = 0.25;        // N' = round(ratio * C)
  std::int64_t mlp_ratio = 4;
  std::int64_t in_channels = 1;
  Index3 token_grid{4, 4, 4};         // (D', H', W')
  // Number of blocks completed at each of the four taps; 0 taps the embedded
  // tokens. Empty selects {L/4, L/2, 3L/4, L} rounded.
  std::vector<std::int64_t> stage_taps;
  std::int64_t bottleneck_channels = 8;
  ops::Activation adapter_activation = ops::Activation::Gelu;

  std::int64_t adapter_dim() const;
  std::int64_t mlp_dim() const { return mlp_ratio * embed_dim; }
  std::array<std::int64_t, 4> taps() const;
  Index3 input_size() const;
  // Center tap of the depth kernel that reproduces slice-wise 2D embedding.
  std::int64_t depth_delta_index() const { return patch_kernel / 2; }
  void validate() const;
};

struct ApgConfig {
  std::int64_t level_count = 3;
  std::int64_t base_channels = 2;
  std::int64_t output_channels = 0;  // 0 = decoder fusion channels

  void validate() const;
};

enum class UpsampleMode { Auto, Nearest, Trilinear };

struct DecoderConfig {
  std::int64_t fusion_channels = 8;  // F
  std::int64_t num_classes = 1;      // K foreground classes
  UpsampleMode upsample = UpsampleMode::Auto;
  bool mlam_enabled = true;
  bool apg_enabled = true;

  void validate() const;
};

// Bundles the three component configs and keeps their shared sizes in sync.
struct ModelConfig {
  EncoderConfig encoder;
  ApgConfig apg;
  DecoderConfig decoder;

  // Copies derived sizes (bottleneck width, prompt width) and validates.
  ModelConfig& finalize();
  std::int64_t prompt_channels() const {
    return apg.output_channels > 0 ? apg.output_channels : decoder.fusion_channels;
  }
};

}  // namespace aps::model
