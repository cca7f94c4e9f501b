#include "autoprosam/model/config.hpp"

#include <cmath>
#include <string>

#include "autoprosam/core/errors.hpp"

namespace aps::model {

std::int64_t EncoderConfig::adapter_dim() const {
  return static_cast<std::int64_t>(std::llround(adapter_ratio * static_cast<double>(embed_dim)));
}

std::array<std::int64_t, 4> EncoderConfig::taps() const {
  if (!stage_taps.empty()) return {stage_taps[0], stage_taps[1], stage_taps[2], stage_taps[3]};
  std::array<std::int64_t, 4> t{};
  for (int i = 0; i < 4; ++i) {
    t[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(std::llround(static_cast<double>(block_count) * (i + 1) / 4.0));
  }
  if (block_count > 0) {
    for (auto& v : t) v = std::max<std::int64_t>(v, 1);
  }
  return t;
}

Index3 EncoderConfig::input_size() const {
  return {token_grid[0] * patch_kernel, token_grid[1] * patch_kernel, token_grid[2] * patch_kernel};
}

void EncoderConfig::validate() const {
  if (embed_dim < 1 || head_count < 1 || embed_dim % head_count != 0) {
    throw ConfigError("encoder: embed_dim must be a positive multiple of head_count");
  }
  if (block_count < 0) throw ConfigError("encoder: block_count must be >= 0");
  if (patch_kernel < 1) throw ConfigError("encoder: patch_kernel must be >= 1");
  if (window_size < 1) throw ConfigError("encoder: window_size must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("encoder: mlp_ratio must be >= 1");
  if (in_channels < 1) throw ConfigError("encoder: in_channels must be >= 1");
  if (bottleneck_channels < 1) throw ConfigError("encoder: bottleneck_channels must be >= 1");
  if (adapter_dim() < 1) throw ConfigError("encoder: adapter_ratio * embed_dim must round to >= 1");
  for (auto g : token_grid) {
    if (g < 1) throw ConfigError("encoder: token_grid extents must be >= 1");
  }
  if (!stage_taps.empty() && stage_taps.size() != 4) throw ConfigError("encoder: stage_taps needs exactly 4 entries");
  const auto t = taps();
  for (std::size_t i = 0; i < 4; ++i) {
    if (t[i] < 0 || t[i] > block_count) throw ConfigError("encoder: stage tap outside [0, block_count]");
    if (i > 0 && t[i] < t[i - 1]) throw ConfigError("encoder: stage taps must be non-decreasing");
  }
  if (t[3] != block_count) throw ConfigError("encoder: last stage tap must equal block_count");
}

void ApgConfig::validate() const {
  if (level_count < 1) throw ConfigError("apg: level_count must be >= 1");
  if (base_channels < 1) throw ConfigError("apg: base_channels must be >= 1");
  if (output_channels < 0) throw ConfigError("apg: output_channels must be >= 0");
}

void DecoderConfig::validate() const {
  if (fusion_channels < 1) throw ConfigError("decoder: fusion_channels must be >= 1");
  if (num_classes < 1) throw ConfigError("decoder: num_classes must be >= 1");
}

ModelConfig& ModelConfig::finalize() {
  encoder.bottleneck_channels = decoder.fusion_channels;
  encoder.validate();
  apg.validate();
  decoder.validate();
  if (decoder.apg_enabled) {
    const std::int64_t mult = std::int64_t{1} << (apg.level_count - 1);
    for (auto g : encoder.token_grid) {
      if (g % mult != 0) {
        throw ConfigError("apg: token grid extents must be multiples of " + std::to_string(mult) + " for " +
                          std::to_string(apg.level_count) + " levels");
      }
    }
  }
  return *this;
}

}  // namespace aps::model
