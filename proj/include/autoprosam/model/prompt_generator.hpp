#pragma once

#include <cstdint>

#include "autoprosam/model/config.hpp"
#include "autoprosam/model/params.hpp"

namespace aps::model {

// U-shaped, fully convolutional generator that turns the encoder's final map
// into a prompt embedding on the same grid. Every parameter lives under "apg."
// and is trained from scratch.
class AutoPromptGenerator {
 public:
  AutoPromptGenerator(const ApgConfig& cfg, std::int64_t in_channels, std::int64_t out_channels,
                      const ModelParams& params);

  static void init_params(const ApgConfig& cfg, std::int64_t in_channels, std::int64_t out_channels,
                          std::uint64_t seed, ModelParams& params);

  // [B, in_channels, D', H', W'] -> [B, out_channels, D', H', W']
  Var forward(const Var& final_map) const;

  std::int64_t level_channels(std::int64_t level) const { return cfg_.base_channels << level; }

 private:
  ApgConfig cfg_;
  std::int64_t in_channels_;
  std::int64_t out_channels_;
  const ModelParams& params_;
};

}  // namespace aps::model
