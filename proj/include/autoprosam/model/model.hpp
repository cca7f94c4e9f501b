#pragma once

#include <cstdint>
#include <string>

#include "autoprosam/io/archive.hpp"
#include "autoprosam/model/config.hpp"
#include "autoprosam/model/encoder.hpp"
#include "autoprosam/model/mask_decoder.hpp"
#include "autoprosam/model/params.hpp"
#include "autoprosam/model/prompt_generator.hpp"

namespace aps::model {

// Encoder + optional prompt generator + mask decoder over one parameter store.
// Component views are rebuilt per call, so copies never alias stale references.
class AutoProSam {
 public:
  AutoProSam(ModelConfig cfg, ModelParams params);

  // Inherits the encoder from a 2D archive and initializes every 3D-only part.
  static AutoProSam from_2d_checkpoint(const io::Archive& archive, ModelConfig cfg, std::uint64_t seed);
  // Rebuilds the exact graph (config + ablation flags) stored by save_to().
  static AutoProSam from_checkpoint(const io::Archive& checkpoint);

  // Writes parameters with frozen flags, the config and the ablation flags.
  void save_to(io::Archive& archive) const;

  // image [B, 1, D, H, W] at input_size() -> logits [B, K+1, D, H, W]
  Var forward(const Var& image) const;
  FeaturePyramid encode(const Var& image) const;
  // Graph-free forward; accepts [D, H, W] or [1, 1, D, H, W] and returns [1, K+1, D, H, W].
  Tensor predict_logits(const Tensor& image) const;

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  Index3 patch_size() const { return cfg_.encoder.input_size(); }
  std::string config_hash() const;

 private:
  ModelConfig cfg_;
  ModelParams params_;
};

// Tunable/frozen element counts, partitioned by the frozen flag.
ParamCounts count_params(const AutoProSam& model);
// Counts for a configuration without needing real weights.
ParamCounts count_params(ModelConfig cfg);

}  // namespace aps::model
