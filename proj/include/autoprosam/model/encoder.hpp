#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "autoprosam/core/ops.hpp"
#include "autoprosam/io/archive.hpp"
#include "autoprosam/model/config.hpp"
#include "autoprosam/model/params.hpp"

namespace aps::model {

// Parameter names shared by the 2D archive and the 3D model.
namespace names {
std::string block(std::int64_t i, const std::string& leaf);
inline const std::string kPatchWeight2d = "encoder.patch_embed.weight";
inline const std::string kPatchBias2d = "encoder.patch_embed.bias";
inline const std::string kPos2d = "encoder.pos_embed";
inline const std::string kPlanarWeight = "encoder.patch_embed.planar.weight";
inline const std::string kPlanarBias = "encoder.patch_embed.planar.bias";
inline const std::string kDepthKernel = "encoder.patch_embed.depth.weight";
inline const std::string kPosPlanar = "encoder.pos_embed.planar";
inline const std::string kPosDepth = "encoder.pos_embed.depth";
}  // namespace names

// Four stage taps on the token grid plus the bottleneck output.
struct FeaturePyramid {
  std::array<Var, 4> stage_maps;  // [B, C, D', H', W']
  Var final_map;                  // [B, bottleneck_channels, D', H', W']
  Var last_tokens;                // [B, N, C] after the final block + adapter
};

// Entries a 2D checkpoint must provide for `cfg`, with their shapes.
std::vector<std::pair<std::string, Shape>> expected_2d_entries(const EncoderConfig& cfg);

// Builds the encoder parameter set: inherited 2D weights (frozen, except
// normalization layers), the factorized depth kernel (delta), the zero depth
// positional table, zero-initialized adapter up-projections and a randomly
// initialized 3D bottleneck.
ModelParams import_2d_checkpoint(const io::Archive& archive, const EncoderConfig& cfg, std::uint64_t init_seed = 0);
void import_2d_checkpoint_into(const io::Archive& archive, const EncoderConfig& cfg, std::uint64_t init_seed,
                               ModelParams& params);

// Stateless view over encoder parameters stored in a ModelParams.
class ImageEncoder3D {
 public:
  ImageEncoder3D(const EncoderConfig& cfg, const ModelParams& params);

  // volume [B, in_ch, D, H, W] -> tokens [B, D'*H'*W', C] ((d, h, w) row-major).
  Var embed_patches(const Var& volume, Index3* grid_out = nullptr) const;
  // planar[:, h, w] + depth[:, d]
  Tensor positional_encoding(std::int64_t d, std::int64_t h, std::int64_t w) const;
  Var add_positional(const Var& tokens) const;
  Var attention_block(const Var& tokens, std::int64_t block_index, const Index3& grid) const;
  Var depth_adapter(const Var& tokens, std::int64_t block_index, const Index3& grid) const;
  // tokens [B, N, C] -> [B, bottleneck_channels, D', H', W']
  Var bottleneck(const Var& tokens, const Index3& grid) const;
  FeaturePyramid forward(const Var& volume) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  const ModelParams& params_;
};

}  // namespace aps::model
