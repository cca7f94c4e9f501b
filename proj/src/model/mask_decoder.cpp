#include "autoprosam/model/mask_decoder.hpp"

#include <cmath>
#include <string>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/core/ops.hpp"

namespace aps::model {

namespace {

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

void add_conv(ModelParams& params, const std::string& prefix, std::int64_t out_c, std::int64_t in_c, std::int64_t k,
              std::uint64_t seed) {
  const std::int64_t fan_in = in_c * k * k * k;
  params.add(prefix + ".weight", init_uniform_fan_in({out_c, in_c, k, k, k}, fan_in, seed, prefix + ".weight"), false);
  params.add(prefix + ".bias", init_uniform_fan_in({out_c}, fan_in, seed, prefix + ".bias"), false);
}

std::string stage_name(std::size_t i) { return "decoder.up" + std::to_string(i + 1); }

void require_grid(const Var& v, const Var& ref, const char* what) {
  if (v.shape().size() != 5 || v.dim(0) != ref.dim(0) || v.dim(2) != ref.dim(2) || v.dim(3) != ref.dim(3) ||
      v.dim(4) != ref.dim(4)) {
    throw ShapeError(std::string("mlam_fuse: ") + what + " " + shape_to_string(v.shape()) +
                     " is not spatially congruent with the final map " + shape_to_string(ref.shape()));
  }
}

}  // namespace

std::vector<UpsampleStage> upsample_plan(std::int64_t k, UpsampleMode mode, std::int64_t F) {
  if (k < 1) throw ConfigError("decoder: patch kernel must be >= 1");
  const std::int64_t last_channels = std::max<std::int64_t>(F / 2, 4);
  if (k == 1) return {};
  const bool nearest = mode == UpsampleMode::Nearest || (mode == UpsampleMode::Auto && is_power_of_two(k));
  if (nearest && !is_power_of_two(k)) {
    throw ConfigError("decoder: nearest upsampling needs a power-of-two patch kernel, got " + std::to_string(k));
  }
  if (!nearest) return {{k, true, last_channels}};
  if (k == 2) return {{2, false, last_channels}};
  const auto log2k = static_cast<std::int64_t>(std::llround(std::log2(static_cast<double>(k))));
  const std::int64_t first = std::int64_t{1} << (log2k / 2);
  return {{first, false, F}, {k / first, false, last_channels}};
}

MaskDecoder::MaskDecoder(const DecoderConfig& cfg, const Dims& dims, const ModelParams& params)
    : cfg_(cfg), dims_(dims), params_(params) {}

void MaskDecoder::init_params(const DecoderConfig& cfg, const Dims& dims, std::uint64_t seed, ModelParams& params) {
  cfg.validate();
  const std::int64_t F = cfg.fusion_channels;
  add_conv(params, "decoder.proj_final", F, dims.final_channels, 1, seed);
  if (cfg.mlam_enabled) {
    for (int s = 1; s <= 4; ++s) add_conv(params, "decoder.proj_stage" + std::to_string(s), F, dims.embed_dim, 1, seed);
  }
  if (cfg.apg_enabled) add_conv(params, "decoder.prompt_fuse", F, F + dims.prompt_channels, 3, seed);
  std::int64_t c = F;
  const auto plan = upsample_plan(dims.patch_kernel, cfg.upsample, F);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    add_conv(params, stage_name(i) + ".conv", plan[i].out_channels, c, 3, seed);
    params.add(stage_name(i) + ".norm.weight", Tensor({plan[i].out_channels}, 1.0), false, false);
    params.add(stage_name(i) + ".norm.bias", Tensor({plan[i].out_channels}), false, false);
    c = plan[i].out_channels;
  }
  add_conv(params, "decoder.head", cfg.num_classes + 1, c + dims.image_channels, 3, seed);
}

Var MaskDecoder::mlam_fuse(const FeaturePyramid& pyramid, const std::optional<Var>& prompt) const {
  auto p = [&](const std::string& name) { return params_.var(name); };
  const Var& final_map = pyramid.final_map;
  Var fused = ops::conv3d(final_map, p("decoder.proj_final.weight"), p("decoder.proj_final.bias"), {1, 1, 1},
                          {0, 0, 0});
  if (cfg_.mlam_enabled) {
    for (int s = 0; s < 4; ++s) {
      const Var& stage = pyramid.stage_maps[static_cast<std::size_t>(s)];
      require_grid(stage, final_map, "stage map");
      const std::string name = "decoder.proj_stage" + std::to_string(s + 1);
      fused = ops::add(fused, ops::conv3d(stage, p(name + ".weight"), p(name + ".bias"), {1, 1, 1}, {0, 0, 0}));
    }
  }
  if (cfg_.apg_enabled) {
    if (!prompt) throw ContractError("mlam_fuse: prompt embedding required when the APG branch is enabled");
    require_grid(*prompt, final_map, "prompt embedding");
    fused = ops::conv3d(ops::concat_channels({fused, *prompt}), p("decoder.prompt_fuse.weight"),
                        p("decoder.prompt_fuse.bias"), {1, 1, 1}, {1, 1, 1});
  }
  return fused;
}

Var MaskDecoder::decode(const Var& fused, const Var& image) const {
  const auto plan = upsample_plan(dims_.patch_kernel, cfg_.upsample, cfg_.fusion_channels);
  Var h = fused;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto f = plan[i].factor;
    h = plan[i].trilinear ? ops::resize_trilinear(h, {h.dim(2) * f, h.dim(3) * f, h.dim(4) * f})
                          : ops::upsample_nearest(h, {f, f, f});
    const auto name = stage_name(i);
    h = ops::conv3d(h, params_.var(name + ".conv.weight"), params_.var(name + ".conv.bias"), {1, 1, 1}, {1, 1, 1});
    h = ops::gelu(ops::channel_norm(h, params_.var(name + ".norm.weight"), params_.var(name + ".norm.bias"), 1));
  }
  if (image.shape().size() != 5 || image.dim(2) != h.dim(2) || image.dim(3) != h.dim(3) || image.dim(4) != h.dim(4)) {
    throw ShapeError("decode: image " + shape_to_string(image.shape()) + " does not match upsampled map " +
                     shape_to_string(h.shape()));
  }
  h = ops::concat_channels({h, image});
  return ops::conv3d(h, params_.var("decoder.head.weight"), params_.var("decoder.head.bias"), {1, 1, 1}, {1, 1, 1});
}

data::LabelMap predict_labels(const Tensor& logits, const data::Spacing& spacing) {
  Shape s = logits.shape();
  if (s.size() == 5) {
    if (s[0] != 1) throw ShapeError("predict_labels: batch size must be 1");
    s.erase(s.begin());
  }
  if (s.size() != 4 || s[0] < 1) throw ShapeError("predict_labels: expected [K+1, D, H, W] logits");
  const std::int64_t K1 = s[0];
  data::LabelMap out({s[1], s[2], s[3]}, static_cast<int>(K1 - 1), spacing);
  const std::int64_t V = s[1] * s[2] * s[3];
  const double* v = logits.data();
  for (std::int64_t i = 0; i < V; ++i) {
    std::int32_t best = 0;
    double best_v = v[i];
    for (std::int64_t k = 0; k < K1; ++k) {
      const double x = v[k * V + i];
      if (std::isnan(x)) throw NumericError("predict_labels: NaN logit at voxel " + std::to_string(i));
      if (x > best_v) {
        best_v = x;
        best = static_cast<std::int32_t>(k);
      }
    }
    out.labels[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace aps::model
