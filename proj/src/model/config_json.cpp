#include "autoprosam/model/config_json.hpp"

namespace aps::model {

std::string upsample_mode_name(UpsampleMode mode) {
  switch (mode) {
    case UpsampleMode::Auto: return "auto";
    case UpsampleMode::Nearest: return "nearest";
    case UpsampleMode::Trilinear: return "trilinear";
  }
  return "auto";
}

UpsampleMode parse_upsample_mode(const std::string& name) {
  if (name == "auto") return UpsampleMode::Auto;
  if (name == "nearest") return UpsampleMode::Nearest;
  if (name == "trilinear") return UpsampleMode::Trilinear;
  throw ConfigError("decoder.upsample: expected auto|nearest|trilinear, got '" + name + "'");
}

io::Json to_json(const EncoderConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"block_count", c.block_count},
          {"head_count", c.head_count},
          {"patch_kernel", c.patch_kernel},
          {"window_size", c.window_size},
          {"adapter_ratio", c.adapter_ratio},
          {"mlp_ratio", c.mlp_ratio},
          {"in_channels", c.in_channels},
          {"token_grid", c.token_grid},
          {"stage_taps", c.stage_taps},
          {"adapter_activation", c.adapter_activation == ops::Activation::Gelu ? "gelu" : "identity"}};
}

io::Json to_json(const ApgConfig& c) {
  return {{"level_count", c.level_count}, {"base_channels", c.base_channels}, {"output_channels", c.output_channels}};
}

io::Json to_json(const DecoderConfig& c) {
  return {{"fusion_channels", c.fusion_channels},
          {"num_classes", c.num_classes},
          {"upsample", upsample_mode_name(c.upsample)},
          {"mlam", c.mlam_enabled},
          {"apg", c.apg_enabled}};
}

io::Json to_json(const ModelConfig& c) {
  return {{"encoder", to_json(c.encoder)}, {"apg", to_json(c.apg)}, {"decoder", to_json(c.decoder)}};
}

void from_json(const io::Json& j, EncoderConfig& c, const std::string& ctx) {
  io::JsonFields f(j, ctx);
  std::string act = c.adapter_activation == ops::Activation::Gelu ? "gelu" : "identity";
  f.get("embed_dim", c.embed_dim)
      .get("block_count", c.block_count)
      .get("head_count", c.head_count)
      .get("patch_kernel", c.patch_kernel)
      .get("window_size", c.window_size)
      .get("adapter_ratio", c.adapter_ratio)
      .get("mlp_ratio", c.mlp_ratio)
      .get("in_channels", c.in_channels)
      .get("token_grid", c.token_grid)
      .get("stage_taps", c.stage_taps)
      .get("adapter_activation", act);
  f.finish();
  if (act == "gelu") {
    c.adapter_activation = ops::Activation::Gelu;
  } else if (act == "identity") {
    c.adapter_activation = ops::Activation::Identity;
  } else {
    throw ConfigError(ctx + ".adapter_activation: expected gelu|identity, got '" + act + "'");
  }
}

void from_json(const io::Json& j, ApgConfig& c, const std::string& ctx) {
  io::JsonFields f(j, ctx);
  f.get("level_count", c.level_count).get("base_channels", c.base_channels).get("output_channels", c.output_channels);
  f.finish();
}

void from_json(const io::Json& j, DecoderConfig& c, const std::string& ctx) {
  io::JsonFields f(j, ctx);
  std::string mode = upsample_mode_name(c.upsample);
  f.get("fusion_channels", c.fusion_channels)
      .get("num_classes", c.num_classes)
      .get("upsample", mode)
      .get("mlam", c.mlam_enabled)
      .get("apg", c.apg_enabled);
  f.finish();
  c.upsample = parse_upsample_mode(mode);
}

void from_json(const io::Json& j, ModelConfig& c, const std::string& ctx) {
  io::JsonFields f(j, ctx);
  if (const auto* e = f.child("encoder")) from_json(*e, c.encoder, f.path("encoder"));
  if (const auto* a = f.child("apg")) from_json(*a, c.apg, f.path("apg"));
  if (const auto* d = f.child("decoder")) from_json(*d, c.decoder, f.path("decoder"));
  f.finish();
}

}  // namespace aps::model
