#include "autoprosam/model/model.hpp"

#include <cstdio>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/model/config_json.hpp"

namespace aps::model {

namespace {

MaskDecoder::Dims decoder_dims(const ModelConfig& cfg) {
  MaskDecoder::Dims d;
  d.embed_dim = cfg.encoder.embed_dim;
  d.final_channels = cfg.encoder.bottleneck_channels;
  d.prompt_channels = cfg.prompt_channels();
  d.patch_kernel = cfg.encoder.patch_kernel;
  d.image_channels = cfg.encoder.in_channels;
  return d;
}

void init_heads(const ModelConfig& cfg, std::uint64_t seed, ModelParams& params) {
  if (cfg.decoder.apg_enabled) {
    AutoPromptGenerator::init_params(cfg.apg, cfg.encoder.bottleneck_channels, cfg.prompt_channels(), seed, params);
  }
  MaskDecoder::init_params(cfg.decoder, decoder_dims(cfg), seed, params);
}

io::Archive zero_2d_archive(const EncoderConfig& cfg) {
  io::Archive a;
  for (const auto& [name, shape] : expected_2d_entries(cfg)) a.put(name, Tensor(shape), io::DType::F64, true);
  return a;
}

}  // namespace

AutoProSam::AutoProSam(ModelConfig cfg, ModelParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.finalize();
}

AutoProSam AutoProSam::from_2d_checkpoint(const io::Archive& archive, ModelConfig cfg, std::uint64_t seed) {
  cfg.finalize();
  ModelParams params = import_2d_checkpoint(archive, cfg.encoder, seed);
  init_heads(cfg, seed, params);
  return AutoProSam(std::move(cfg), std::move(params));
}

AutoProSam AutoProSam::from_checkpoint(const io::Archive& ckpt) {
  const auto text = ckpt.meta("model_config");
  if (!text) throw DataError("checkpoint: missing 'model_config' metadata");
  ModelConfig cfg;
  try {
    from_json(io::Json::parse(*text), cfg);
  } catch (const io::Json::exception& e) {
    throw DataError(std::string("checkpoint: unreadable model_config: ") + e.what());
  }
  cfg.finalize();
  AutoProSam model = from_2d_checkpoint(zero_2d_archive(cfg.encoder), cfg, 0);
  for (const auto& p : model.params_.all()) {
    if (!ckpt.contains(p.name)) throw DataError("checkpoint: missing parameter '" + p.name + "'");
    if (ckpt.get(p.name).frozen != p.frozen) {
      throw DataError("checkpoint: frozen flag of '" + p.name + "' disagrees with the freezing policy");
    }
  }
  model.params_.load_values_from(ckpt);
  return model;
}

void AutoProSam::save_to(io::Archive& archive) const {
  params_.write_to(archive);
  archive.set_meta("model_config", to_json(cfg_).dump());
  archive.set_meta("apg_enabled", cfg_.decoder.apg_enabled ? "1" : "0");
  archive.set_meta("mlam_enabled", cfg_.decoder.mlam_enabled ? "1" : "0");
  archive.set_meta("config_hash", config_hash());
}

std::string AutoProSam::config_hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(cfg_).dump())));
  return buf;
}

FeaturePyramid AutoProSam::encode(const Var& image) const {
  return ImageEncoder3D(cfg_.encoder, params_).forward(image);
}

Var AutoProSam::forward(const Var& image) const {
  const FeaturePyramid pyramid = encode(image);
  std::optional<Var> prompt;
  if (cfg_.decoder.apg_enabled) {
    prompt = AutoPromptGenerator(cfg_.apg, cfg_.encoder.bottleneck_channels, cfg_.prompt_channels(), params_)
                 .forward(pyramid.final_map);
  }
  const MaskDecoder decoder(cfg_.decoder, decoder_dims(cfg_), params_);
  return decoder.decode(decoder.mlam_fuse(pyramid, prompt), image);
}

Tensor AutoProSam::predict_logits(const Tensor& image) const {
  NoGradGuard guard;
  Tensor x = image;
  if (x.rank() == 3) x = x.reshaped({1, 1, x.shape()[0], x.shape()[1], x.shape()[2]});
  if (x.rank() != 5 || x.shape()[0] != 1) throw ShapeError("predict_logits: expected [D,H,W] or [1,C,D,H,W] input");
  return forward(constant(std::move(x))).value();
}

ParamCounts count_params(const AutoProSam& model) { return model.params().counts(); }

ParamCounts count_params(ModelConfig cfg) {
  cfg.finalize();
  return count_params(AutoProSam::from_2d_checkpoint(zero_2d_archive(cfg.encoder), cfg, 0));
}

}  // namespace aps::model
