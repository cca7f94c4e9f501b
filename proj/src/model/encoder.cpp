#include "autoprosam/model/encoder.hpp"

#include <sstream>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/core/logging.hpp"

namespace aps::model {

namespace names {
std::string block(std::int64_t i, const std::string& leaf) { return "encoder.block" + std::to_string(i) + "." + leaf; }
}  // namespace names

namespace {

struct BlockLeaf {
  const char* leaf;
  bool is_norm;
};

constexpr BlockLeaf kBlockLeaves[] = {
    {"norm1.weight", true},     {"norm1.bias", true},     {"attn.qkv.weight", false}, {"attn.qkv.bias", false},
    {"attn.proj.weight", false}, {"attn.proj.bias", false}, {"norm2.weight", true},     {"norm2.bias", true},
    {"mlp.fc1.weight", false},  {"mlp.fc1.bias", false},  {"mlp.fc2.weight", false},  {"mlp.fc2.bias", false},
};

Shape block_leaf_shape(const EncoderConfig& cfg, const std::string& leaf) {
  const std::int64_t C = cfg.embed_dim, M = cfg.mlp_dim();
  if (leaf.starts_with("norm")) return {C};
  if (leaf == "attn.qkv.weight") return {3 * C, C};
  if (leaf == "attn.qkv.bias") return {3 * C};
  if (leaf == "attn.proj.weight") return {C, C};
  if (leaf == "attn.proj.bias") return {C};
  if (leaf == "mlp.fc1.weight") return {M, C};
  if (leaf == "mlp.fc1.bias") return {M};
  if (leaf == "mlp.fc2.weight") return {C, M};
  return {C};  // mlp.fc2.bias
}

}  // namespace

std::vector<std::pair<std::string, Shape>> expected_2d_entries(const EncoderConfig& cfg) {
  const std::int64_t C = cfg.embed_dim, k = cfg.patch_kernel;
  std::vector<std::pair<std::string, Shape>> out{
      {names::kPatchWeight2d, {C, cfg.in_channels, k, k}},
      {names::kPatchBias2d, {C}},
      {names::kPos2d, {C, cfg.token_grid[1], cfg.token_grid[2]}},
  };
  for (std::int64_t i = 0; i < cfg.block_count; ++i) {
    for (const auto& bl : kBlockLeaves) out.emplace_back(names::block(i, bl.leaf), block_leaf_shape(cfg, bl.leaf));
  }
  return out;
}

void import_2d_checkpoint_into(const io::Archive& archive, const EncoderConfig& cfg, std::uint64_t init_seed,
                               ModelParams& params) {
  cfg.validate();
  for (const auto& [name, shape] : expected_2d_entries(cfg)) {
    if (!archive.contains(name)) throw DataError("import: missing checkpoint entry '" + name + "'");
    const auto& got = archive.get(name).shape();
    if (got != shape) {
      throw DataError("import: checkpoint entry '" + name + "' has shape " + shape_to_string(got) + ", expected " +
                      shape_to_string(shape));
    }
  }
  const std::int64_t C = cfg.embed_dim, k = cfg.patch_kernel, Np = cfg.adapter_dim();
  const std::int64_t F = cfg.bottleneck_channels;

  // Factorized patch embedding: the planar 1 x k x k kernel is the 2D kernel
  // with a singleton depth axis; the depthwise k x 1 x 1 kernel starts as a
  // delta on the center slice.
  params.add(names::kPlanarWeight, archive.get(names::kPatchWeight2d).values.reshaped({C, cfg.in_channels, 1, k, k}),
             true);
  params.add(names::kPlanarBias, archive.get(names::kPatchBias2d).values, true);
  Tensor depth({C, 1, k, 1, 1});
  for (std::int64_t c = 0; c < C; ++c) depth[c * k + cfg.depth_delta_index()] = 1.0;
  params.add(names::kDepthKernel, std::move(depth), false);

  params.add(names::kPosPlanar, archive.get(names::kPos2d).values, true, false);
  params.add(names::kPosDepth, Tensor({C, cfg.token_grid[0]}), false, false);

  for (std::int64_t i = 0; i < cfg.block_count; ++i) {
    for (const auto& bl : kBlockLeaves) {
      const auto name = names::block(i, bl.leaf);
      // Normalization layers are tuned; attention and MLP weights stay frozen.
      params.add(name, archive.get(name).values, !bl.is_norm, !bl.is_norm);
    }
    const auto down = names::block(i, "adapter.down.weight");
    params.add(down, init_uniform_fan_in({C, Np}, C, init_seed, down), false);
    const auto dw = names::block(i, "adapter.dwconv.weight");
    params.add(dw, init_uniform_fan_in({Np, 1, 3, 3, 3}, 27, init_seed, dw), false);
    params.add(names::block(i, "adapter.dwconv.bias"), Tensor({Np}), false);
    params.add(names::block(i, "adapter.up.weight"), Tensor({Np, C}), false);
  }

  const std::string b = "encoder.bottleneck.";
  params.add(b + "conv1.weight", init_uniform_fan_in({F, C, 3, 3, 3}, C * 27, init_seed, b + "conv1.weight"), false);
  params.add(b + "conv1.bias", init_uniform_fan_in({F}, C * 27, init_seed, b + "conv1.bias"), false);
  params.add(b + "norm.weight", Tensor({F}, 1.0), false, false);
  params.add(b + "norm.bias", Tensor({F}), false, false);
  params.add(b + "conv2.weight", init_uniform_fan_in({F, F, 3, 3, 3}, F * 27, init_seed, b + "conv2.weight"), false);
  params.add(b + "conv2.bias", init_uniform_fan_in({F}, F * 27, init_seed, b + "conv2.bias"), false);
}

ModelParams import_2d_checkpoint(const io::Archive& archive, const EncoderConfig& cfg, std::uint64_t init_seed) {
  ModelParams params;
  import_2d_checkpoint_into(archive, cfg, init_seed, params);
  return params;
}

ImageEncoder3D::ImageEncoder3D(const EncoderConfig& cfg, const ModelParams& params) : cfg_(cfg), params_(params) {}

Var ImageEncoder3D::embed_patches(const Var& volume, Index3* grid_out) const {
  if (volume.shape().size() != 5 || volume.dim(1) != cfg_.in_channels) {
    throw ShapeError("embed_patches: expected [B, " + std::to_string(cfg_.in_channels) + ", D, H, W], got " +
                     shape_to_string(volume.shape()));
  }
  const std::int64_t k = cfg_.patch_kernel;
  for (int a = 2; a < 5; ++a) {
    if (volume.dim(a) % k != 0) {
      throw ShapeError("embed_patches: spatial dims " + shape_to_string(volume.shape()) +
                       " must be multiples of " + std::to_string(k));
    }
  }
  const Var planar = ops::conv3d(volume, params_.var(names::kPlanarWeight), params_.var(names::kPlanarBias),
                                 {1, k, k}, {0, 0, 0});
  const Var embedded = ops::conv3d(planar, params_.var(names::kDepthKernel), std::nullopt, {k, 1, 1}, {0, 0, 0},
                                   cfg_.embed_dim);
  if (grid_out) *grid_out = {embedded.dim(2), embedded.dim(3), embedded.dim(4)};
  return ops::channels_to_tokens(embedded);
}

Tensor ImageEncoder3D::positional_encoding(std::int64_t d, std::int64_t h, std::int64_t w) const {
  const auto& g = cfg_.token_grid;
  if (d < 0 || h < 0 || w < 0 || d >= g[0] || h >= g[1] || w >= g[2]) {
    throw ContractError("positional_encoding: coordinate (" + std::to_string(d) + ", " + std::to_string(h) + ", " +
                        std::to_string(w) + ") outside the token grid");
  }
  const Tensor& planar = params_.value(names::kPosPlanar);
  const Tensor& depth = params_.value(names::kPosDepth);
  Tensor out({cfg_.embed_dim});
  for (std::int64_t c = 0; c < cfg_.embed_dim; ++c) {
    out[c] = planar[(c * g[1] + h) * g[2] + w] + depth[c * g[0] + d];
  }
  return out;
}

Var ImageEncoder3D::add_positional(const Var& tokens) const {
  return ops::add_broadcast(tokens, ops::positional_grid(params_.var(names::kPosPlanar), params_.var(names::kPosDepth)));
}

Var ImageEncoder3D::attention_block(const Var& tokens, std::int64_t i, const Index3& grid) const {
  if (tokens.shape().size() != 3 || tokens.dim(1) != grid[0] * grid[1] * grid[2]) {
    throw ShapeError("attention_block: token count does not equal D'*H'*W'");
  }
  const Index3 window{cfg_.window_size, cfg_.window_size, cfg_.window_size};
  const auto part = ops::WindowPartition::build(grid, window);
  if (part.clamped) {
    std::ostringstream os;
    os << "attention_block: window " << cfg_.window_size << " clamped to grid (" << part.window[0] << ", "
       << part.window[1] << ", " << part.window[2] << ")";
    log::debug(os.str());
  }
  auto p = [&](const char* leaf) { return params_.var(names::block(i, leaf)); };

  Var h = ops::channel_norm(tokens, p("norm1.weight"), p("norm1.bias"), -1);
  h = ops::linear(h, p("attn.qkv.weight"), p("attn.qkv.bias"));
  h = ops::window_attention(h, part, cfg_.head_count);
  h = ops::linear(h, p("attn.proj.weight"), p("attn.proj.bias"));
  Var x = ops::add(tokens, h);

  h = ops::channel_norm(x, p("norm2.weight"), p("norm2.bias"), -1);
  h = ops::gelu(ops::linear(h, p("mlp.fc1.weight"), p("mlp.fc1.bias")));
  h = ops::linear(h, p("mlp.fc2.weight"), p("mlp.fc2.bias"));
  return ops::add(x, h);
}

Var ImageEncoder3D::depth_adapter(const Var& tokens, std::int64_t i, const Index3& grid) const {
  const std::int64_t B = tokens.dim(0), N = tokens.dim(1), C = tokens.dim(2), Np = cfg_.adapter_dim();
  auto p = [&](const char* leaf) { return params_.var(names::block(i, leaf)); };
  Var h = ops::matmul(ops::reshape(tokens, {B * N, C}), p("adapter.down.weight"));
  h = ops::activate(h, cfg_.adapter_activation);
  h = ops::tokens_to_channels(ops::reshape(h, {B, N, Np}), grid);
  h = ops::conv3d(h, p("adapter.dwconv.weight"), p("adapter.dwconv.bias"), {1, 1, 1}, {1, 1, 1}, Np);
  h = ops::reshape(ops::channels_to_tokens(h), {B * N, Np});
  h = ops::reshape(ops::matmul(h, p("adapter.up.weight")), {B, N, C});
  return ops::add(tokens, h);
}

Var ImageEncoder3D::bottleneck(const Var& tokens, const Index3& grid) const {
  const std::string b = "encoder.bottleneck.";
  auto p = [&](const std::string& leaf) { return params_.var(b + leaf); };
  Var x = ops::tokens_to_channels(tokens, grid);
  x = ops::conv3d(x, p("conv1.weight"), p("conv1.bias"), {1, 1, 1}, {1, 1, 1});
  x = ops::gelu(ops::channel_norm(x, p("norm.weight"), p("norm.bias"), 1));
  return ops::conv3d(x, p("conv2.weight"), p("conv2.bias"), {1, 1, 1}, {1, 1, 1});
}

FeaturePyramid ImageEncoder3D::forward(const Var& volume) const {
  Index3 grid{};
  Var x = embed_patches(volume, &grid);
  if (grid != cfg_.token_grid) {
    throw ShapeError("encoder: input " + shape_to_string(volume.shape()) + " yields a token grid different from the "
                     "configured positional tables");
  }
  x = add_positional(x);
  const auto taps = cfg_.taps();
  FeaturePyramid out;
  auto record = [&](std::int64_t done) {
    for (std::size_t s = 0; s < 4; ++s) {
      if (taps[s] == done) out.stage_maps[s] = ops::tokens_to_channels(x, grid);
    }
  };
  record(0);
  for (std::int64_t i = 0; i < cfg_.block_count; ++i) {
    x = attention_block(x, i, grid);
    x = depth_adapter(x, i, grid);
    record(i + 1);
  }
  out.last_tokens = x;
  out.final_map = bottleneck(x, grid);
  return out;
}

}  // namespace aps::model
