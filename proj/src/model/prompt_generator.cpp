#include "autoprosam/model/prompt_generator.hpp"

#include <string>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/core/ops.hpp"

namespace aps::model {

namespace {

void add_conv(ModelParams& params, const std::string& prefix, std::int64_t out_c, std::int64_t in_c, std::int64_t k,
              std::uint64_t seed) {
  const std::int64_t fan_in = in_c * k * k * k;
  params.add(prefix + ".weight", init_uniform_fan_in({out_c, in_c, k, k, k}, fan_in, seed, prefix + ".weight"), false);
  params.add(prefix + ".bias", init_uniform_fan_in({out_c}, fan_in, seed, prefix + ".bias"), false);
}

void add_norm(ModelParams& params, const std::string& prefix, std::int64_t c) {
  params.add(prefix + ".weight", Tensor({c}, 1.0), false, false);
  params.add(prefix + ".bias", Tensor({c}), false, false);
}

// conv3 -> norm -> act, twice.
void add_block(ModelParams& params, const std::string& prefix, std::int64_t in_c, std::int64_t out_c,
               std::uint64_t seed) {
  add_conv(params, prefix + ".conv1", out_c, in_c, 3, seed);
  add_norm(params, prefix + ".norm1", out_c);
  add_conv(params, prefix + ".conv2", out_c, out_c, 3, seed);
  add_norm(params, prefix + ".norm2", out_c);
}

Var run_block(const ModelParams& params, const std::string& prefix, const Var& x) {
  auto p = [&](const std::string& leaf) { return params.var(prefix + "." + leaf); };
  Var h = ops::conv3d(x, p("conv1.weight"), p("conv1.bias"), {1, 1, 1}, {1, 1, 1});
  h = ops::gelu(ops::channel_norm(h, p("norm1.weight"), p("norm1.bias"), 1));
  h = ops::conv3d(h, p("conv2.weight"), p("conv2.bias"), {1, 1, 1}, {1, 1, 1});
  return ops::gelu(ops::channel_norm(h, p("norm2.weight"), p("norm2.bias"), 1));
}

std::string level_name(const char* kind, std::int64_t level) { return std::string("apg.") + kind + std::to_string(level); }

}  // namespace

AutoPromptGenerator::AutoPromptGenerator(const ApgConfig& cfg, std::int64_t in_channels, std::int64_t out_channels,
                                         const ModelParams& params)
    : cfg_(cfg), in_channels_(in_channels), out_channels_(out_channels), params_(params) {}

void AutoPromptGenerator::init_params(const ApgConfig& cfg, std::int64_t in_channels, std::int64_t out_channels,
                                      std::uint64_t seed, ModelParams& params) {
  cfg.validate();
  const std::int64_t b = cfg.base_channels;
  add_block(params, level_name("enc", 0), in_channels, b, seed);
  for (std::int64_t l = 1; l < cfg.level_count; ++l) {
    add_conv(params, level_name("down", l), b << l, b << (l - 1), 3, seed);
    add_block(params, level_name("enc", l), b << l, b << l, seed);
  }
  for (std::int64_t l = cfg.level_count - 1; l >= 1; --l) {
    add_conv(params, level_name("up", l), b << (l - 1), b << l, 3, seed);
    add_block(params, level_name("dec", l - 1), 2 * (b << (l - 1)), b << (l - 1), seed);
  }
  add_conv(params, "apg.head", out_channels, b, 1, seed);
}

Var AutoPromptGenerator::forward(const Var& x) const {
  if (x.shape().size() != 5 || x.dim(1) != in_channels_) {
    throw ShapeError("apg: expected [B, " + std::to_string(in_channels_) + ", D', H', W'], got " +
                     shape_to_string(x.shape()));
  }
  const std::int64_t mult = std::int64_t{1} << (cfg_.level_count - 1);
  for (int a = 2; a < 5; ++a) {
    if (x.dim(a) % mult != 0) {
      throw ShapeError("apg: spatial dims " + shape_to_string(x.shape()) + " must be multiples of " +
                       std::to_string(mult));
    }
  }
  auto p = [&](const std::string& name) { return params_.var(name); };

  std::vector<Var> skips;
  Var h = run_block(params_, level_name("enc", 0), x);
  for (std::int64_t l = 1; l < cfg_.level_count; ++l) {
    skips.push_back(h);
    const auto down = level_name("down", l);
    h = ops::conv3d(h, p(down + ".weight"), p(down + ".bias"), {2, 2, 2}, {1, 1, 1});
    h = run_block(params_, level_name("enc", l), h);
  }
  for (std::int64_t l = cfg_.level_count - 1; l >= 1; --l) {
    const auto up = level_name("up", l);
    h = ops::upsample_nearest(h, {2, 2, 2});
    h = ops::conv3d(h, p(up + ".weight"), p(up + ".bias"), {1, 1, 1}, {1, 1, 1});
    h = ops::concat_channels({skips[static_cast<std::size_t>(l - 1)], h});
    h = run_block(params_, level_name("dec", l - 1), h);
  }
  return ops::conv3d(h, p("apg.head.weight"), p("apg.head.bias"), {1, 1, 1}, {0, 0, 0});
}

}  // namespace aps::model
