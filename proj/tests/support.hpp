#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "autoprosam/core/autograd.hpp"
#include "autoprosam/core/ops.hpp"
#include "autoprosam/data/volume.hpp"
#include "autoprosam/model/config.hpp"

namespace aps::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Scalar probe sum(w .* y) with fixed random w, so no gradient cancels by symmetry.
inline Var probe(const Var& y, std::uint64_t seed = 99) {
  const std::int64_t n = y.numel();
  const Var w = constant(random_tensor({n, 1}, seed));
  return ops::matmul(ops::reshape(y, {1, n}), w);
}

// Norm-wise relative error between the analytic gradient of f() with respect
// to `x` and central differences, over up to `max_entries` evenly spaced entries.
inline double grad_check(Var x, const std::function<Var()>& f, double h = 1e-6, std::int64_t max_entries = 64) {
  x.zero_grad();
  backward(f());
  const Tensor analytic = x.grad().numel() == x.numel() ? x.grad() : Tensor(x.shape());
  const std::int64_t n = x.numel();
  const std::int64_t step = std::max<std::int64_t>(1, n / max_entries);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  NoGradGuard guard;
  for (std::int64_t i = 0; i < n; i += step) {
    double& v = x.mutable_value()[i];
    const double saved = v;
    v = saved + h;
    const double up = f().value()[0];
    v = saved - h;
    const double down = f().value()[0];
    v = saved;
    const double numeric = (up - down) / (2.0 * h);
    diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
    a2 += analytic[i] * analytic[i];
    n2 += numeric * numeric;
  }
  const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-12);
  return std::sqrt(diff2) / denom;
}

// C=8, L=2, 2 heads, k=2, 2x2x2 tokens: small enough for finite differences.
inline model::ModelConfig tiny_model_config() {
  model::ModelConfig cfg;
  cfg.encoder.embed_dim = 8;
  cfg.encoder.block_count = 2;
  cfg.encoder.head_count = 2;
  cfg.encoder.patch_kernel = 2;
  cfg.encoder.window_size = 2;
  cfg.encoder.mlp_ratio = 2;
  cfg.encoder.token_grid = {2, 2, 2};
  cfg.apg.level_count = 2;
  cfg.apg.base_channels = 2;
  cfg.decoder.fusion_channels = 4;
  cfg.decoder.num_classes = 2;
  return cfg.finalize();
}

inline data::LabelMap random_labels(const data::Index3& shape, int K, std::uint64_t seed, double fg_prob = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cls(1, K);
  data::LabelMap m(shape, K, {1.0, 1.0, 1.0});
  for (auto& l : m.labels) l = u(rng) < fg_prob ? cls(rng) : 0;
  return m;
}

// One to three random balls with classes in 1..K.
inline data::LabelMap blob_labels(const data::Index3& s, int K, std::mt19937_64& rng) {
  data::LabelMap l(s, K, {1, 1, 1});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 1 + static_cast<int>(u(rng) * 3);
  for (int b = 0; b < n; ++b) {
    const double cz = u(rng) * s[0], cy = u(rng) * s[1], cx = u(rng) * s[2], r = 1.0 + u(rng) * 4.0;
    const int c = 1 + static_cast<int>(u(rng) * K) % K;
    for (std::int64_t d = 0; d < s[0]; ++d)
      for (std::int64_t h = 0; h < s[1]; ++h)
        for (std::int64_t w = 0; w < s[2]; ++w)
          if ((d - cz) * (d - cz) + (h - cy) * (h - cy) + (w - cx) * (w - cx) <= r * r) l.at(d, h, w) = c;
  }
  return l;
}

}  // namespace aps::testing
