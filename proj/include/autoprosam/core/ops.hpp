#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "autoprosam/core/autograd.hpp"

// Differentiable tensor operations. Volumetric maps use the layout
// [B, C, D, H, W]; token sequences use [B, N, C] with N = D*H*W in (d, h, w)
// row-major order.

namespace aps::ops {

using Index3 = std::array<std::int64_t, 3>;

Var add(const Var& a, const Var& b);
// x + y with y tiled over x; x.numel() must be a multiple of y.numel().
Var add_broadcast(const Var& x, const Var& y);
Var scale(const Var& x, double s);
Var sum(const Var& x);
Var reshape(const Var& x, Shape shape);

// x[M, K] * w[K, N]
Var matmul(const Var& x, const Var& w);
// x[..., K] * weight[N, K]^T + bias[N]; leading dims of x are flattened.
Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias);

enum class Activation { Gelu, Identity };
Var activate(const Var& x, Activation act);
Var gelu(const Var& x);

// Normalizes over `axis` (mean/variance per position), then applies the
// per-channel affine gamma/beta. eps matches the 2D source architecture.
inline constexpr double kNormEps = 1e-6;
Var channel_norm(const Var& x, const Var& gamma, const Var& beta, std::int64_t axis);

// Non-overlapping 3D windows over a token grid. Window sizes are clamped to the
// grid; trailing windows are padded with -1 slots.
struct WindowPartition {
  Index3 grid{1, 1, 1};
  Index3 window{1, 1, 1};
  std::int64_t window_count = 0;
  std::int64_t window_len = 0;
  std::vector<std::int64_t> index;  // window_count * window_len, -1 = padding
  bool clamped = false;

  static WindowPartition build(const Index3& grid, const Index3& window_size);
};

// qkv[B, N, 3C] -> [B, N, C]. Optionally exposes the per-window attention
// probabilities [B, windows, heads, L, L] (padded rows/columns are zero).
Var window_attention(const Var& qkv, const WindowPartition& part, std::int64_t heads, Tensor* probs_out = nullptr);

Var tokens_to_channels(const Var& tokens, const Index3& grid);
Var channels_to_tokens(const Var& map);

// x[B, Cin, D, H, W], weight[Cout, Cin/groups, kd, kh, kw], bias[Cout].
Var conv3d(const Var& x, const Var& weight, const std::optional<Var>& bias, const Index3& stride,
           const Index3& padding, std::int64_t groups = 1);

Var upsample_nearest(const Var& x, const Index3& factor);
// Trilinear resize with half-voxel aligned centers (align_corners = false).
Var resize_trilinear(const Var& x, const Index3& out_size);

Var concat_channels(const std::vector<Var>& parts);
// Softmax across axis 1 of [B, K, ...].
Var softmax_channels(const Var& x);

// pos[d*H*W + h*W + w, c] = planar[c, h, w] + depth[c, d]
Var positional_grid(const Var& planar, const Var& depth);

}  // namespace aps::ops
