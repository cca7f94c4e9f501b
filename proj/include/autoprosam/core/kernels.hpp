#pragma once

#include <array>
#include <cstdint>

// Compute kernels behind the autograd ops. Each kernel has a serial reference
// and an OpenMP variant with an identical per-output accumulation order, so the
// two produce bit-identical results regardless of thread count.

namespace aps::kernels {

enum class Backend { Serial, OpenMP };

// Process-wide backend used by the dispatching entry points below.
void set_backend(Backend backend);
Backend backend();

struct Conv3dGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t groups = 1;
  std::array<std::int64_t, 3> in_size{1, 1, 1};
  std::array<std::int64_t, 3> kernel{1, 1, 1};
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> padding{0, 0, 0};

  std::array<std::int64_t, 3> out_size() const;
  std::int64_t in_per_group() const { return in_channels / groups; }
  std::int64_t out_per_group() const { return out_channels / groups; }
  std::int64_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
};

// C[M,N] = op(A)[M,K] * op(B)[K,N] (+ C when accumulate). op is a transpose
// when the corresponding flag is set; A is stored [M,K] or [K,M], B [K,N] or [N,K].
struct GemmArgs {
  std::int64_t m = 0, n = 0, k = 0;
  bool trans_a = false, trans_b = false, accumulate = false;
};

// Windowed multi-head attention over token windows. `window_index` holds
// `window_count * window_len` token ids with -1 marking padded slots; padded
// slots never act as keys and produce no output.
struct AttentionGeometry {
  std::int64_t batch = 1;
  std::int64_t tokens = 1;
  std::int64_t channels = 1;
  std::int64_t heads = 1;
  std::int64_t window_count = 1;
  std::int64_t window_len = 1;
  const std::int64_t* window_index = nullptr;

  std::int64_t head_dim() const { return channels / heads; }
  std::int64_t probs_size() const { return batch * window_count * heads * window_len * window_len; }
};

#define APS_DECLARE_KERNELS                                                                                    \
  void conv3d_forward(const Conv3dGeometry& g, const double* x, const double* w, const double* b, double* y);   \
  void conv3d_backward_input(const Conv3dGeometry& g, const double* dy, const double* w, double* dx);          \
  void conv3d_backward_weight(const Conv3dGeometry& g, const double* x, const double* dy, double* dw,          \
                              double* db);                                                                     \
  void gemm(const GemmArgs& a, const double* A, const double* B, double* C);                                   \
  void attention_forward(const AttentionGeometry& g, const double* qkv, double* out, double* probs);            \
  void attention_backward(const AttentionGeometry& g, const double* qkv, const double* probs, const double* dout, \
                          double* dqkv);

namespace serial {
APS_DECLARE_KERNELS
}
namespace omp {
APS_DECLARE_KERNELS
}
// Dispatch on backend().
APS_DECLARE_KERNELS

#undef APS_DECLARE_KERNELS

}  // namespace aps::kernels
