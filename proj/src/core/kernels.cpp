#include "autoprosam/core/kernels.hpp"

#include <atomic>

namespace aps::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::OpenMP};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

std::array<std::int64_t, 3> Conv3dGeometry::out_size() const {
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) out[a] = (in_size[a] + 2 * padding[a] - kernel[a]) / stride[a] + 1;
  return out;
}

#define APS_DISPATCH(call) \
  if (backend() == Backend::OpenMP) return omp::call; \
  return serial::call;

void conv3d_forward(const Conv3dGeometry& g, const double* x, const double* w, const double* b, double* y) {
  APS_DISPATCH(conv3d_forward(g, x, w, b, y))
}
void conv3d_backward_input(const Conv3dGeometry& g, const double* dy, const double* w, double* dx) {
  APS_DISPATCH(conv3d_backward_input(g, dy, w, dx))
}
void conv3d_backward_weight(const Conv3dGeometry& g, const double* x, const double* dy, double* dw, double* db) {
  APS_DISPATCH(conv3d_backward_weight(g, x, dy, dw, db))
}
void gemm(const GemmArgs& a, const double* A, const double* B, double* C) { APS_DISPATCH(gemm(a, A, B, C)) }
void attention_forward(const AttentionGeometry& g, const double* qkv, double* out, double* probs) {
  APS_DISPATCH(attention_forward(g, qkv, out, probs))
}
void attention_backward(const AttentionGeometry& g, const double* qkv, const double* probs, const double* dout,
                        double* dqkv) {
  APS_DISPATCH(attention_backward(g, qkv, probs, dout, dqkv))
}

#undef APS_DISPATCH

}  // namespace aps::kernels
