#include "kernel_impl.hpp"

namespace aps::kernels::serial {

void conv3d_forward(const Conv3dGeometry& g, const double* x, const double* w, const double* b, double* y) {
  const auto od_count = g.out_size()[0];
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_channels; ++co)
      for (std::int64_t od = 0; od < od_count; ++od) detail::conv3d_forward_slab(g, x, w, b, y, n, co, od);
}

void conv3d_backward_input(const Conv3dGeometry& g, const double* dy, const double* w, double* dx) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci) detail::conv3d_backward_input_slab(g, dy, w, dx, n, ci);
}

void conv3d_backward_weight(const Conv3dGeometry& g, const double* x, const double* dy, double* dw, double* db) {
  for (std::int64_t co = 0; co < g.out_channels; ++co)
    for (std::int64_t cig = 0; cig < g.in_per_group(); ++cig)
      detail::conv3d_backward_weight_slab(g, x, dy, dw, db, co, cig);
}

void gemm(const GemmArgs& a, const double* A, const double* B, double* C) {
  for (std::int64_t i = 0; i < a.m; ++i) detail::gemm_row(a, A, B, C, i);
}

void attention_forward(const AttentionGeometry& g, const double* qkv, double* out, double* probs) {
  std::vector<double> scratch;
  for (std::int64_t b = 0; b < g.batch; ++b)
    for (std::int64_t win = 0; win < g.window_count; ++win)
      for (std::int64_t h = 0; h < g.heads; ++h) detail::attention_forward_unit(g, qkv, out, probs, b, win, h, scratch);
}

void attention_backward(const AttentionGeometry& g, const double* qkv, const double* probs, const double* dout,
                        double* dqkv) {
  std::vector<double> scratch;
  for (std::int64_t b = 0; b < g.batch; ++b)
    for (std::int64_t win = 0; win < g.window_count; ++win)
      for (std::int64_t h = 0; h < g.heads; ++h)
        detail::attention_backward_unit(g, qkv, probs, dout, dqkv, b, win, h, scratch);
}

}  // namespace aps::kernels::serial
