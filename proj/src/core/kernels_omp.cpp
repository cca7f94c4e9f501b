#include <omp.h>

#include "kernel_impl.hpp"

namespace aps::kernels::omp {

void conv3d_forward(const Conv3dGeometry& g, const double* x, const double* w, const double* b, double* y) {
  const std::int64_t od_count = g.out_size()[0];
  const std::int64_t batch = g.batch, cout = g.out_channels;
#pragma omp parallel for collapse(3) schedule(static)
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t od = 0; od < od_count; ++od) detail::conv3d_forward_slab(g, x, w, b, y, n, co, od);
}

void conv3d_backward_input(const Conv3dGeometry& g, const double* dy, const double* w, double* dx) {
  const std::int64_t batch = g.batch, cin = g.in_channels;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t ci = 0; ci < cin; ++ci) detail::conv3d_backward_input_slab(g, dy, w, dx, n, ci);
}

void conv3d_backward_weight(const Conv3dGeometry& g, const double* x, const double* dy, double* dw, double* db) {
  const std::int64_t cout = g.out_channels, cin_g = g.in_per_group();
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t cig = 0; cig < cin_g; ++cig) detail::conv3d_backward_weight_slab(g, x, dy, dw, db, co, cig);
}

void gemm(const GemmArgs& a, const double* A, const double* B, double* C) {
  const std::int64_t m = a.m;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) detail::gemm_row(a, A, B, C, i);
}

void attention_forward(const AttentionGeometry& g, const double* qkv, double* out, double* probs) {
  const std::int64_t batch = g.batch, wins = g.window_count, heads = g.heads;
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for collapse(3) schedule(static)
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t win = 0; win < wins; ++win)
        for (std::int64_t h = 0; h < heads; ++h)
          detail::attention_forward_unit(g, qkv, out, probs, b, win, h, scratch);
  }
}

void attention_backward(const AttentionGeometry& g, const double* qkv, const double* probs, const double* dout,
                        double* dqkv) {
  const std::int64_t batch = g.batch, wins = g.window_count, heads = g.heads;
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for collapse(3) schedule(static)
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t win = 0; win < wins; ++win)
        for (std::int64_t h = 0; h < heads; ++h)
          detail::attention_backward_unit(g, qkv, probs, dout, dqkv, b, win, h, scratch);
  }
}

}  // namespace aps::kernels::omp
