#include "autoprosam/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/core/kernels.hpp"

namespace aps::ops {

using detail::make_result;

namespace {

void require_rank(const Var& x, std::int64_t rank, const char* op) {
  if (static_cast<std::int64_t>(x.shape().size()) != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(x.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor out = a.value() + b.value();
  auto na = a.node(), nb = b.node();
  return make_result(std::move(out), {a, b}, [na, nb](const Tensor& g) {
    if (na->requires_grad) na->accumulate_grad(g);
    if (nb->requires_grad) nb->accumulate_grad(g);
  });
}

Var add_broadcast(const Var& x, const Var& y) {
  const std::int64_t n = x.numel(), m = y.numel();
  if (m == 0 || n % m != 0) {
    throw ShapeError("add_broadcast: " + shape_to_string(y.shape()) + " does not tile " + shape_to_string(x.shape()));
  }
  Tensor out = x.value();
  const double* yv = y.value().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] += yv[i % m];
  auto nx = x.node(), ny = y.node();
  return make_result(std::move(out), {x, y}, [nx, ny, n, m](const Tensor& g) {
    if (nx->requires_grad) nx->accumulate_grad(g);
    if (ny->requires_grad) {
      Tensor gy(ny->value.shape());
      for (std::int64_t i = 0; i < n; ++i) gy[i % m] += g[i];
      ny->accumulate_grad(gy);
    }
  });
}

Var scale(const Var& x, double s) {
  auto nx = x.node();
  return make_result(x.value() * s, {x}, [nx, s](const Tensor& g) { nx->accumulate_grad(g * s); });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (auto v : x.value().values()) total += v;
  auto nx = x.node();
  return make_result(Tensor({1}, total), {x}, [nx](const Tensor& g) {
    nx->accumulate_grad(Tensor(nx->value.shape(), g[0]));
  });
}

Var reshape(const Var& x, Shape shape) {
  auto nx = x.node();
  return make_result(x.value().reshaped(std::move(shape)), {x},
                     [nx](const Tensor& g) { nx->accumulate_grad(g.reshaped(nx->value.shape())); });
}

Var matmul(const Var& x, const Var& w) {
  require_rank(x, 2, "matmul");
  require_rank(w, 2, "matmul");
  const std::int64_t M = x.dim(0), K = x.dim(1), N = w.dim(1);
  if (w.dim(0) != K) {
    throw ShapeError("matmul: inner dims differ " + shape_to_string(x.shape()) + " x " + shape_to_string(w.shape()));
  }
  Tensor out({M, N});
  kernels::gemm({M, N, K, false, false, false}, x.value().data(), w.value().data(), out.data());
  auto nx = x.node(), nw = w.node();
  return make_result(std::move(out), {x, w}, [nx, nw, M, N, K](const Tensor& g) {
    if (nx->requires_grad) {
      Tensor gx({M, K});
      kernels::gemm({M, K, N, false, true, false}, g.data(), nw->value.data(), gx.data());
      nx->accumulate_grad(gx);
    }
    if (nw->requires_grad) {
      Tensor gw({K, N});
      kernels::gemm({K, N, M, true, false, false}, nx->value.data(), g.data(), gw.data());
      nw->accumulate_grad(gw);
    }
  });
}

Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias) {
  require_rank(weight, 2, "linear");
  const std::int64_t N = weight.dim(0), K = weight.dim(1);
  if (x.shape().empty() || x.shape().back() != K) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                     shape_to_string(weight.shape()));
  }
  const std::int64_t M = x.numel() / K;
  Shape out_shape = x.shape();
  out_shape.back() = N;
  Tensor out(out_shape);
  kernels::gemm({M, N, K, false, true, false}, x.value().data(), weight.value().data(), out.data());
  if (bias) {
    const double* b = bias->value().data();
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < N; ++j) out[i * N + j] += b[j];
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  auto nx = x.node(), nw = weight.node();
  auto nb = bias ? bias->node() : nullptr;
  return make_result(std::move(out), std::move(inputs), [nx, nw, nb, M, N, K](const Tensor& g) {
    if (nx->requires_grad) {
      Tensor gx(nx->value.shape());
      kernels::gemm({M, K, N, false, false, false}, g.data(), nw->value.data(), gx.data());
      nx->accumulate_grad(gx);
    }
    if (nw->requires_grad) {
      Tensor gw({N, K});
      kernels::gemm({N, K, M, true, false, false}, g.data(), nx->value.data(), gw.data());
      nw->accumulate_grad(gw);
    }
    if (nb && nb->requires_grad) {
      Tensor gb({N});
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j) gb[j] += g[i * N + j];
      nb->accumulate_grad(gb);
    }
  });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out = x.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  auto nx = x.node();
  return make_result(std::move(out), {x}, [nx](const Tensor& g) {
    Tensor gx(g.shape());
    const auto& xv = nx->value;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] = g[i] * (cdf + v * pdf);
    }
    nx->accumulate_grad(gx);
  });
}

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::Gelu:
      return gelu(x);
    case Activation::Identity:
      return x;
  }
  return x;
}

Var channel_norm(const Var& x, const Var& gamma, const Var& beta, std::int64_t axis) {
  const auto& shape = x.shape();
  if (axis < 0) axis += static_cast<std::int64_t>(shape.size());
  if (axis < 0 || axis >= static_cast<std::int64_t>(shape.size())) throw ShapeError("channel_norm: bad axis");
  const std::int64_t C = shape[static_cast<std::size_t>(axis)];
  if (gamma.numel() != C || beta.numel() != C) {
    throw ShapeError("channel_norm: affine size does not match " + std::to_string(C) + " channels");
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t a = 0; a < axis; ++a) outer *= shape[static_cast<std::size_t>(a)];
  for (std::size_t a = static_cast<std::size_t>(axis) + 1; a < shape.size(); ++a) inner *= shape[a];

  Tensor out(shape);
  Tensor xhat(shape);
  Tensor inv_std({outer * inner});
  const double* xv = x.value().data();
  const double* gv = gamma.value().data();
  const double* bv = beta.value().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * C * inner + i;
      double mean = 0.0;
      for (std::int64_t c = 0; c < C; ++c) mean += xv[base + c * inner];
      mean /= static_cast<double>(C);
      double var = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        const double d = xv[base + c * inner] - mean;
        var += d * d;
      }
      var /= static_cast<double>(C);
      const double is = 1.0 / std::sqrt(var + kNormEps);
      inv_std[o * inner + i] = is;
      for (std::int64_t c = 0; c < C; ++c) {
        const std::int64_t k = base + c * inner;
        xhat[k] = (xv[k] - mean) * is;
        out[k] = xhat[k] * gv[c] + bv[c];
      }
    }
  }
  auto nx = x.node(), ng = gamma.node(), nb = beta.node();
  return make_result(std::move(out), {x, gamma, beta},
                     [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std), outer, inner, C](
                         const Tensor& g) {
                       const double* gv = ng->value.data();
                       Tensor gx, ggamma({C}), gbeta({C});
                       if (nx->requires_grad) gx = Tensor(nx->value.shape());
                       for (std::int64_t o = 0; o < outer; ++o) {
                         for (std::int64_t i = 0; i < inner; ++i) {
                           const std::int64_t base = o * C * inner + i;
                           double m1 = 0.0, m2 = 0.0;
                           for (std::int64_t c = 0; c < C; ++c) {
                             const std::int64_t k = base + c * inner;
                             ggamma[c] += g[k] * xhat[k];
                             gbeta[c] += g[k];
                             const double dxh = g[k] * gv[c];
                             m1 += dxh;
                             m2 += dxh * xhat[k];
                           }
                           if (!nx->requires_grad) continue;
                           m1 /= static_cast<double>(C);
                           m2 /= static_cast<double>(C);
                           const double is = inv_std[o * inner + i];
                           for (std::int64_t c = 0; c < C; ++c) {
                             const std::int64_t k = base + c * inner;
                             gx[k] = is * (g[k] * gv[c] - m1 - xhat[k] * m2);
                           }
                         }
                       }
                       if (nx->requires_grad) nx->accumulate_grad(gx);
                       if (ng->requires_grad) ng->accumulate_grad(ggamma.reshaped(ng->value.shape()));
                       if (nb->requires_grad) nb->accumulate_grad(gbeta.reshaped(nb->value.shape()));
                     });
}

WindowPartition WindowPartition::build(const Index3& grid, const Index3& window_size) {
  WindowPartition p;
  p.grid = grid;
  Index3 counts{};
  for (int a = 0; a < 3; ++a) {
    if (grid[a] < 1 || window_size[a] < 1) throw ShapeError("window partition: sizes must be positive");
    p.window[a] = std::min(window_size[a], grid[a]);
    p.clamped = p.clamped || p.window[a] != window_size[a];
    counts[a] = (grid[a] + p.window[a] - 1) / p.window[a];
  }
  p.window_count = counts[0] * counts[1] * counts[2];
  p.window_len = p.window[0] * p.window[1] * p.window[2];
  p.index.assign(static_cast<std::size_t>(p.window_count * p.window_len), -1);
  std::int64_t win = 0;
  for (std::int64_t wd = 0; wd < counts[0]; ++wd)
    for (std::int64_t wh = 0; wh < counts[1]; ++wh)
      for (std::int64_t ww = 0; ww < counts[2]; ++ww, ++win) {
        std::int64_t slot = 0;
        for (std::int64_t d = 0; d < p.window[0]; ++d)
          for (std::int64_t h = 0; h < p.window[1]; ++h)
            for (std::int64_t w = 0; w < p.window[2]; ++w, ++slot) {
              const std::int64_t gd = wd * p.window[0] + d, gh = wh * p.window[1] + h, gw = ww * p.window[2] + w;
              if (gd < grid[0] && gh < grid[1] && gw < grid[2]) {
                p.index[static_cast<std::size_t>(win * p.window_len + slot)] = (gd * grid[1] + gh) * grid[2] + gw;
              }
            }
      }
  return p;
}

Var window_attention(const Var& qkv, const WindowPartition& part, std::int64_t heads, Tensor* probs_out) {
  require_rank(qkv, 3, "window_attention");
  const std::int64_t B = qkv.dim(0), N = qkv.dim(1), C3 = qkv.dim(2);
  if (C3 % 3 != 0 || (C3 / 3) % heads != 0) throw ShapeError("window_attention: channels not divisible by heads");
  if (N != part.grid[0] * part.grid[1] * part.grid[2]) {
    throw ShapeError("window_attention: token count " + std::to_string(N) + " does not match grid");
  }
  const std::int64_t C = C3 / 3;
  auto index = std::make_shared<std::vector<std::int64_t>>(part.index);
  kernels::AttentionGeometry geom{B, N, C, heads, part.window_count, part.window_len, index->data()};
  Tensor out({B, N, C});
  Tensor probs({B, part.window_count, heads, part.window_len, part.window_len});
  kernels::attention_forward(geom, qkv.value().data(), out.data(), probs.data());
  if (probs_out) *probs_out = probs;
  auto nq = qkv.node();
  return make_result(std::move(out), {qkv}, [nq, geom, index, probs = std::move(probs)](const Tensor& g) {
    Tensor gq(nq->value.shape());
    kernels::attention_backward(geom, nq->value.data(), probs.data(), g.data(), gq.data());
    nq->accumulate_grad(gq);
  });
}

namespace {
// [B, R, S] -> [B, S, R]
Tensor transpose_last2(const Tensor& x, std::int64_t B, std::int64_t R, std::int64_t S) {
  Tensor out({B, S, R});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t r = 0; r < R; ++r)
      for (std::int64_t s = 0; s < S; ++s) out[(b * S + s) * R + r] = x[(b * R + r) * S + s];
  return out;
}
}  // namespace

Var tokens_to_channels(const Var& tokens, const Index3& grid) {
  require_rank(tokens, 3, "tokens_to_channels");
  const std::int64_t B = tokens.dim(0), N = tokens.dim(1), C = tokens.dim(2);
  if (N != grid[0] * grid[1] * grid[2]) throw ShapeError("tokens_to_channels: token count does not match grid");
  Tensor out = transpose_last2(tokens.value(), B, N, C).reshaped({B, C, grid[0], grid[1], grid[2]});
  auto nt = tokens.node();
  return make_result(std::move(out), {tokens}, [nt, B, N, C](const Tensor& g) {
    nt->accumulate_grad(transpose_last2(g, B, C, N));
  });
}

Var channels_to_tokens(const Var& map) {
  require_rank(map, 5, "channels_to_tokens");
  const std::int64_t B = map.dim(0), C = map.dim(1), N = map.dim(2) * map.dim(3) * map.dim(4);
  Tensor out = transpose_last2(map.value(), B, C, N);
  auto nm = map.node();
  return make_result(std::move(out), {map}, [nm, B, N, C](const Tensor& g) {
    nm->accumulate_grad(transpose_last2(g, B, N, C).reshaped(nm->value.shape()));
  });
}

Var conv3d(const Var& x, const Var& weight, const std::optional<Var>& bias, const Index3& stride,
           const Index3& padding, std::int64_t groups) {
  require_rank(x, 5, "conv3d");
  require_rank(weight, 5, "conv3d weight");
  kernels::Conv3dGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.out_channels = weight.dim(0);
  g.groups = groups;
  g.in_size = {x.dim(2), x.dim(3), x.dim(4)};
  g.kernel = {weight.dim(2), weight.dim(3), weight.dim(4)};
  g.stride = stride;
  g.padding = padding;
  if (groups < 1 || g.in_channels % groups != 0 || g.out_channels % groups != 0 ||
      weight.dim(1) != g.in_channels / groups) {
    throw ShapeError("conv3d: weight " + shape_to_string(weight.shape()) + " incompatible with input " +
                     shape_to_string(x.shape()) + " and groups=" + std::to_string(groups));
  }
  if (bias && bias->numel() != g.out_channels) throw ShapeError("conv3d: bias size mismatch");
  const auto o = g.out_size();
  for (auto v : o)
    if (v < 1) throw ShapeError("conv3d: input " + shape_to_string(x.shape()) + " too small for kernel");
  Tensor out({g.batch, g.out_channels, o[0], o[1], o[2]});
  kernels::conv3d_forward(g, x.value().data(), weight.value().data(), bias ? bias->value().data() : nullptr,
                          out.data());
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  auto nx = x.node(), nw = weight.node();
  auto nb = bias ? bias->node() : nullptr;
  return make_result(std::move(out), std::move(inputs), [nx, nw, nb, g](const Tensor& grad) {
    if (nx->requires_grad) {
      Tensor gx(nx->value.shape());
      kernels::conv3d_backward_input(g, grad.data(), nw->value.data(), gx.data());
      nx->accumulate_grad(gx);
    }
    const bool need_b = nb && nb->requires_grad;
    if (nw->requires_grad || need_b) {
      Tensor gw(nw->value.shape());
      Tensor gb({g.out_channels});
      kernels::conv3d_backward_weight(g, nx->value.data(), grad.data(), gw.data(), gb.data());
      if (nw->requires_grad) nw->accumulate_grad(gw);
      if (need_b) nb->accumulate_grad(gb.reshaped(nb->value.shape()));
    }
  });
}

Var upsample_nearest(const Var& x, const Index3& f) {
  require_rank(x, 5, "upsample_nearest");
  const std::int64_t BC = x.dim(0) * x.dim(1);
  const Index3 in{x.dim(2), x.dim(3), x.dim(4)};
  const Index3 out{in[0] * f[0], in[1] * f[1], in[2] * f[2]};
  Tensor y({x.dim(0), x.dim(1), out[0], out[1], out[2]});
  const std::int64_t in_vol = in[0] * in[1] * in[2], out_vol = out[0] * out[1] * out[2];
  auto src_of = [=](std::int64_t d, std::int64_t h, std::int64_t w) {
    return ((d / f[0]) * in[1] + h / f[1]) * in[2] + w / f[2];
  };
  for (std::int64_t c = 0; c < BC; ++c)
    for (std::int64_t d = 0; d < out[0]; ++d)
      for (std::int64_t h = 0; h < out[1]; ++h)
        for (std::int64_t w = 0; w < out[2]; ++w)
          y[c * out_vol + (d * out[1] + h) * out[2] + w] = x.value()[c * in_vol + src_of(d, h, w)];
  auto nx = x.node();
  return make_result(std::move(y), {x}, [nx, BC, in_vol, out_vol, out, src_of](const Tensor& g) {
    Tensor gx(nx->value.shape());
    for (std::int64_t c = 0; c < BC; ++c)
      for (std::int64_t d = 0; d < out[0]; ++d)
        for (std::int64_t h = 0; h < out[1]; ++h)
          for (std::int64_t w = 0; w < out[2]; ++w)
            gx[c * in_vol + src_of(d, h, w)] += g[c * out_vol + (d * out[1] + h) * out[2] + w];
    nx->accumulate_grad(gx);
  });
}

namespace {
struct AxisTaps {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> t;
};

AxisTaps linear_taps(std::int64_t in, std::int64_t out) {
  AxisTaps taps;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    taps.lo.push_back(i0);
    taps.hi.push_back(std::min(i0 + 1, in - 1));
    taps.t.push_back(src - static_cast<double>(i0));
  }
  return taps;
}
}  // namespace

Var resize_trilinear(const Var& x, const Index3& out) {
  require_rank(x, 5, "resize_trilinear");
  const std::int64_t BC = x.dim(0) * x.dim(1);
  const Index3 in{x.dim(2), x.dim(3), x.dim(4)};
  auto taps = std::make_shared<std::array<AxisTaps, 3>>(
      std::array<AxisTaps, 3>{linear_taps(in[0], out[0]), linear_taps(in[1], out[1]), linear_taps(in[2], out[2])});
  const std::int64_t in_vol = in[0] * in[1] * in[2], out_vol = out[0] * out[1] * out[2];

  // Visits the eight (source index, weight) pairs of every output voxel.
  auto visit = [in, out, taps, in_vol, out_vol, BC](auto&& fn) {
    const auto& [td, th, tw] = *taps;
    for (std::int64_t c = 0; c < BC; ++c)
      for (std::int64_t d = 0; d < out[0]; ++d)
        for (std::int64_t h = 0; h < out[1]; ++h)
          for (std::int64_t w = 0; w < out[2]; ++w) {
            const std::int64_t oi = c * out_vol + (d * out[1] + h) * out[2] + w;
            const std::int64_t ds[2] = {td.lo[d], td.hi[d]}, hs[2] = {th.lo[h], th.hi[h]}, ws[2] = {tw.lo[w], tw.hi[w]};
            const double wd[2] = {1 - td.t[d], td.t[d]}, wh[2] = {1 - th.t[h], th.t[h]},
                         ww[2] = {1 - tw.t[w], tw.t[w]};
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int e = 0; e < 2; ++e)
                  fn(oi, c * in_vol + (ds[a] * in[1] + hs[b]) * in[2] + ws[e], wd[a] * wh[b] * ww[e]);
          }
  };
  Tensor y({x.dim(0), x.dim(1), out[0], out[1], out[2]});
  const Tensor& xv = x.value();
  visit([&](std::int64_t oi, std::int64_t ii, double wt) { y[oi] += wt * xv[ii]; });
  auto nx = x.node();
  return make_result(std::move(y), {x}, [nx, visit](const Tensor& g) {
    Tensor gx(nx->value.shape());
    visit([&](std::int64_t oi, std::int64_t ii, double wt) { gx[ii] += wt * g[oi]; });
    nx->accumulate_grad(gx);
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const auto& ref = parts.front().shape();
  if (ref.size() < 2) throw ShapeError("concat_channels: rank must be >= 2");
  const std::int64_t B = ref[0];
  const std::int64_t spatial = parts.front().numel() / (ref[0] * ref[1]);
  std::int64_t total_c = 0;
  std::vector<std::int64_t> channels;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != ref.size() || s[0] != B || !std::equal(s.begin() + 2, s.end(), ref.begin() + 2)) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_to_string(s) + " vs " + shape_to_string(ref));
    }
    channels.push_back(s[1]);
    total_c += s[1];
  }
  Shape out_shape = ref;
  out_shape[1] = total_c;
  Tensor out(out_shape);
  std::int64_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::int64_t b = 0; b < B; ++b)
      std::copy_n(v.data() + b * channels[k] * spatial, channels[k] * spatial,
                  out.data() + (b * total_c + c0) * spatial);
    c0 += channels[k];
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result(std::move(out), parts, [nodes, channels, B, spatial, total_c](const Tensor& g) {
    std::int64_t c0 = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        Tensor gk(nodes[k]->value.shape());
        for (std::int64_t b = 0; b < B; ++b)
          std::copy_n(g.data() + (b * total_c + c0) * spatial, channels[k] * spatial,
                      gk.data() + b * channels[k] * spatial);
        nodes[k]->accumulate_grad(gk);
      }
      c0 += channels[k];
    }
  });
}

Var softmax_channels(const Var& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ShapeError("softmax_channels: rank must be >= 2");
  const std::int64_t B = s[0], K = s[1], S = x.numel() / (B * K);
  Tensor y(s);
  const Tensor& xv = x.value();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < S; ++i) {
      const std::int64_t base = b * K * S + i;
      double mx = -INFINITY;
      for (std::int64_t k = 0; k < K; ++k) mx = std::max(mx, xv[base + k * S]);
      double z = 0.0;
      for (std::int64_t k = 0; k < K; ++k) {
        y[base + k * S] = std::exp(xv[base + k * S] - mx);
        z += y[base + k * S];
      }
      for (std::int64_t k = 0; k < K; ++k) y[base + k * S] /= z;
    }
  auto nx = x.node();
  Tensor saved = y;
  return make_result(std::move(y), {x}, [nx, saved = std::move(saved), B, K, S](const Tensor& g) {
    Tensor gx(saved.shape());
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < S; ++i) {
        const std::int64_t base = b * K * S + i;
        double dot = 0.0;
        for (std::int64_t k = 0; k < K; ++k) dot += g[base + k * S] * saved[base + k * S];
        for (std::int64_t k = 0; k < K; ++k) gx[base + k * S] = saved[base + k * S] * (g[base + k * S] - dot);
      }
    nx->accumulate_grad(gx);
  });
}

Var positional_grid(const Var& planar, const Var& depth) {
  require_rank(planar, 3, "positional_grid planar table");
  require_rank(depth, 2, "positional_grid depth table");
  const std::int64_t C = planar.dim(0), H = planar.dim(1), W = planar.dim(2), D = depth.dim(1);
  if (depth.dim(0) != C) throw ShapeError("positional_grid: channel mismatch between tables");
  Tensor out({D * H * W, C});
  const Tensor& p = planar.value();
  const Tensor& t = depth.value();
  for (std::int64_t d = 0; d < D; ++d)
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w)
        for (std::int64_t c = 0; c < C; ++c)
          out[((d * H + h) * W + w) * C + c] = p[(c * H + h) * W + w] + t[c * D + d];
  auto np = planar.node(), nd = depth.node();
  return make_result(std::move(out), {planar, depth}, [np, nd, C, H, W, D](const Tensor& g) {
    Tensor gp(np->value.shape()), gd(nd->value.shape());
    for (std::int64_t d = 0; d < D; ++d)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w)
          for (std::int64_t c = 0; c < C; ++c) {
            const double v = g[((d * H + h) * W + w) * C + c];
            gp[(c * H + h) * W + w] += v;
            gd[c * D + d] += v;
          }
    if (np->requires_grad) np->accumulate_grad(gp);
    if (nd->requires_grad) nd->accumulate_grad(gd);
  });
}

}  // namespace aps::ops
