#pragma once

// Loop bodies shared by the serial and OpenMP kernel translation units. Each
// function computes one independent slab of output; the two backends differ
// only in how the outer loop over slabs is scheduled.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "autoprosam/core/kernels.hpp"

namespace aps::kernels::detail {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

// First/one-past-last output index o with 0 <= o*s - p + k < n.
inline void valid_range(std::int64_t n, std::int64_t out, std::int64_t s, std::int64_t p, std::int64_t k,
                        std::int64_t& lo, std::int64_t& hi) {
  lo = std::max<std::int64_t>(0, ceil_div(p - k, s));
  const std::int64_t top = n - 1 + p - k;
  hi = top < 0 ? 0 : std::min<std::int64_t>(out, top / s + 1);
  if (hi < lo) hi = lo;
}

// y[n, co, od, :, :] for one (n, co, od).
inline void conv3d_forward_slab(const Conv3dGeometry& g, const double* x, const double* w, const double* b, double* y,
                                std::int64_t n, std::int64_t co, std::int64_t od) {
  const auto out = g.out_size();
  const auto [D, H, W] = g.in_size;
  const auto [KD, KH, KW] = g.kernel;
  const auto [SD, SH, SW] = g.stride;
  const auto [PD, PH, PW] = g.padding;
  const std::int64_t OH = out[1], OW = out[2];
  const std::int64_t cin_g = g.in_per_group();
  const std::int64_t group = co / g.out_per_group();

  double* yslab = y + ((n * g.out_channels + co) * out[0] + od) * OH * OW;
  const double bias = b ? b[co] : 0.0;
  std::fill(yslab, yslab + OH * OW, bias);

  for (std::int64_t cig = 0; cig < cin_g; ++cig) {
    const std::int64_t ci = group * cin_g + cig;
    const double* xc = x + (n * g.in_channels + ci) * D * H * W;
    const double* wc = w + (co * cin_g + cig) * KD * KH * KW;
    for (std::int64_t kd = 0; kd < KD; ++kd) {
      const std::int64_t id = od * SD - PD + kd;
      if (id < 0 || id >= D) continue;
      for (std::int64_t kh = 0; kh < KH; ++kh) {
        std::int64_t oh_lo, oh_hi;
        valid_range(H, OH, SH, PH, kh, oh_lo, oh_hi);
        for (std::int64_t kw = 0; kw < KW; ++kw) {
          const double wv = wc[(kd * KH + kh) * KW + kw];
          std::int64_t ow_lo, ow_hi;
          valid_range(W, OW, SW, PW, kw, ow_lo, ow_hi);
          for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
            const double* xrow = xc + (id * H + (oh * SH - PH + kh)) * W - PW + kw;
            double* yrow = yslab + oh * OW;
            for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wv * xrow[ow * SW];
          }
        }
      }
    }
  }
}

// dx[n, ci, :, :, :] for one (n, ci).
inline void conv3d_backward_input_slab(const Conv3dGeometry& g, const double* dy, const double* w, double* dx,
                                       std::int64_t n, std::int64_t ci) {
  const auto out = g.out_size();
  const auto [D, H, W] = g.in_size;
  const auto [KD, KH, KW] = g.kernel;
  const auto [SD, SH, SW] = g.stride;
  const auto [PD, PH, PW] = g.padding;
  const std::int64_t OD = out[0], OH = out[1], OW = out[2];
  const std::int64_t cin_g = g.in_per_group();
  const std::int64_t cout_g = g.out_per_group();
  const std::int64_t group = ci / cin_g;
  const std::int64_t cig = ci % cin_g;

  double* dxc = dx + (n * g.in_channels + ci) * D * H * W;
  std::fill(dxc, dxc + D * H * W, 0.0);

  for (std::int64_t cog = 0; cog < cout_g; ++cog) {
    const std::int64_t co = group * cout_g + cog;
    const double* dyc = dy + (n * g.out_channels + co) * OD * OH * OW;
    const double* wc = w + (co * cin_g + cig) * KD * KH * KW;
    for (std::int64_t kd = 0; kd < KD; ++kd) {
      std::int64_t od_lo, od_hi;
      valid_range(D, OD, SD, PD, kd, od_lo, od_hi);
      for (std::int64_t kh = 0; kh < KH; ++kh) {
        std::int64_t oh_lo, oh_hi;
        valid_range(H, OH, SH, PH, kh, oh_lo, oh_hi);
        for (std::int64_t kw = 0; kw < KW; ++kw) {
          const double wv = wc[(kd * KH + kh) * KW + kw];
          std::int64_t ow_lo, ow_hi;
          valid_range(W, OW, SW, PW, kw, ow_lo, ow_hi);
          for (std::int64_t od = od_lo; od < od_hi; ++od) {
            const std::int64_t id = od * SD - PD + kd;
            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              double* dxrow = dxc + (id * H + (oh * SH - PH + kh)) * W - PW + kw;
              const double* dyrow = dyc + (od * OH + oh) * OW;
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) dxrow[ow * SW] += wv * dyrow[ow];
            }
          }
        }
      }
    }
  }
}

// dw[co, cig, :, :, :] (and db[co] when cig == 0) for one (co, cig).
inline void conv3d_backward_weight_slab(const Conv3dGeometry& g, const double* x, const double* dy, double* dw,
                                        double* db, std::int64_t co, std::int64_t cig) {
  const auto out = g.out_size();
  const auto [D, H, W] = g.in_size;
  const auto [KD, KH, KW] = g.kernel;
  const auto [SD, SH, SW] = g.stride;
  const auto [PD, PH, PW] = g.padding;
  const std::int64_t OD = out[0], OH = out[1], OW = out[2];
  const std::int64_t cin_g = g.in_per_group();
  const std::int64_t group = co / g.out_per_group();
  const std::int64_t ci = group * cin_g + cig;

  double* dwc = dw + (co * cin_g + cig) * KD * KH * KW;
  for (std::int64_t kd = 0; kd < KD; ++kd) {
    std::int64_t od_lo, od_hi;
    valid_range(D, OD, SD, PD, kd, od_lo, od_hi);
    for (std::int64_t kh = 0; kh < KH; ++kh) {
      std::int64_t oh_lo, oh_hi;
      valid_range(H, OH, SH, PH, kh, oh_lo, oh_hi);
      for (std::int64_t kw = 0; kw < KW; ++kw) {
        std::int64_t ow_lo, ow_hi;
        valid_range(W, OW, SW, PW, kw, ow_lo, ow_hi);
        double acc = 0.0;
        for (std::int64_t n = 0; n < g.batch; ++n) {
          const double* xc = x + (n * g.in_channels + ci) * D * H * W;
          const double* dyc = dy + (n * g.out_channels + co) * OD * OH * OW;
          for (std::int64_t od = od_lo; od < od_hi; ++od) {
            const std::int64_t id = od * SD - PD + kd;
            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const double* xrow = xc + (id * H + (oh * SH - PH + kh)) * W - PW + kw;
              const double* dyrow = dyc + (od * OH + oh) * OW;
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += dyrow[ow] * xrow[ow * SW];
            }
          }
        }
        dwc[(kd * KH + kh) * KW + kw] = acc;
      }
    }
  }
  if (db && cig == 0) {
    double acc = 0.0;
    const std::int64_t plane = OD * OH * OW;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const double* dyc = dy + (n * g.out_channels + co) * plane;
      for (std::int64_t i = 0; i < plane; ++i) acc += dyc[i];
    }
    db[co] = acc;
  }
}

// Row i of C.
inline void gemm_row(const GemmArgs& a, const double* A, const double* B, double* C, std::int64_t i) {
  double* crow = C + i * a.n;
  if (!a.accumulate) std::fill(crow, crow + a.n, 0.0);
  auto a_at = [&](std::int64_t p) { return a.trans_a ? A[p * a.m + i] : A[i * a.k + p]; };
  if (a.trans_b) {
    for (std::int64_t j = 0; j < a.n; ++j) {
      const double* brow = B + j * a.k;
      double acc = 0.0;
      for (std::int64_t p = 0; p < a.k; ++p) acc += a_at(p) * brow[p];
      crow[j] += acc;
    }
  } else {
    for (std::int64_t p = 0; p < a.k; ++p) {
      const double av = a_at(p);
      if (av == 0.0) continue;
      const double* brow = B + p * a.n;
      for (std::int64_t j = 0; j < a.n; ++j) crow[j] += av * brow[j];
    }
  }
}

// One (batch, window, head) attention problem. `scratch` needs window_len doubles.
inline void attention_forward_unit(const AttentionGeometry& g, const double* qkv, double* out, double* probs,
                                   std::int64_t b, std::int64_t win, std::int64_t h, std::vector<double>& scratch) {
  const std::int64_t C = g.channels, hd = g.head_dim(), L = g.window_len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::int64_t* idx = g.window_index + win * L;
  double* P = probs + (((b * g.window_count + win) * g.heads + h) * L) * L;
  std::fill(P, P + L * L, 0.0);
  scratch.assign(static_cast<std::size_t>(L), 0.0);
  auto row = [&](std::int64_t token) { return qkv + (b * g.tokens + token) * 3 * C; };

  for (std::int64_t i = 0; i < L; ++i) {
    if (idx[i] < 0) continue;
    const double* q = row(idx[i]) + h * hd;
    double mx = -INFINITY;
    for (std::int64_t j = 0; j < L; ++j) {
      if (idx[j] < 0) continue;
      const double* k = row(idx[j]) + C + h * hd;
      double s = 0.0;
      for (std::int64_t c = 0; c < hd; ++c) s += q[c] * k[c];
      s *= scale;
      scratch[static_cast<std::size_t>(j)] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::int64_t j = 0; j < L; ++j) {
      if (idx[j] < 0) continue;
      const double e = std::exp(scratch[static_cast<std::size_t>(j)] - mx);
      P[i * L + j] = e;
      z += e;
    }
    double* o = out + (b * g.tokens + idx[i]) * C + h * hd;
    std::fill(o, o + hd, 0.0);
    for (std::int64_t j = 0; j < L; ++j) {
      if (idx[j] < 0) continue;
      P[i * L + j] /= z;
      const double p = P[i * L + j];
      const double* v = row(idx[j]) + 2 * C + h * hd;
      for (std::int64_t c = 0; c < hd; ++c) o[c] += p * v[c];
    }
  }
}

inline void attention_backward_unit(const AttentionGeometry& g, const double* qkv, const double* probs,
                                    const double* dout, double* dqkv, std::int64_t b, std::int64_t win,
                                    std::int64_t h, std::vector<double>& scratch) {
  const std::int64_t C = g.channels, hd = g.head_dim(), L = g.window_len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::int64_t* idx = g.window_index + win * L;
  const double* P = probs + (((b * g.window_count + win) * g.heads + h) * L) * L;
  auto row = [&](std::int64_t token) { return qkv + (b * g.tokens + token) * 3 * C; };
  auto drow = [&](std::int64_t token) { return dqkv + (b * g.tokens + token) * 3 * C; };
  auto grow = [&](std::int64_t token) { return dout + (b * g.tokens + token) * C + h * hd; };

  // Zero this head's slice of dq/dk/dv for every real token in the window.
  for (std::int64_t i = 0; i < L; ++i) {
    if (idx[i] < 0) continue;
    double* d = drow(idx[i]);
    for (int part = 0; part < 3; ++part) std::fill(d + part * C + h * hd, d + part * C + (h + 1) * hd, 0.0);
  }
  // dV_j = sum_i P_ij dO_i
  for (std::int64_t j = 0; j < L; ++j) {
    if (idx[j] < 0) continue;
    double* dv = drow(idx[j]) + 2 * C + h * hd;
    for (std::int64_t i = 0; i < L; ++i) {
      if (idx[i] < 0) continue;
      const double p = P[i * L + j];
      const double* go = grow(idx[i]);
      for (std::int64_t c = 0; c < hd; ++c) dv[c] += p * go[c];
    }
  }
  scratch.assign(static_cast<std::size_t>(L), 0.0);
  for (std::int64_t i = 0; i < L; ++i) {
    if (idx[i] < 0) continue;
    const double* go = grow(idx[i]);
    double dot = 0.0;
    for (std::int64_t j = 0; j < L; ++j) {
      if (idx[j] < 0) continue;
      const double* v = row(idx[j]) + 2 * C + h * hd;
      double dp = 0.0;
      for (std::int64_t c = 0; c < hd; ++c) dp += go[c] * v[c];
      scratch[static_cast<std::size_t>(j)] = dp;
      dot += dp * P[i * L + j];
    }
    const double* q = row(idx[i]) + h * hd;
    double* dq = drow(idx[i]) + h * hd;
    for (std::int64_t j = 0; j < L; ++j) {
      if (idx[j] < 0) continue;
      const double ds = P[i * L + j] * (scratch[static_cast<std::size_t>(j)] - dot) * scale;
      const double* k = row(idx[j]) + C + h * hd;
      double* dk = drow(idx[j]) + C + h * hd;
      for (std::int64_t c = 0; c < hd; ++c) {
        dq[c] += ds * k[c];
        dk[c] += ds * q[c];
      }
    }
  }
}

}  // namespace aps::kernels::detail
