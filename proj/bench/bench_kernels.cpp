// Serial reference vs OpenMP kernels on model-sized shapes.
#include <benchmark/benchmark.h>

#include <numeric>
#include <random>
#include <vector>

#include "autoprosam/core/kernels.hpp"

namespace k = aps::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// 3x3x3 conv, C -> C on a side^3 grid
k::Conv3dGeometry conv_geometry(std::int64_t channels, std::int64_t side) {
  k::Conv3dGeometry g;
  g.in_channels = g.out_channels = channels;
  g.in_size = {side, side, side};
  g.kernel = {3, 3, 3};
  g.padding = {1, 1, 1};
  return g;
}

template <bool Omp>
void BM_Conv3d(benchmark::State& state) {
  const auto g = conv_geometry(state.range(0), state.range(1));
  const auto o = g.out_size();
  const auto x = random_buffer(static_cast<std::size_t>(g.in_channels * g.in_size[0] * g.in_size[1] * g.in_size[2]), 1);
  const auto w = random_buffer(static_cast<std::size_t>(g.out_channels * g.in_per_group() * g.kernel_volume()), 2);
  const auto b = random_buffer(static_cast<std::size_t>(g.out_channels), 3);
  std::vector<double> y(static_cast<std::size_t>(g.out_channels * o[0] * o[1] * o[2]));
  for (auto _ : state) {
    if constexpr (Omp) {
      k::omp::conv3d_forward(g, x.data(), w.data(), b.data(), y.data());
    } else {
      k::serial::conv3d_forward(g, x.data(), w.data(), b.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(y.size()) * g.in_channels * 27);
}

template <bool Omp>
void BM_Gemm(benchmark::State& state) {
  k::GemmArgs a;
  a.m = state.range(0);
  a.n = state.range(1);
  a.k = state.range(2);
  const auto A = random_buffer(static_cast<std::size_t>(a.m * a.k), 4);
  const auto B = random_buffer(static_cast<std::size_t>(a.k * a.n), 5);
  std::vector<double> C(static_cast<std::size_t>(a.m * a.n));
  for (auto _ : state) {
    if constexpr (Omp) {
      k::omp::gemm(a, A.data(), B.data(), C.data());
    } else {
      k::serial::gemm(a, A.data(), B.data(), C.data());
    }
    benchmark::DoNotOptimize(C.data());
  }
  state.SetItemsProcessed(state.iterations() * a.m * a.n * a.k);
}

// windows of window_len consecutive tokens
template <bool Omp>
void BM_Attention(benchmark::State& state) {
  k::AttentionGeometry g;
  g.channels = state.range(0);
  g.heads = 4;
  g.window_len = state.range(1);
  g.tokens = state.range(2);
  g.window_count = g.tokens / g.window_len;
  std::vector<std::int64_t> index(static_cast<std::size_t>(g.tokens));
  std::iota(index.begin(), index.end(), 0);
  g.window_index = index.data();
  const auto qkv = random_buffer(static_cast<std::size_t>(g.tokens * 3 * g.channels), 6);
  std::vector<double> out(static_cast<std::size_t>(g.tokens * g.channels));
  std::vector<double> probs(static_cast<std::size_t>(g.probs_size()));
  for (auto _ : state) {
    if constexpr (Omp) {
      k::omp::attention_forward(g, qkv.data(), out.data(), probs.data());
    } else {
      k::serial::attention_forward(g, qkv.data(), out.data(), probs.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Conv3d<false>)->Name("conv3d/serial")->Args({8, 32})->Args({32, 16});
BENCHMARK(BM_Conv3d<true>)->Name("conv3d/omp")->Args({8, 32})->Args({32, 16});
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Args({64, 96, 32})->Args({512, 128, 128});
BENCHMARK(BM_Gemm<true>)->Name("gemm/omp")->Args({64, 96, 32})->Args({512, 128, 128});
BENCHMARK(BM_Attention<false>)->Name("attention/serial")->Args({32, 64, 64})->Args({64, 64, 512});
BENCHMARK(BM_Attention<true>)->Name("attention/omp")->Args({32, 64, 64})->Args({64, 64, 512});

BENCHMARK_MAIN();
