// Serial reference kernels against their OpenMP counterparts at the shapes
// the model runs: patch projections, temporal blocks over a batch, and the
// attention of the spatial and temporal encoders.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mmv/diffcore/kernels.hpp"

namespace k = mmv::kernels;

namespace {

std::vector<float> filled(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = filled(m * kk, 1), b = filled(kk * n, 2), bias = filled(n, 3);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::matmul<float>(a, b, bias, c, m, kk, n);
    else
      k::serial::matmul<float>(a, b, bias, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

template <bool Parallel>
void BM_matmul_backward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = filled(m * kk, 1), b = filled(kk * n, 2), g = filled(m * n, 3);
  std::vector<float> da(m * kk), db(kk * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::matmul_grad_a<float>(g, b, da, m, kk, n);
      k::parallel::matmul_grad_b<float>(a, g, db, m, kk, n);
    } else {
      k::serial::matmul_grad_a<float>(g, b, da, m, kk, n);
      k::serial::matmul_grad_b<float>(a, g, db, m, kk, n);
    }
    benchmark::DoNotOptimize(da.data());
    benchmark::DoNotOptimize(db.data());
  }
}

template <bool Parallel>
void BM_attention(benchmark::State& state) {
  const k::AttentionDims d{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                           static_cast<std::size_t>(state.range(2)), static_cast<std::size_t>(state.range(3))};
  const std::size_t rows = d.groups * d.seq, w = d.width();
  const auto q = filled(rows * w, 1), kk = filled(rows * w, 2), v = filled(rows * w, 3), g = filled(rows * w, 4);
  std::vector<std::uint8_t> mask(rows, 1);
  for (std::size_t i = 0; i < rows; i += 3) mask[i] = 0;
  std::vector<float> out(rows * w), probs(d.groups * d.heads * d.seq * d.seq);
  std::vector<float> gq(rows * w), gk(rows * w), gv(rows * w);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::attention_forward<float>(q, kk, v, mask, out, probs, d);
      k::parallel::attention_backward<float>(q, kk, v, mask, probs, g, gq, gk, gv, d);
    } else {
      k::serial::attention_forward<float>(q, kk, v, mask, out, probs, d);
      k::serial::attention_backward<float>(q, kk, v, mask, probs, g, gq, gk, gv, d);
    }
    benchmark::DoNotOptimize(gq.data());
  }
}

// m, k, n: one batch of 4 embryos x 30 frames x 16 patches through a 64->16
// projection; a temporal batch of 4 x 33 tokens through a 32->128 MLP; a
// square 256 product.
#define MATMUL_SHAPES ->Args({1920, 64, 16})->Args({132, 32, 128})->Args({256, 256, 256})
BENCHMARK(BM_matmul<false>) MATMUL_SHAPES;
BENCHMARK(BM_matmul<true>) MATMUL_SHAPES;
BENCHMARK(BM_matmul_backward<false>) MATMUL_SHAPES;
BENCHMARK(BM_matmul_backward<true>) MATMUL_SHAPES;

// groups, seq, heads, head_dim: spatial (120 frames of 17 tokens), temporal
// (4 embryos of 93 tokens), and a long single sequence.
#define ATTENTION_SHAPES ->Args({120, 17, 2, 8})->Args({4, 93, 4, 8})->Args({1, 512, 4, 16})
BENCHMARK(BM_attention<false>) ATTENTION_SHAPES;
BENCHMARK(BM_attention<true>) ATTENTION_SHAPES;

}  // namespace

BENCHMARK_MAIN();
