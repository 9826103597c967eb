// Serial reference vs OpenMP kernels at encoder- and denoiser-sized shapes.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "advlab/kernels.hpp"

namespace k = advlab::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::gemm(k::Trans::kNo, k::Trans::kNo, n, n, n, a, b, c, false);
    else
      k::gemm_serial(k::Trans::kNo, k::Trans::kNo, n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_Conv1d(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const k::Conv1dDims d{channels, channels, 8000, 3, 2};
  const auto x = random_buffer(d.in_channels * d.length, 3);
  const auto w = random_buffer(d.out_channels * d.in_channels * d.kernel, 4);
  const auto bias = random_buffer(d.out_channels, 5);
  std::vector<double> y(d.out_channels * d.length);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv1d_forward(d, x, w, bias, y);
    else
      k::conv1d_forward_serial(d, x, w, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Conv1dBackwardWeight(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const k::Conv1dDims d{channels, channels, 8000, 3, 2};
  const auto x = random_buffer(d.in_channels * d.length, 6);
  const auto dy = random_buffer(d.out_channels * d.length, 7);
  std::vector<double> dw(d.out_channels * d.in_channels * d.kernel), db(d.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv1d_backward_weight(d, dy, x, dw, db);
    else
      k::conv1d_backward_weight_serial(d, dy, x, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_Conv1d<false>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv1d<true>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv1dBackwardWeight<false>)->Arg(32);
BENCHMARK(BM_Conv1dBackwardWeight<true>)->Arg(32);

BENCHMARK_MAIN();
