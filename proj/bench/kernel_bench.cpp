// Serial reference kernels against their OpenMP counterparts.
//
//   kernel_bench --benchmark_filter=Gemm

#include <benchmark/benchmark.h>

#include <vector>

#include "aerialvg/kernels.hpp"
#include "aerialvg/rng.hpp"

using namespace aerialvg;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  RngState rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct Serial {
  static void gemm(const kernels::GemmShape& s, const double* a, const double* b, double* c) {
    kernels::serial::gemm(s, a, b, c, false);
  }
  static void conv(const kernels::ConvShape& s, const double* x, const double* k, double* y) {
    kernels::serial::conv2d_down(s, x, k, y);
  }
  static void resize(const kernels::ResizeShape& s, const double* x, double* y) {
    kernels::serial::bilinear_resize(s, x, y);
  }
  static void softmax(std::size_t r, std::size_t c, const double* x, double* y) { kernels::serial::softmax_rows(r, c, x, y); }
};

struct Omp {
  static void gemm(const kernels::GemmShape& s, const double* a, const double* b, double* c) {
    kernels::omp::gemm(s, a, b, c, false);
  }
  static void conv(const kernels::ConvShape& s, const double* x, const double* k, double* y) {
    kernels::omp::conv2d_down(s, x, k, y);
  }
  static void resize(const kernels::ResizeShape& s, const double* x, double* y) {
    kernels::omp::bilinear_resize(s, x, y);
  }
  static void softmax(std::size_t r, std::size_t c, const double* x, double* y) { kernels::omp::softmax_rows(r, c, x, y); }
};

// Square products; the model's largest is [340 x 32] x [32 x 340].
template <typename K>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    K::gemm({n, n, n, false, false}, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

// Depthwise strided convolution over T token maps, as in the top-level anchor.
template <typename K>
void BM_Conv(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const std::size_t channels = 16, stride = 8;
  const kernels::ConvShape s{channels, side, side, stride, false};
  const auto x = random_buffer(channels * side * side, 3), k = random_buffer(channels * stride * stride, 4);
  std::vector<double> y(channels * (side / stride) * (side / stride));
  for (auto _ : state) {
    K::conv(s, x.data(), k.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <typename K>
void BM_Resize(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const kernels::ResizeShape s{16, side / 2, side / 2, side, side};
  const auto x = random_buffer(16 * (side / 2) * (side / 2), 5);
  std::vector<double> y(16 * side * side);
  for (auto _ : state) {
    K::resize(s, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <typename K>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 64;
  const auto x = random_buffer(rows * cols, 6);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    K::softmax(rows, cols, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<Serial>)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<Omp>)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Conv<Serial>)->Arg(64)->Arg(256);
BENCHMARK(BM_Conv<Omp>)->Arg(64)->Arg(256);
BENCHMARK(BM_Resize<Serial>)->Arg(16)->Arg(128);
BENCHMARK(BM_Resize<Omp>)->Arg(16)->Arg(128);
BENCHMARK(BM_Softmax<Serial>)->Arg(340)->Arg(4096);
BENCHMARK(BM_Softmax<Omp>)->Arg(340)->Arg(4096);

BENCHMARK_MAIN();
