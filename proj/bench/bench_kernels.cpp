#include <benchmark/benchmark.h>

#include <vector>

#include "cwm/kernels.hpp"
#include "cwm/rng.hpp"

namespace {

std::vector<double> filled(std::size_t n) {
  cwm::Rng rng(n);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

cwm::kernels::ConvShape conv_shape(const benchmark::State& st) {
  // Default extractor: 9x9 conv, 32 channels, on 50x50 frames.
  return {static_cast<int>(st.range(0)), 3, 50, 50, 32, 9, 1, 4};
}

template <auto Fn>
void conv_forward(benchmark::State& st) {
  const auto s = conv_shape(st);
  const auto x = filled(static_cast<std::size_t>(s.batch) * s.in_channels * s.height * s.width);
  const auto w = filled(static_cast<std::size_t>(s.out_channels) * s.patch());
  const auto b = filled(s.out_channels);
  std::vector<double> y(static_cast<std::size_t>(s.batch) * s.out_channels * s.out_height() * s.out_width());
  for (auto _ : st) {
    Fn(s, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Fn>
void conv_backward(benchmark::State& st) {
  const auto s = conv_shape(st);
  const std::size_t nx = static_cast<std::size_t>(s.batch) * s.in_channels * s.height * s.width;
  const std::size_t nw = static_cast<std::size_t>(s.out_channels) * s.patch();
  const auto x = filled(nx), w = filled(nw);
  const auto dy = filled(static_cast<std::size_t>(s.batch) * s.out_channels * s.out_height() * s.out_width());
  std::vector<double> dx(nx), dw(nw), db(s.out_channels);
  for (auto _ : st) {
    Fn(s, x, w, dy, dx, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <auto Fn>
void matmul(benchmark::State& st) {
  const int m = static_cast<int>(st.range(0)), k = 512, n = 512;
  const auto a = filled(static_cast<std::size_t>(m) * k), b = filled(static_cast<std::size_t>(n) * k);
  std::vector<double> c(static_cast<std::size_t>(m) * n);
  for (auto _ : st) {
    Fn(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
}

}  // namespace

BENCHMARK(conv_forward<cwm::kernels::serial::conv2d_forward>)->Name("conv_forward/serial")->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_forward<cwm::kernels::omp::conv2d_forward>)->Name("conv_forward/omp")->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<cwm::kernels::serial::conv2d_backward>)->Name("conv_backward/serial")->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<cwm::kernels::omp::conv2d_backward>)->Name("conv_backward/omp")->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(matmul<cwm::kernels::serial::matmul_nt>)->Name("matmul_nt/serial")->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(matmul<cwm::kernels::omp::matmul_nt>)->Name("matmul_nt/omp")->Arg(100)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
