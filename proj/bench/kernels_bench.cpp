// Serial reference kernels against their OpenMP versions. Thread count comes
// from XMAR_THREADS (default: the OpenMP runtime's choice).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "xmar/kernels.hpp"
#include "xmar/runtime.hpp"

namespace k = xmar::kernels;

namespace {

std::vector<float> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

// 3x3 same-padding conv geometry on a square image.
k::Conv2dGeometry conv_geometry(k::Index batch, k::Index side, k::Index in_c, k::Index out_c) {
  k::Conv2dGeometry g;
  g.batch = batch;
  g.in_h = g.in_w = side;
  g.in_c = in_c;
  g.k_h = g.k_w = 3;
  g.out_c = out_c;
  g.pad_top = g.pad_left = 1;
  g.out_h = g.out_w = side;
  return g;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const k::Index n = state.range(0);
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::omp::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    } else {
      k::serial::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

template <bool Parallel>
void BM_gemm_trans_b(benchmark::State& state) {
  const k::Index n = state.range(0);
  const auto a = random_buffer(n * n, 3), b = random_buffer(n * n, 4);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::omp::gemm(false, true, n, n, n, a.data(), b.data(), c.data(), false);
    } else {
      k::serial::gemm(false, true, n, n, n, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

template <bool Parallel>
void BM_im2col(benchmark::State& state) {
  const auto g = conv_geometry(8, state.range(0), 16, 32);
  const auto x = random_buffer(g.batch * g.in_h * g.in_w * g.in_c, 5);
  std::vector<float> col(g.rows() * g.patch_len());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::omp::im2col(g, x.data(), col.data());
    } else {
      k::serial::im2col(g, x.data(), col.data());
    }
    benchmark::DoNotOptimize(col.data());
  }
}

template <bool Parallel>
void BM_col2im(benchmark::State& state) {
  const auto g = conv_geometry(8, state.range(0), 16, 32);
  const auto col = random_buffer(g.rows() * g.patch_len(), 6);
  std::vector<float> dx(g.batch * g.in_h * g.in_w * g.in_c);
  for (auto _ : state) {
    std::fill(dx.begin(), dx.end(), 0.f);
    if constexpr (Parallel) {
      k::omp::col2im(g, col.data(), dx.data());
    } else {
      k::serial::col2im(g, col.data(), dx.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

// Forward 3x3 conv as im2col followed by gemm against the filter bank.
template <bool Parallel>
void BM_conv3x3(benchmark::State& state) {
  const auto g = conv_geometry(4, state.range(0), 16, 32);
  const auto x = random_buffer(g.batch * g.in_h * g.in_w * g.in_c, 7);
  const auto w = random_buffer(g.patch_len() * g.out_c, 8);
  std::vector<float> col(g.rows() * g.patch_len()), y(g.rows() * g.out_c);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::omp::im2col(g, x.data(), col.data());
      k::omp::gemm(false, false, g.rows(), g.out_c, g.patch_len(), col.data(), w.data(), y.data(), false);
    } else {
      k::serial::im2col(g, x.data(), col.data());
      k::serial::gemm(false, false, g.rows(), g.out_c, g.patch_len(), col.data(), w.data(), y.data(), false);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.rows() * g.out_c * g.patch_len());
}

template <bool Parallel>
void BM_maxpool(benchmark::State& state) {
  const k::Index side = state.range(0), batch = 8, c = 32;
  const auto x = random_buffer(batch * side * side * c, 9);
  std::vector<float> y(batch * (side / 2) * (side / 2) * c);
  std::vector<k::Index> arg(y.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::omp::maxpool(batch, side, side, c, k::Index(2), x.data(), y.data(), arg.data());
    } else {
      k::serial::maxpool(batch, side, side, c, k::Index(2), x.data(), y.data(), arg.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(BM_gemm<true>)->Name("gemm/omp")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(BM_gemm_trans_b<false>)->Name("gemm_tb/serial")->Arg(256);
BENCHMARK(BM_gemm_trans_b<true>)->Name("gemm_tb/omp")->Arg(256);
BENCHMARK(BM_im2col<false>)->Name("im2col/serial")->Arg(32)->Arg(64);
BENCHMARK(BM_im2col<true>)->Name("im2col/omp")->Arg(32)->Arg(64);
BENCHMARK(BM_col2im<false>)->Name("col2im/serial")->Arg(32)->Arg(64);
BENCHMARK(BM_col2im<true>)->Name("col2im/omp")->Arg(32)->Arg(64);
BENCHMARK(BM_conv3x3<false>)->Name("conv3x3/serial")->Arg(32)->Arg(64);
BENCHMARK(BM_conv3x3<true>)->Name("conv3x3/omp")->Arg(32)->Arg(64);
BENCHMARK(BM_maxpool<false>)->Name("maxpool/serial")->Arg(32)->Arg(64);
BENCHMARK(BM_maxpool<true>)->Name("maxpool/omp")->Arg(32)->Arg(64);

int main(int argc, char** argv) {
  xmar::runtime::configure_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
