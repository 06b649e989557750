#include <benchmark/benchmark.h>

#include <random>

#include "ppsvae/kernels.hpp"

using namespace ppsvae;

namespace {

Tensor random(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(s);
  for (double& v : t.span()) v = n(rng);
  return t;
}

ConvGeometry geometry(int channels, int kernel, bool depthwise) {
  ConvGeometry g;
  g.in_channels = channels;
  g.out_channels = channels;
  g.kernel = kernel;
  g.groups = depthwise ? channels : 1;
  return g;
}

// Arguments: batch, channels, spatial size, kernel, depthwise flag.
template <bool Parallel>
void conv_forward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), c = static_cast<int>(state.range(1));
  const int s = static_cast<int>(state.range(2)), k = static_cast<int>(state.range(3));
  const ConvGeometry g = geometry(c, k, state.range(4) != 0);
  const Tensor x = random({n, c, s, s}, 1), w = random({c, c / g.groups, k, k}, 2), b = random({c}, 3);
  Tensor y;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv2d_forward(x, w, b, g, y);
    else kernels::reference::conv2d_forward(x, w, b, g, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Parallel>
void conv_backward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), c = static_cast<int>(state.range(1));
  const int s = static_cast<int>(state.range(2)), k = static_cast<int>(state.range(3));
  const ConvGeometry g = geometry(c, k, state.range(4) != 0);
  const Tensor x = random({n, c, s, s}, 1), w = random({c, c / g.groups, k, k}, 2), gy = random({n, c, s, s}, 4);
  Tensor gx, gw, gb;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv2d_backward(x, w, gy, g, &gx, gw, &gb);
    else kernels::reference::conv2d_backward(x, w, gy, g, &gx, gw, &gb);
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Parallel>
void matmul(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const Tensor a = random({d, d}, 5), b = random({d, d}, 6);
  Tensor out({d, d});
  for (auto _ : state) {
    if constexpr (Parallel) kernels::matmul(a.data(), b.data(), out.data(), d, d, d);
    else kernels::reference::matmul(a.data(), b.data(), out.data(), d, d, d);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * d * d * d);
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->ArgNames({"N", "C", "S", "k", "dw"});
  b->Args({16, 16, 16, 7, 1});
  b->Args({16, 16, 16, 1, 0});
  b->Args({16, 16, 16, 3, 0});
  b->Args({64, 32, 16, 7, 1});
  b->Args({64, 32, 16, 1, 0});
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv_forward/openmp")->Apply(conv_args);
BENCHMARK(conv_forward<false>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(conv_backward<true>)->Name("conv_backward/openmp")->Apply(conv_args);
BENCHMARK(conv_backward<false>)->Name("conv_backward/reference")->Apply(conv_args);
BENCHMARK(matmul<true>)->Name("matmul/openmp")->Arg(64)->Arg(256);
BENCHMARK(matmul<false>)->Name("matmul/reference")->Arg(64)->Arg(256);

BENCHMARK_MAIN();
