#include <benchmark/benchmark.h>

#include "dpssgd/rng.hpp"
#include "dpssgd/tensor.hpp"

namespace {

using dpssgd::RngStream;
using dpssgd::Tensor;

void BM_GaussianSample(benchmark::State& state) {
  RngStream stream(1, 1);
  const dpssgd::Shape shape{static_cast<std::size_t>(state.range(0))};
  for (auto _ : state) {
    Tensor t = dpssgd::gaussian_sample(stream, shape);
    benchmark::DoNotOptimize(t.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GaussianSample)->Range(1 << 10, 1 << 20);

void BM_Conv2dForward(benchmark::State& state) {
  RngStream stream(2, 0);
  const std::size_t channels = static_cast<std::size_t>(state.range(0));
  const Tensor input = dpssgd::gaussian_sample(stream, {channels, 24, 24});
  const Tensor kernel =
      dpssgd::gaussian_sample(stream, {2 * channels, channels, 5, 5});
  const Tensor bias = dpssgd::gaussian_sample(stream, {2 * channels});
  for (auto _ : state) {
    Tensor out = dpssgd::conv2d_forward(input, kernel, &bias);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_Matmul(benchmark::State& state) {
  RngStream stream(3, 0);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor a = dpssgd::gaussian_sample(stream, {n, n});
  const Tensor b = dpssgd::gaussian_sample(stream, {n, n});
  for (auto _ : state) {
    Tensor c = dpssgd::matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

}  // namespace
