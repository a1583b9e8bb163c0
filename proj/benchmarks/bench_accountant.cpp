#include <benchmark/benchmark.h>

#include "dpssgd/accountant.hpp"

namespace {

void BM_RdpOneStep(benchmark::State& state) {
  const int order = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpssgd::rdp_one_step(0.004, 1.1, order));
  }
}
BENCHMARK(BM_RdpOneStep)->Arg(8)->Arg(64)->Arg(512);

void BM_AccountantBuild(benchmark::State& state) {
  for (auto _ : state) {
    dpssgd::RdpAccountant accountant(0.004, 1.1);
    benchmark::DoNotOptimize(accountant.rdp().data());
  }
}
BENCHMARK(BM_AccountantBuild);

void BM_CalibrateSigma(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        dpssgd::calibrate_sigma({2.0, 1e-5}, 256.0 / 60000.0, 2344));
  }
}
BENCHMARK(BM_CalibrateSigma)->Unit(benchmark::kMillisecond);

}  // namespace
