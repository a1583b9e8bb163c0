#include <benchmark/benchmark.h>

#include "dpssgd/dp_step.hpp"
#include "dpssgd/model.hpp"
#include "dpssgd/sparsify.hpp"

namespace {

using dpssgd::Batch;
using dpssgd::LayerSpec;
using dpssgd::Model;
using dpssgd::RngStream;

Model mnist_like_model() {
  RngStream init(1, 0);
  return Model::build(
      {LayerSpec::conv2d(16, 5), LayerSpec::group_norm(8), LayerSpec::relu(),
       LayerSpec::max_pool(), LayerSpec::conv2d(32, 5),
       LayerSpec::group_norm(8), LayerSpec::relu(), LayerSpec::max_pool(),
       LayerSpec::flatten(), LayerSpec::fully_connected(10)},
      {1, 28, 28}, 10, init);
}

Batch fake_batch(std::size_t b) {
  RngStream s(2, 0);
  Batch batch;
  batch.inputs = dpssgd::gaussian_sample(s, {b, 1, 28, 28});
  batch.labels.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    batch.labels[i] = static_cast<int>(s.next_below(10));
  }
  return batch;
}

void BM_PerSampleGradients(benchmark::State& state) {
  const Model model = mnist_like_model();
  const Batch batch = fake_batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto result = model.loss_and_per_sample_gradients(batch);
    benchmark::DoNotOptimize(result.second.samples.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PerSampleGradients)->Arg(8)->Arg(32)->Arg(128)
    ->Unit(benchmark::kMillisecond);

void BM_DpStep(benchmark::State& state) {
  Model model = mnist_like_model();
  const double rate = static_cast<double>(state.range(0)) / 100.0;
  const Batch batch = fake_batch(32);
  RngStream select(3, 0);
  const dpssgd::IndexPartition partition = dpssgd::select_indices(
      model.params(), rate, dpssgd::SelectionCriterion::kRandom, select);
  dpssgd::DpStepConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.noise_multiplier = 1.0;
  cfg.learning_rate = 0.25;
  cfg.expected_batch_size = 32;
  RngStream noise(4, 0);
  for (auto _ : state) {
    auto result = dpssgd::dp_ssgd_step(model, batch, cfg, partition, noise);
    benchmark::DoNotOptimize(result.update.delta.data());
  }
  state.SetLabel("p=" + std::to_string(rate));
}
BENCHMARK(BM_DpStep)->Arg(0)->Arg(50)->Arg(90)->Unit(benchmark::kMillisecond);

void BM_SelectIndices(benchmark::State& state) {
  const Model model = mnist_like_model();
  const bool magnitude = state.range(0) != 0;
  RngStream select(5, 0);
  for (auto _ : state) {
    auto part = dpssgd::select_indices(
        model.params(), 0.9,
        magnitude ? dpssgd::SelectionCriterion::kMagnitude
                  : dpssgd::SelectionCriterion::kRandom,
        select);
    benchmark::DoNotOptimize(part.tensors.data());
  }
  state.SetLabel(magnitude ? "magnitude" : "random");
}
BENCHMARK(BM_SelectIndices)->Arg(0)->Arg(1);

}  // namespace
