//
// Copyright 2026 The dpssgd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "dpssgd/dp_step.hpp"

#include <cmath>

#include "dpssgd/errors.hpp"

namespace dpssgd {

void DpStepConfig::validate() const {
  if (!(clip_norm > 0.0)) {
    throw ConfigError("dp step: clip_norm must be positive");
  }
  if (!(noise_multiplier >= 0.0)) {
    throw ConfigError("dp step: noise_multiplier must be nonnegative");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("dp step: learning_rate must be positive");
  }
  if (expected_batch_size == 0) {
    throw ConfigError("dp step: expected_batch_size must be at least 1");
  }
}

namespace {

double selected_norm(const ParamSet& grads, const IndexPartition& partition) {
  double sum_sq = 0.0;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    const Tensor& g = grads[t].value;
    const TensorPartition& part = partition.tensors[t];
    if (part.non_selected.empty()) {
      for (double v : g.values()) sum_sq += v * v;
    } else {
      for (std::uint64_t i : part.selected) sum_sq += g[i] * g[i];
    }
  }
  return std::sqrt(sum_sq);
}

}  // namespace

PerSampleGrads clip_per_sample(const PerSampleGrads& grads,
                               const IndexPartition& partition,
                               double clip_norm) {
  if (!(clip_norm > 0.0)) {
    throw ConfigError("clip_per_sample: clip_norm must be positive");
  }
  PerSampleGrads clipped;
  clipped.samples.resize(grads.batch_size());
  for (std::size_t b = 0; b < grads.batch_size(); ++b) {
    const ParamSet& g = grads.samples[b];
    validate_partition(partition, g);
    const double norm = selected_norm(g, partition);
    const double factor = 1.0 / std::max(1.0, norm / clip_norm);
    ParamSet out;
    out.reserve(g.size());
    for (std::size_t t = 0; t < g.size(); ++t) {
      const TensorPartition& part = partition.tensors[t];
      ParamEntry entry{g[t].name, Tensor::zeros(g[t].value.shape()),
                       g[t].prunable};
      if (part.non_selected.empty()) {
        for (std::size_t i = 0; i < entry.value.size(); ++i) {
          entry.value[i] = g[t].value[i] * factor;
        }
      } else {
        for (std::uint64_t i : part.selected) {
          entry.value[i] = g[t].value[i] * factor;
        }
      }
      out.push_back(std::move(entry));
    }
    clipped.samples[b] = std::move(out);
  }
  return clipped;
}

ParamSet privatize_sum(const PerSampleGrads& clipped,
                       const IndexPartition& partition, double clip_norm,
                       double noise_multiplier, RngStream& noise_stream) {
  if (clipped.batch_size() == 0) {
    // The output is shaped from the samples, so a noise-only aggregation
    // needs at least one all-zero gradient sample as a template.
    throw StateError("privatize_sum: needs at least one gradient sample");
  }
  validate_partition(partition, clipped.samples[0]);
  // Sum of the clipped per-sample gradients. Non-selected coordinates are
  // exact zeros in every sample, so the sum stays exactly zero there.
  ParamSet sum = zeros_like(clipped.samples[0]);
  for (const ParamSet& g : clipped.samples) {
    axpy_params(1.0, g, sum);
  }
  const double noise_scale = noise_multiplier * clip_norm;
  if (noise_scale > 0.0) {
    for (std::size_t t = 0; t < sum.size(); ++t) {
      Tensor& out = sum[t].value;
      for (std::uint64_t i : partition.tensors[t].selected) {
        out[i] += noise_scale * noise_stream.next_gaussian();
      }
    }
  }
  return sum;
}

DpStepResult dp_ssgd_step(Model& model, const Batch& batch,
                          const DpStepConfig& config,
                          const IndexPartition& partition,
                          RngStream& noise_stream) {
  config.validate();
  validate_partition(partition, model.params());

  DpStepResult result;
  result.realized_batch = batch.size();

  ParamSet noisy;
  if (batch.empty()) {
    // Noise-only step: the clipped sum is zero, the noise is still added so
    // the update distribution does not depend on the realized batch size.
    result.mean_batch_loss = 0.0;
    PerSampleGrads zero;
    zero.samples.push_back(zeros_like(model.params()));
    noisy = privatize_sum(zero, partition, config.clip_norm,
                          config.noise_multiplier, noise_stream);
  } else {
    auto [loss, grads] = model.loss_and_per_sample_gradients(batch);
    result.mean_batch_loss = loss;
    const PerSampleGrads clipped =
        clip_per_sample(grads, partition, config.clip_norm);
    noisy = privatize_sum(clipped, partition, config.clip_norm,
                          config.noise_multiplier, noise_stream);
  }

  scale_params_in_place(
      noisy, config.learning_rate /
                 static_cast<double>(config.expected_batch_size));
  result.update.delta = std::move(noisy);
  model.apply_update(result.update.delta);
  return result;
}

}  // namespace dpssgd
