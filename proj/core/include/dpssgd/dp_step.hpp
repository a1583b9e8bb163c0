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

#ifndef DPSSGD_DP_STEP_HPP_
#define DPSSGD_DP_STEP_HPP_

#include <cstdint>

#include "dpssgd/batch.hpp"
#include "dpssgd/model.hpp"
#include "dpssgd/params.hpp"
#include "dpssgd/rng.hpp"
#include "dpssgd/sparsify.hpp"

namespace dpssgd {

struct DpStepConfig {
  double clip_norm = 1.0;          // C > 0; also the mechanism's sensitivity
  double noise_multiplier = 1.0;   // sigma >= 0
  double learning_rate = 0.1;      // eta > 0
  std::size_t expected_batch_size = 1;  // B >= 1, the update's divisor

  void validate() const;  // throws ConfigError
};

// The exact deltas subtracted from the parameters by one step. Entries at
// non-selected coordinates are exactly zero, which is what keeps frozen
// weights bitwise untouched across any number of steps.
struct NoisySparseUpdate {
  ParamSet delta;
};

// Per-sample clipping restricted to the selected coordinates: each sample's
// gradient is rescaled by 1 / max(1, norm / clip_norm), where the norm runs
// over selected coordinates only (non-prunable tensors count in full), and
// non-selected coordinates are zeroed outright. After this, no sample can
// contribute more than clip_norm in L2.
PerSampleGrads clip_per_sample(const PerSampleGrads& grads,
                               const IndexPartition& partition,
                               double clip_norm);

// Sums the clipped per-sample gradients and adds independent
// N(0, (noise_multiplier * clip_norm)^2) noise to every selected
// coordinate, in canonical enumeration order. Non-selected coordinates
// receive no noise (and consume no draws), staying exactly zero. With
// noise_multiplier == 0 no draws are consumed at all.
ParamSet privatize_sum(const PerSampleGrads& clipped,
                       const IndexPartition& partition, double clip_norm,
                       double noise_multiplier, RngStream& noise_stream);

// One full training step: per-sample gradients, clip, privatized sum,
// update = (learning_rate / expected_batch_size) * sum, applied in place.
// An empty batch performs a noise-only update on the selected coordinates.
struct DpStepResult {
  NoisySparseUpdate update;
  double mean_batch_loss;       // 0.0 when the batch was empty
  std::size_t realized_batch;   // number of samples actually processed
};
DpStepResult dp_ssgd_step(Model& model, const Batch& batch,
                          const DpStepConfig& config,
                          const IndexPartition& partition,
                          RngStream& noise_stream);

}  // namespace dpssgd

#endif  // DPSSGD_DP_STEP_HPP_
