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

#ifndef DPSSGD_SPARSIFY_HPP_
#define DPSSGD_SPARSIFY_HPP_

#include <cstdint>
#include <vector>

#include "dpssgd/params.hpp"
#include "dpssgd/rng.hpp"

namespace dpssgd {

// Freezing fixes one index set for the whole run; selection draws a fresh
// set before every step.
enum class SparsityMode : std::uint32_t { kFreezing = 0, kSelection = 1 };

// Random pruning ignores the weight values entirely; magnitude pruning drops
// the smallest-|w| entries of each tensor. Neither reads private data, so
// neither consumes privacy budget.
enum class SelectionCriterion : std::uint32_t { kRandom = 0, kMagnitude = 1 };

// Per-tensor split of flat indices into updated (selected) and dropped
// (non_selected) coordinates. Both lists are sorted ascending; together
// they partition [0, tensor size).
struct TensorPartition {
  std::vector<std::uint64_t> selected;
  std::vector<std::uint64_t> non_selected;

  bool operator==(const TensorPartition&) const = default;
};

// One TensorPartition per parameter tensor, aligned with the canonical
// ParamSet order. Non-prunable tensors are fully selected.
struct IndexPartition {
  std::vector<TensorPartition> tensors;

  std::size_t selected_count() const;
  std::size_t non_selected_count() const;
  bool operator==(const IndexPartition&) const = default;
};

// The step-0 partition, pinned for every later step under freezing mode.
struct FrozenMask {
  IndexPartition partition;
};

struct SparsityPlan {
  SparsityMode mode = SparsityMode::kFreezing;
  SelectionCriterion criterion = SelectionCriterion::kRandom;
  double rate = 0.0;  // fraction p in [0, 1) dropped per prunable tensor
  // Pruning is always per tensor: each prunable tensor drops
  // floor(rate * size) of its own indices.
  RngStream selection_stream{0, 0};
};

// Splits every prunable tensor's indices, dropping floor(rate * size) of
// them: uniformly at random without replacement, or the smallest by
// absolute value (ties broken by ascending index). Weight values are only
// read under the magnitude criterion.
IndexPartition select_indices(const ParamSet& params, double rate,
                              SelectionCriterion criterion, RngStream& stream);

// The partition the dp engine must use for `step`. Freezing returns the
// cached mask unchanged (computing it fresh only at step 0); selection
// recomputes from the current parameters on a per-step substream, so the
// result is a pure function of (seed, step). Throws StateError when
// freezing mode reaches step > 0 without a cached mask.
IndexPartition partition_for_step(const SparsityPlan& plan, std::uint64_t step,
                                  const ParamSet& params,
                                  const FrozenMask* cached);

// Sanity check used by the dp engine: one partition entry per tensor, and
// each entry's lists exactly cover that tensor.
void validate_partition(const IndexPartition& partition,
                        const ParamSet& params);

}  // namespace dpssgd

#endif  // DPSSGD_SPARSIFY_HPP_
