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

#include "dpssgd/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpssgd/errors.hpp"

namespace dpssgd {

namespace {

// floor(rate * n), robust to the product landing one ulp under an integer.
std::size_t dropped_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(
      std::floor(rate * static_cast<double>(n) + 1e-9));
}

std::vector<std::uint64_t> all_indices(std::size_t n) {
  std::vector<std::uint64_t> v(n);
  std::iota(v.begin(), v.end(), std::uint64_t{0});
  return v;
}

TensorPartition partition_one(const Tensor& weights, std::size_t drop,
                              SelectionCriterion criterion,
                              RngStream& stream) {
  const std::size_t n = weights.size();
  TensorPartition part;
  if (drop == 0) {
    part.selected = all_indices(n);
    return part;
  }

  std::vector<std::uint64_t> order = all_indices(n);
  if (criterion == SelectionCriterion::kRandom) {
    // Partial Fisher-Yates: the first `drop` entries are a uniform draw
    // without replacement. Weight values are never read.
    for (std::size_t i = 0; i < drop; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(
                                    stream.next_below(n - i));
      std::swap(order[i], order[j]);
    }
  } else {
    // Smallest absolute values first; equal magnitudes keep ascending
    // index order so the choice is deterministic.
    std::sort(order.begin(), order.end(),
              [&](std::uint64_t a, std::uint64_t b) {
                const double ma = std::fabs(weights[a]);
                const double mb = std::fabs(weights[b]);
                if (ma != mb) return ma < mb;
                return a < b;
              });
  }

  part.non_selected.assign(order.begin(),
                           order.begin() + static_cast<std::ptrdiff_t>(drop));
  std::sort(part.non_selected.begin(), part.non_selected.end());

  part.selected.reserve(n - drop);
  std::size_t cursor = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    if (cursor < part.non_selected.size() && part.non_selected[cursor] == i) {
      ++cursor;
    } else {
      part.selected.push_back(i);
    }
  }
  return part;
}

}  // namespace

std::size_t IndexPartition::selected_count() const {
  std::size_t n = 0;
  for (const TensorPartition& t : tensors) n += t.selected.size();
  return n;
}

std::size_t IndexPartition::non_selected_count() const {
  std::size_t n = 0;
  for (const TensorPartition& t : tensors) n += t.non_selected.size();
  return n;
}

IndexPartition select_indices(const ParamSet& params, double rate,
                              SelectionCriterion criterion,
                              RngStream& stream) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ConfigError("pruning rate must be in [0, 1)");
  }
  IndexPartition partition;
  partition.tensors.reserve(params.size());
  for (const ParamEntry& p : params) {
    if (!p.prunable) {
      TensorPartition full;
      full.selected = all_indices(p.value.size());
      partition.tensors.push_back(std::move(full));
      continue;
    }
    const std::size_t drop = dropped_count(rate, p.value.size());
    partition.tensors.push_back(partition_one(p.value, drop, criterion, stream));
  }
  return partition;
}

IndexPartition partition_for_step(const SparsityPlan& plan, std::uint64_t step,
                                  const ParamSet& params,
                                  const FrozenMask* cached) {
  if (plan.mode == SparsityMode::kFreezing) {
    if (cached != nullptr) {
      return cached->partition;
    }
    if (step != 0) {
      throw StateError(
          "freezing mode needs the step-0 mask cached for step " +
          std::to_string(step));
    }
  }
  // Per-step substream: the draw depends only on (seed, step), not on how
  // many draws earlier steps consumed.
  RngStream stream = plan.selection_stream.fork(step);
  return select_indices(params, plan.rate, plan.criterion, stream);
}

void validate_partition(const IndexPartition& partition,
                        const ParamSet& params) {
  if (partition.tensors.size() != params.size()) {
    throw ShapeError("partition does not match the parameter set");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    const TensorPartition& part = partition.tensors[t];
    if (part.selected.size() + part.non_selected.size() !=
        params[t].value.size()) {
      throw ShapeError("partition does not cover tensor " + params[t].name);
    }
  }
}

}  // namespace dpssgd
