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

#ifndef DPSSGD_BATCH_HPP_
#define DPSSGD_BATCH_HPP_

#include <vector>

#include "dpssgd/tensor.hpp"

namespace dpssgd {

// A materialized mini-batch: inputs are [B, ...] with one leading sample
// axis, labels has length B. B may be zero (Poisson sampling can draw an
// empty batch).
struct Batch {
  Tensor inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

}  // namespace dpssgd

#endif  // DPSSGD_BATCH_HPP_
