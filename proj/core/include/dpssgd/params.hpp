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

#ifndef DPSSGD_PARAMS_HPP_
#define DPSSGD_PARAMS_HPP_

#include <string>
#include <vector>

#include "dpssgd/tensor.hpp"

namespace dpssgd {

// One named parameter tensor. Prunable entries (conv and fully-connected
// weights) participate in index selection; the rest are always updated.
struct ParamEntry {
  std::string name;
  Tensor value;
  bool prunable = false;
};

// Ordered parameter collection. The vector order (layer order, then name
// order within a layer) together with row-major flat indices defines the
// canonical global enumeration of every weight coordinate. Sparsity
// partitions, noise draws, and checkpoints all address coordinates through
// this one enumeration.
using ParamSet = std::vector<ParamEntry>;

std::size_t total_param_count(const ParamSet& params);

// Same names, shapes, and prunability; values all zero.
ParamSet zeros_like(const ParamSet& params);

// y[i] += a * x[i], entrywise over matching tensors.
void axpy_params(double a, const ParamSet& x, ParamSet& y);

void scale_params_in_place(ParamSet& params, double factor);

// Gradients of each sample's loss with respect to every parameter.
// grads[b] depends only on sample b and the model.
struct PerSampleGrads {
  std::vector<ParamSet> samples;

  std::size_t batch_size() const { return samples.size(); }
};

}  // namespace dpssgd

#endif  // DPSSGD_PARAMS_HPP_
