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

#ifndef DPSSGD_MODEL_HPP_
#define DPSSGD_MODEL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpssgd/batch.hpp"
#include "dpssgd/params.hpp"
#include "dpssgd/rng.hpp"
#include "dpssgd/tensor.hpp"

namespace dpssgd {

enum class LayerKind : std::uint32_t {
  kConv2d = 0,
  kGroupNorm = 1,
  kRelu = 2,
  kMaxPool = 3,
  kFlatten = 4,
  kFullyConnected = 5,
};

// Declarative layer description. Consecutive layers must chain: the output
// shape of layer k is the input shape of layer k+1.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t out_channels = 0;  // conv2d
  std::size_t kernel = 0;        // conv2d, max_pool
  std::size_t stride = 1;        // conv2d, max_pool
  std::size_t padding = 0;       // conv2d
  std::size_t groups = 0;        // group_norm
  double epsilon = 1e-5;         // group_norm
  std::size_t out_features = 0;  // fully_connected

  static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel,
                          std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec group_norm(std::size_t groups, double epsilon = 1e-5);
  static LayerSpec relu();
  static LayerSpec max_pool(std::size_t kernel = 2, std::size_t stride = 2);
  static LayerSpec flatten();
  static LayerSpec fully_connected(std::size_t out_features);

  bool operator==(const LayerSpec&) const = default;
};

// A feed-forward classifier: an ordered layer list plus its parameters.
//
// Parameters are stored in the canonical enumeration (layer order, then name
// order within a layer, then row-major within a tensor); every index set in
// the sparsifier and every noise draw in the dp engine addresses weights
// through that enumeration. Group normalization statistics are always
// per-sample, never across the batch, so each sample's logits and gradients
// depend only on that sample.
//
// forward and loss_and_per_sample_gradients are const and may run per-sample
// work in parallel; apply_update and reinit_last_layer need exclusive access.
class Model {
 public:
  // Builds a model with He-style fan-in scaled Gaussian weights, zero
  // biases, unit norm scales, and zero norm shifts. The final layer must be
  // fully connected with out_features == class_count.
  static Model build(std::vector<LayerSpec> layers, Shape input_shape,
                     std::size_t class_count, RngStream& init_stream);

  // Reassembles a model from checkpointed parts, validating shapes.
  static Model from_parts(std::vector<LayerSpec> layers, Shape input_shape,
                          std::size_t class_count, ParamSet params);

  // [B, sample...] -> [B, class_count] logits.
  Tensor forward(const Tensor& inputs) const;

  // Mean cross-entropy over the batch plus, for every sample, the exact
  // gradient of that sample's own loss with respect to every parameter.
  std::pair<double, PerSampleGrads> loss_and_per_sample_gradients(
      const Batch& batch) const;

  // params <- params - delta, entrywise. Throws DataError if an update
  // produces a non-finite parameter.
  void apply_update(const ParamSet& delta);

  // Replaces the final fully-connected layer with a freshly initialized one
  // of the requested width; every other parameter is preserved bitwise.
  void reinit_last_layer(std::size_t new_class_count, RngStream& stream);

  // Marks every parameter tensor prunable. By default only conv and
  // fully-connected weights are; biases and norm parameters stay selected.
  void include_biases_in_pruning();

  std::vector<int> predict(const Tensor& inputs) const;

  const ParamSet& params() const { return params_; }
  std::size_t class_count() const { return class_count_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t parameter_count() const { return total_param_count(params_); }

 private:
  Model() = default;

  void resolve_shapes();  // fills io_shapes_, validates chaining
  void index_params();    // fills param_begin_

  std::vector<LayerSpec> layers_;
  Shape input_shape_;  // per-sample shape
  std::size_t class_count_ = 0;
  ParamSet params_;
  std::vector<Shape> io_shapes_;          // input shape of each layer + output
  std::vector<std::size_t> param_begin_;  // first param index per layer
};

// Classification accuracy and mean cross-entropy on labeled inputs.
struct EvalMetrics {
  double accuracy;
  double mean_loss;
};
EvalMetrics evaluate(const Model& model, const Tensor& inputs,
                     std::span<const int> labels);

}  // namespace dpssgd

#endif  // DPSSGD_MODEL_HPP_
