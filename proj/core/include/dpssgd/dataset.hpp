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

#ifndef DPSSGD_DATASET_HPP_
#define DPSSGD_DATASET_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpssgd/batch.hpp"
#include "dpssgd/rng.hpp"
#include "dpssgd/tensor.hpp"

namespace dpssgd {

// Whether a dataset's examples are charged against the privacy budget.
enum class Provenance { kPublic, kPrivate };

// Labeled examples with inputs normalized into [0, 1]. Immutable after
// construction.
struct Dataset {
  Tensor inputs;            // [N, ...]
  std::vector<int> labels;  // length N, each in [0, class_count)
  std::size_t class_count = 0;
  Provenance provenance = Provenance::kPrivate;

  std::size_t size() const { return labels.size(); }
  // Per-sample shape, i.e. inputs.shape() without the leading axis.
  Shape sample_shape() const;
};

// Indices into a Dataset, unique and sorted ascending. May be empty.
struct MiniBatch {
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

// Parses an IDX image/label file pair: big-endian u32 magic (0x00000803 for
// images, 0x00000801 for labels) and dimension sizes, then raw u8 payload.
// Pixels are scaled to [0, 1] by /255; images come out as [N, 1, H, W].
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

// Parses a binary file of records (1 label byte + 3x32x32 pixel bytes,
// channel-major). Output inputs are [N, 3, 32, 32].
Dataset load_cifar_binary(const std::string& path);

// Class-stratified subsample of ceil(fraction * N) examples, deterministic
// in `seed`, retagged as public. Per-class counts stay within one example of
// exact proportionality.
Dataset subset_fraction(const Dataset& d, double fraction, std::uint64_t seed);

// The index set subset_fraction picks, sorted ascending. Exposed so callers
// can carve the complement out of the same source.
std::vector<std::size_t> stratified_indices(const Dataset& d, double fraction,
                                            std::uint64_t seed);

Dataset take(const Dataset& d, std::span<const std::size_t> indices,
             Provenance provenance);

std::vector<std::size_t> complement_indices(
    std::size_t n, std::span<const std::size_t> sorted_indices);

// Poisson sampler: each example is included independently with probability
// q. An empty result is a valid batch.
MiniBatch poisson_sample(const Dataset& d, double q, RngStream& stream);

Batch gather(const Dataset& d, const MiniBatch& batch);

// Seeded Gaussian-blob classification task used by fixture-free tests: each
// class has a fixed mean image, examples are mean + noise clamped to [0, 1].
Dataset synthetic_blobs(std::size_t count, std::size_t class_count,
                        const Shape& sample_shape, double noise_std,
                        std::uint64_t seed,
                        Provenance provenance = Provenance::kPrivate);

}  // namespace dpssgd

#endif  // DPSSGD_DATASET_HPP_
