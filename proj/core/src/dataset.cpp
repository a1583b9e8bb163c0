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

#include "dpssgd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dpssgd/errors.hpp"

namespace dpssgd {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open file: " + path);
  }
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes,
                        std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw IoError("truncated file: " + path);
  }
  return (std::uint32_t{bytes[offset]} << 24) |
         (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) |
         std::uint32_t{bytes[offset + 3]};
}

std::size_t checked_class_count(const std::vector<int>& labels) {
  int max_label = 0;
  for (int l : labels) {
    if (l < 0) throw DataError("negative label");
    max_label = std::max(max_label, l);
  }
  return static_cast<std::size_t>(max_label) + 1;
}

// floor(rate * n) robust to the product landing one ulp under an integer.
std::size_t scaled_floor(double rate, std::size_t n) {
  return static_cast<std::size_t>(
      std::floor(rate * static_cast<double>(n) + 1e-9));
}

}  // namespace

Shape Dataset::sample_shape() const {
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);

  const std::uint32_t image_magic = read_be32(image_bytes, 0, images_path);
  if (image_magic != kIdxImagesMagic) {
    throw FormatError("bad IDX image magic in " + images_path);
  }
  const std::uint32_t label_magic = read_be32(label_bytes, 0, labels_path);
  if (label_magic != kIdxLabelsMagic) {
    throw FormatError("bad IDX label magic in " + labels_path);
  }

  const std::size_t image_count = read_be32(image_bytes, 4, images_path);
  const std::size_t rows = read_be32(image_bytes, 8, images_path);
  const std::size_t cols = read_be32(image_bytes, 12, images_path);
  const std::size_t label_count = read_be32(label_bytes, 4, labels_path);
  if (image_count != label_count) {
    throw DataError("image/label count mismatch: " +
                    std::to_string(image_count) + " vs " +
                    std::to_string(label_count));
  }
  if (image_count == 0) {
    throw DataError("empty IDX dataset: " + images_path);
  }

  const std::size_t pixel_count = image_count * rows * cols;
  if (image_bytes.size() != 16 + pixel_count) {
    throw IoError("truncated IDX image file: " + images_path);
  }
  if (label_bytes.size() != 8 + label_count) {
    throw IoError("truncated IDX label file: " + labels_path);
  }

  std::vector<double> pixels(pixel_count);
  for (std::size_t i = 0; i < pixel_count; ++i) {
    pixels[i] = static_cast<double>(image_bytes[16 + i]) / 255.0;
  }
  std::vector<int> labels(label_count);
  for (std::size_t i = 0; i < label_count; ++i) {
    labels[i] = static_cast<int>(label_bytes[8 + i]);
  }

  Dataset d;
  d.inputs = Tensor::from_data({image_count, 1, rows, cols}, std::move(pixels));
  d.class_count = checked_class_count(labels);
  d.labels = std::move(labels);
  d.provenance = Provenance::kPrivate;
  return d;
}

Dataset load_cifar_binary(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.empty()) {
    throw DataError("empty dataset file: " + path);
  }
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("file size is not a multiple of the 3073-byte record: " +
                      path);
  }
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  std::vector<double> pixels(count * 3 * 32 * 32);
  std::vector<int> labels(count);
  for (std::size_t n = 0; n < count; ++n) {
    const unsigned char* record = bytes.data() + n * kCifarRecordBytes;
    labels[n] = static_cast<int>(record[0]);
    for (std::size_t i = 0; i < 3 * 32 * 32; ++i) {
      pixels[n * 3 * 32 * 32 + i] = static_cast<double>(record[1 + i]) / 255.0;
    }
  }
  Dataset d;
  d.inputs = Tensor::from_data({count, 3, 32, 32}, std::move(pixels));
  d.class_count = checked_class_count(labels);
  d.labels = std::move(labels);
  d.provenance = Provenance::kPrivate;
  return d;
}

std::vector<std::size_t> stratified_indices(const Dataset& d, double fraction,
                                            std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("subset fraction must be in (0, 1]");
  }
  const std::size_t n = d.size();
  const std::size_t target =
      std::min(n, static_cast<std::size_t>(std::ceil(
                      fraction * static_cast<double>(n) - 1e-9)));

  std::vector<std::vector<std::size_t>> by_class(d.class_count);
  for (std::size_t i = 0; i < n; ++i) {
    by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);
  }

  // Proportional quota per class, floor first, then the largest fractional
  // remainders absorb what is left of the target.
  std::vector<std::size_t> quota(d.class_count);
  std::vector<double> remainder(d.class_count);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < d.class_count; ++c) {
    const double exact = fraction * static_cast<double>(by_class[c].size());
    quota[c] = scaled_floor(fraction, by_class[c].size());
    remainder[c] = exact - static_cast<double>(quota[c]);
    assigned += quota[c];
  }
  std::vector<std::size_t> order(d.class_count);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    return a < b;
  });
  std::size_t leftover = target > assigned ? target - assigned : 0;
  while (leftover > 0) {
    bool progressed = false;
    for (std::size_t c : order) {
      if (leftover == 0) break;
      if (quota[c] < by_class[c].size()) {
        ++quota[c];
        --leftover;
        progressed = true;
      }
    }
    if (!progressed) break;
  }

  // Per-class draw without replacement, each class on its own child stream
  // so the choice is independent of class iteration order.
  RngStream base(seed, 0x5u);
  std::vector<std::size_t> chosen;
  chosen.reserve(target);
  for (std::size_t c = 0; c < d.class_count; ++c) {
    auto& pool = by_class[c];
    RngStream stream = base.fork(c);
    for (std::size_t k = 0; k < quota[c]; ++k) {
      const std::size_t j =
          k + static_cast<std::size_t>(stream.next_below(pool.size() - k));
      std::swap(pool[k], pool[j]);
      chosen.push_back(pool[k]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

Dataset take(const Dataset& d, std::span<const std::size_t> indices,
             Provenance provenance) {
  if (indices.empty()) {
    throw DataError("cannot build an empty dataset");
  }
  const Shape sample = d.sample_shape();
  const std::size_t stride = std::accumulate(
      sample.begin(), sample.end(), std::size_t{1}, std::multiplies<>());
  std::vector<double> data(indices.size() * stride);
  std::vector<int> labels(indices.size());
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const std::size_t src = indices[row];
    if (src >= d.size()) {
      throw IndexError("dataset index out of range");
    }
    std::copy_n(d.inputs.data() + src * stride, stride,
                data.data() + row * stride);
    labels[row] = d.labels[src];
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample.begin(), sample.end());
  Dataset out;
  out.inputs = Tensor::from_data(std::move(shape), std::move(data));
  out.labels = std::move(labels);
  out.class_count = d.class_count;
  out.provenance = provenance;
  return out;
}

Dataset subset_fraction(const Dataset& d, double fraction,
                        std::uint64_t seed) {
  const auto indices = stratified_indices(d, fraction, seed);
  return take(d, indices, Provenance::kPublic);
}

std::vector<std::size_t> complement_indices(
    std::size_t n, std::span<const std::size_t> sorted_indices) {
  std::vector<std::size_t> out;
  out.reserve(n - sorted_indices.size());
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cursor < sorted_indices.size() && sorted_indices[cursor] == i) {
      ++cursor;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

MiniBatch poisson_sample(const Dataset& d, double q, RngStream& stream) {
  if (!(q > 0.0) || q > 1.0) {
    throw ConfigError("Poisson sampling rate must be in (0, 1]");
  }
  MiniBatch batch;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (stream.next_uniform() < q) {
      batch.indices.push_back(i);
    }
  }
  return batch;
}

Batch gather(const Dataset& d, const MiniBatch& mini) {
  const Shape sample = d.sample_shape();
  const std::size_t stride = std::accumulate(
      sample.begin(), sample.end(), std::size_t{1}, std::multiplies<>());
  Batch out;
  out.labels.resize(mini.size());
  Shape shape{mini.size()};
  shape.insert(shape.end(), sample.begin(), sample.end());
  if (mini.size() == 0) {
    return out;  // empty batch; inputs left default-constructed
  }
  std::vector<double> data(mini.size() * stride);
  for (std::size_t row = 0; row < mini.size(); ++row) {
    const std::size_t src = mini.indices[row];
    if (src >= d.size()) {
      throw IndexError("mini-batch index out of range");
    }
    std::copy_n(d.inputs.data() + src * stride, stride,
                data.data() + row * stride);
    out.labels[row] = d.labels[src];
  }
  out.inputs = Tensor::from_data(std::move(shape), std::move(data));
  return out;
}

Dataset synthetic_blobs(std::size_t count, std::size_t class_count,
                        const Shape& sample_shape, double noise_std,
                        std::uint64_t seed, Provenance provenance) {
  if (count == 0 || class_count == 0) {
    throw ConfigError("synthetic_blobs: count and class_count must be positive");
  }
  const std::size_t stride = std::accumulate(
      sample_shape.begin(), sample_shape.end(), std::size_t{1},
      std::multiplies<>());

  // Fixed per-class mean images, well separated relative to the noise.
  RngStream mean_stream(seed, 0x6u);
  std::vector<double> means(class_count * stride);
  for (double& m : means) m = 0.2 + 0.6 * mean_stream.next_uniform();

  RngStream noise_stream = mean_stream.fork(1);
  std::vector<double> data(count * stride);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = i % class_count;
    labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < stride; ++j) {
      const double v =
          means[c * stride + j] + noise_std * noise_stream.next_gaussian();
      data[i * stride + j] = std::clamp(v, 0.0, 1.0);
    }
  }
  Shape shape{count};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Dataset d;
  d.inputs = Tensor::from_data(std::move(shape), std::move(data));
  d.labels = std::move(labels);
  d.class_count = class_count;
  d.provenance = provenance;
  return d;
}

}  // namespace dpssgd
