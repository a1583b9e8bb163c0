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

#ifndef DPSSGD_TENSOR_HPP_
#define DPSSGD_TENSOR_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "dpssgd/rng.hpp"

namespace dpssgd {

using Shape = std::vector<std::size_t>;

// Dense n-dimensional array of doubles in row-major order. Shape entries are
// positive; the data length always equals the product of the shape. Public
// operations keep every entry finite.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  // Takes ownership of `data`; throws ShapeError on length mismatch and
  // DataError if any entry is not finite.
  static Tensor from_data(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Fills a tensor with i.i.d. standard normal draws, consuming exactly
// size(shape) counter positions of `stream`.
Tensor gaussian_sample(RngStream& stream, const Shape& shape);

// sqrt of the sum of squares of the addressed entries; an empty index list
// yields 0. Throws IndexError on an out-of-range index.
double l2_norm_at(const Tensor& t, std::span<const std::uint64_t> indices);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);
// y += a * x
void axpy(double a, const Tensor& x, Tensor& y);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// 2-D convolution with zero padding. Input is [C,H,W] or [N,C,H,W]; kernel is
// [O,C,kh,kw]; optional bias is [O]. Output rank matches input rank.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel,
                      const Tensor* bias, std::size_t stride = 1,
                      std::size_t padding = 0);

// Gradients of conv2d_forward for a [C,H,W] input. Any of the output
// pointers may be null to skip that gradient.
void conv2d_backward(const Tensor& input, const Tensor& kernel,
                     const Tensor& grad_output, std::size_t stride,
                     std::size_t padding, Tensor* grad_input,
                     Tensor* grad_kernel, Tensor* grad_bias);

}  // namespace dpssgd

#endif  // DPSSGD_TENSOR_HPP_
