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

#include "dpssgd/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "dpssgd/errors.hpp"

namespace dpssgd {

namespace {

std::size_t checked_element_count(const Shape& shape) {
  if (shape.empty()) {
    throw ShapeError("tensor shape must have at least one dimension");
  }
  std::size_t n = 1;
  for (std::size_t dim : shape) {
    if (dim == 0) {
      throw ShapeError("tensor shape entries must be positive");
    }
    n *= dim;
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": operand shapes differ");
  }
}

// C[m,n] += A[m,k] * B[k,n]. The j-innermost loop order vectorizes well.
void gemm_accumulate(std::size_t m, std::size_t k, std::size_t n,
                     const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    double* c_row = c + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double a_il = a_row[l];
      const double* b_row = b + l * n;
      for (std::size_t j = 0; j < n; ++j) {
        c_row[j] += a_il * b_row[j];
      }
    }
  }
}

struct ConvGeometry {
  std::size_t out_channels, in_channels, kernel_h, kernel_w;
  std::size_t in_h, in_w, out_h, out_w;
  std::size_t stride, padding;
};

ConvGeometry conv_geometry(const Shape& input_chw, const Shape& kernel,
                           std::size_t stride, std::size_t padding) {
  if (kernel.size() != 4) {
    throw ShapeError("conv2d: kernel must be [out,in,kh,kw]");
  }
  if (stride == 0) {
    throw ConfigError("conv2d: stride must be positive");
  }
  ConvGeometry g;
  g.out_channels = kernel[0];
  g.in_channels = kernel[1];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.in_h = input_chw[1];
  g.in_w = input_chw[2];
  g.stride = stride;
  g.padding = padding;
  if (input_chw[0] != g.in_channels) {
    throw ShapeError("conv2d: input channel count does not match kernel");
  }
  if (g.in_h + 2 * padding < g.kernel_h || g.in_w + 2 * padding < g.kernel_w) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.out_h = (g.in_h + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.in_w + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

// Unrolls conv input patches into a [in*kh*kw, out_h*out_w] matrix.
void im2col(const double* input, const ConvGeometry& g, double* col) {
  const std::size_t out_area = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = input + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        double* out_row = col + row * out_area;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
              static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                static_cast<std::ptrdiff_t>(g.padding);
            double v = 0.0;
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) {
              v = plane[static_cast<std::size_t>(iy) * g.in_w +
                        static_cast<std::size_t>(ix)];
            }
            out_row[oy * g.out_w + ox] = v;
          }
        }
      }
    }
  }
}

// Scatter-adds a [in*kh*kw, out_h*out_w] column matrix back onto the input.
void col2im_accumulate(const double* col, const ConvGeometry& g,
                       double* input_grad) {
  const std::size_t out_area = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = input_grad + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const double* col_row = col + row * out_area;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
              static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            plane[static_cast<std::size_t>(iy) * g.in_w +
                  static_cast<std::size_t>(ix)] += col_row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

void conv_forward_single(const double* input, const Shape& input_chw,
                         const Tensor& kernel, const Tensor* bias,
                         std::size_t stride, std::size_t padding,
                         double* output) {
  const ConvGeometry g = conv_geometry(input_chw, kernel.shape(), stride, padding);
  const std::size_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t out_area = g.out_h * g.out_w;
  std::vector<double> col(patch * out_area);
  im2col(input, g, col.data());
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double b = bias != nullptr ? (*bias)[o] : 0.0;
    double* row = output + o * out_area;
    for (std::size_t j = 0; j < out_area; ++j) row[j] = b;
  }
  gemm_accumulate(g.out_channels, patch, out_area, kernel.data(), col.data(),
                  output);
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  const std::size_t n = checked_element_count(shape);
  t.shape_ = std::move(shape);
  t.data_.assign(n, 0.0);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.data_) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  const std::size_t n = checked_element_count(shape);
  if (n != data.size()) {
    throw ShapeError("from_data: data length does not match shape");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  if (!t.all_finite()) {
    throw DataError("from_data: non-finite entry");
  }
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor gaussian_sample(RngStream& stream, const Shape& shape) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.values()) v = stream.next_gaussian();
  return t;
}

double l2_norm_at(const Tensor& t, std::span<const std::uint64_t> indices) {
  const std::size_t n = t.size();
  double sum = 0.0;
  for (std::uint64_t idx : indices) {
    if (idx >= n) {
      throw IndexError("l2_norm_at: index " + std::to_string(idx) +
                       " out of range for tensor of size " + std::to_string(n));
    }
    const double v = t[idx];
    sum += v * v;
  }
  return std::sqrt(sum);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& t, double factor) {
  Tensor out = t;
  for (double& v : out.values()) v *= factor;
  return out;
}

void axpy(double a, const Tensor& x, Tensor& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: expected [m,k] x [k,n]");
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  Tensor c = Tensor::zeros({m, n});
  gemm_accumulate(m, k, n, a.data(), b.data(), c.data());
  return c;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel,
                      const Tensor* bias, std::size_t stride,
                      std::size_t padding) {
  if (bias != nullptr &&
      (bias->rank() != 1 || bias->shape()[0] != kernel.shape()[0])) {
    throw ShapeError("conv2d: bias must be [out_channels]");
  }
  if (input.rank() == 3) {
    const ConvGeometry g =
        conv_geometry(input.shape(), kernel.shape(), stride, padding);
    Tensor out = Tensor::zeros({g.out_channels, g.out_h, g.out_w});
    conv_forward_single(input.data(), input.shape(), kernel, bias, stride,
                        padding, out.data());
    return out;
  }
  if (input.rank() == 4) {
    const Shape chw{input.shape()[1], input.shape()[2], input.shape()[3]};
    const ConvGeometry g = conv_geometry(chw, kernel.shape(), stride, padding);
    const std::size_t batch = input.shape()[0];
    Tensor out = Tensor::zeros({batch, g.out_channels, g.out_h, g.out_w});
    const std::size_t in_stride = chw[0] * chw[1] * chw[2];
    const std::size_t out_stride = g.out_channels * g.out_h * g.out_w;
    for (std::size_t n = 0; n < batch; ++n) {
      conv_forward_single(input.data() + n * in_stride, chw, kernel, bias,
                          stride, padding, out.data() + n * out_stride);
    }
    return out;
  }
  throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W]");
}

void conv2d_backward(const Tensor& input, const Tensor& kernel,
                     const Tensor& grad_output, std::size_t stride,
                     std::size_t padding, Tensor* grad_input,
                     Tensor* grad_kernel, Tensor* grad_bias) {
  if (input.rank() != 3) {
    throw ShapeError("conv2d_backward: input must be [C,H,W]");
  }
  const ConvGeometry g =
      conv_geometry(input.shape(), kernel.shape(), stride, padding);
  const Shape expected_out{g.out_channels, g.out_h, g.out_w};
  if (grad_output.shape() != expected_out) {
    throw ShapeError("conv2d_backward: grad_output shape mismatch");
  }
  const std::size_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t out_area = g.out_h * g.out_w;

  if (grad_bias != nullptr) {
    *grad_bias = Tensor::zeros({g.out_channels});
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      double s = 0.0;
      const double* row = grad_output.data() + o * out_area;
      for (std::size_t j = 0; j < out_area; ++j) s += row[j];
      (*grad_bias)[o] = s;
    }
  }

  std::vector<double> col;
  if (grad_kernel != nullptr) {
    col.resize(patch * out_area);
    im2col(input.data(), g, col.data());
    *grad_kernel = Tensor::zeros(kernel.shape());
    // dK[o,r] = sum_j dOut[o,j] * col[r,j]
    double* gk = grad_kernel->data();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const double* go = grad_output.data() + o * out_area;
      for (std::size_t r = 0; r < patch; ++r) {
        const double* col_row = col.data() + r * out_area;
        double s = 0.0;
        for (std::size_t j = 0; j < out_area; ++j) s += go[j] * col_row[j];
        gk[o * patch + r] = s;
      }
    }
  }

  if (grad_input != nullptr) {
    // dcol[r,j] = sum_o K[o,r] * dOut[o,j], then scatter back.
    std::vector<double> dcol(patch * out_area, 0.0);
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const double* k_row = kernel.data() + o * patch;
      const double* go = grad_output.data() + o * out_area;
      for (std::size_t r = 0; r < patch; ++r) {
        const double k_or = k_row[r];
        double* d_row = dcol.data() + r * out_area;
        for (std::size_t j = 0; j < out_area; ++j) d_row[j] += k_or * go[j];
      }
    }
    *grad_input = Tensor::zeros(input.shape());
    col2im_accumulate(dcol.data(), g, grad_input->data());
  }
}

}  // namespace dpssgd
