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

#include "dpssgd/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpssgd/errors.hpp"

namespace dpssgd {

namespace {

std::size_t shape_elements(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

// Parameter tensors owned by one layer, in name order.
struct ParamSchemaEntry {
  std::string name;
  Shape shape;
  bool prunable;
};

std::vector<ParamSchemaEntry> layer_param_schema(const LayerSpec& spec,
                                                 const Shape& input,
                                                 std::size_t layer_index) {
  const std::string prefix = "layer" + std::to_string(layer_index) + ".";
  switch (spec.kind) {
    case LayerKind::kConv2d:
      return {{prefix + "bias", {spec.out_channels}, false},
              {prefix + "weight",
               {spec.out_channels, input[0], spec.kernel, spec.kernel},
               true}};
    case LayerKind::kGroupNorm:
      return {{prefix + "scale", {input[0]}, false},
              {prefix + "shift", {input[0]}, false}};
    case LayerKind::kFullyConnected:
      return {{prefix + "bias", {spec.out_features}, false},
              {prefix + "weight", {spec.out_features, input[0]}, true}};
    default:
      return {};
  }
}

double he_scale(const LayerSpec& spec, const Shape& input) {
  const double fan_in =
      spec.kind == LayerKind::kConv2d
          ? static_cast<double>(input[0] * spec.kernel * spec.kernel)
          : static_cast<double>(input[0]);
  return std::sqrt(2.0 / fan_in);
}

// Per-layer forward state captured for the backward pass.
struct LayerTrace {
  Tensor input;
  std::vector<double> group_mean;
  std::vector<double> group_rstd;
  std::vector<std::size_t> argmax;
};

Tensor group_norm_forward(const LayerSpec& spec, const Tensor& x,
                          const Tensor& scale_p, const Tensor& shift_p,
                          LayerTrace* trace) {
  const std::size_t channels = x.shape()[0];
  const std::size_t area = x.shape()[1] * x.shape()[2];
  const std::size_t groups = spec.groups;
  const std::size_t cpg = channels / groups;
  const std::size_t m = cpg * area;

  Tensor y = Tensor::zeros(x.shape());
  if (trace != nullptr) {
    trace->group_mean.resize(groups);
    trace->group_rstd.resize(groups);
  }
  for (std::size_t g = 0; g < groups; ++g) {
    const double* base = x.data() + g * cpg * area;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum += base[i];
      sum_sq += base[i] * base[i];
    }
    const double mean = sum / static_cast<double>(m);
    const double var =
        std::max(0.0, sum_sq / static_cast<double>(m) - mean * mean);
    const double rstd = 1.0 / std::sqrt(var + spec.epsilon);
    if (trace != nullptr) {
      trace->group_mean[g] = mean;
      trace->group_rstd[g] = rstd;
    }
    for (std::size_t c = g * cpg; c < (g + 1) * cpg; ++c) {
      const double a = rstd * scale_p[c];
      const double b = shift_p[c] - mean * a;
      const double* xin = x.data() + c * area;
      double* yout = y.data() + c * area;
      for (std::size_t i = 0; i < area; ++i) yout[i] = a * xin[i] + b;
    }
  }
  return y;
}

void group_norm_backward(const LayerSpec& spec, const LayerTrace& trace,
                         const Tensor& scale_p, const Tensor& dy, Tensor& dx,
                         Tensor& dscale, Tensor& dshift) {
  const Tensor& x = trace.input;
  const std::size_t channels = x.shape()[0];
  const std::size_t area = x.shape()[1] * x.shape()[2];
  const std::size_t groups = spec.groups;
  const std::size_t cpg = channels / groups;
  const std::size_t m = cpg * area;

  dx = Tensor::zeros(x.shape());
  for (std::size_t g = 0; g < groups; ++g) {
    const double mean = trace.group_mean[g];
    const double rstd = trace.group_rstd[g];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t c = g * cpg; c < (g + 1) * cpg; ++c) {
      const double* xin = x.data() + c * area;
      const double* dyc = dy.data() + c * area;
      double ds = 0.0, db = 0.0;
      for (std::size_t i = 0; i < area; ++i) {
        const double xhat = (xin[i] - mean) * rstd;
        const double dxhat = dyc[i] * scale_p[c];
        ds += dyc[i] * xhat;
        db += dyc[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      dscale[c] += ds;
      dshift[c] += db;
    }
    const double mean_dxhat = sum_dxhat / static_cast<double>(m);
    const double mean_dxhat_xhat = sum_dxhat_xhat / static_cast<double>(m);
    for (std::size_t c = g * cpg; c < (g + 1) * cpg; ++c) {
      const double* xin = x.data() + c * area;
      const double* dyc = dy.data() + c * area;
      double* dxc = dx.data() + c * area;
      for (std::size_t i = 0; i < area; ++i) {
        const double xhat = (xin[i] - mean) * rstd;
        const double dxhat = dyc[i] * scale_p[c];
        dxc[i] = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
      }
    }
  }
}

Tensor max_pool_forward(const LayerSpec& spec, const Tensor& x,
                        LayerTrace* trace) {
  const std::size_t channels = x.shape()[0];
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  const std::size_t k = spec.kernel, s = spec.stride;
  const std::size_t oh = (h - k) / s + 1;
  const std::size_t ow = (w - k) / s + 1;
  Tensor y = Tensor::zeros({channels, oh, ow});
  if (trace != nullptr) trace->argmax.resize(channels * oh * ow);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = x.data() + c * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best_idx = (oy * s) * w + (ox * s);
        double best = plane[best_idx];
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t idx = (oy * s + ky) * w + (ox * s + kx);
            if (plane[idx] > best) {  // first maximum wins ties
              best = plane[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t out_idx = (c * oh + oy) * ow + ox;
        y[out_idx] = best;
        if (trace != nullptr) trace->argmax[out_idx] = c * h * w + best_idx;
      }
    }
  }
  return y;
}

// Runs one sample through the network. `traces`, when non-null, receives one
// entry per layer for the backward pass.
Tensor forward_one(const std::vector<LayerSpec>& layers, const ParamSet& params,
                   const std::vector<std::size_t>& param_begin, Tensor x,
                   std::vector<LayerTrace>* traces) {
  if (traces != nullptr) traces->resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& spec = layers[l];
    LayerTrace* trace = traces != nullptr ? &(*traces)[l] : nullptr;
    if (trace != nullptr) trace->input = x;
    switch (spec.kind) {
      case LayerKind::kConv2d: {
        const Tensor& bias = params[param_begin[l]].value;
        const Tensor& weight = params[param_begin[l] + 1].value;
        x = conv2d_forward(x, weight, &bias, spec.stride, spec.padding);
        break;
      }
      case LayerKind::kGroupNorm: {
        const Tensor& scale_p = params[param_begin[l]].value;
        const Tensor& shift_p = params[param_begin[l] + 1].value;
        x = group_norm_forward(spec, x, scale_p, shift_p, trace);
        break;
      }
      case LayerKind::kRelu: {
        Tensor y = x;
        for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
        x = std::move(y);
        break;
      }
      case LayerKind::kMaxPool:
        x = max_pool_forward(spec, x, trace);
        break;
      case LayerKind::kFlatten: {
        Tensor y = Tensor::zeros({x.size()});
        std::copy_n(x.data(), x.size(), y.data());
        x = std::move(y);
        break;
      }
      case LayerKind::kFullyConnected: {
        const Tensor& bias = params[param_begin[l]].value;
        const Tensor& weight = params[param_begin[l] + 1].value;
        const std::size_t out = weight.shape()[0];
        const std::size_t in = weight.shape()[1];
        Tensor y = Tensor::zeros({out});
        for (std::size_t o = 0; o < out; ++o) {
          const double* w_row = weight.data() + o * in;
          double acc = bias[o];
          for (std::size_t i = 0; i < in; ++i) acc += w_row[i] * x[i];
          y[o] = acc;
        }
        x = std::move(y);
        break;
      }
    }
  }
  return x;
}

// Backpropagates one sample's loss gradient, accumulating parameter
// gradients into `grads` (which must be zeros_like the params).
void backward_one(const std::vector<LayerSpec>& layers, const ParamSet& params,
                  const std::vector<std::size_t>& param_begin,
                  const std::vector<LayerTrace>& traces, Tensor dy,
                  ParamSet& grads) {
  for (std::size_t li = layers.size(); li-- > 0;) {
    const LayerSpec& spec = layers[li];
    const LayerTrace& trace = traces[li];
    const bool want_dx = li > 0;
    switch (spec.kind) {
      case LayerKind::kConv2d: {
        const Tensor& weight = params[param_begin[li] + 1].value;
        Tensor dinput, dweight, dbias;
        conv2d_backward(trace.input, weight, dy, spec.stride, spec.padding,
                        want_dx ? &dinput : nullptr, &dweight, &dbias);
        axpy(1.0, dbias, grads[param_begin[li]].value);
        axpy(1.0, dweight, grads[param_begin[li] + 1].value);
        if (want_dx) dy = std::move(dinput);
        break;
      }
      case LayerKind::kGroupNorm: {
        const Tensor& scale_p = params[param_begin[li]].value;
        Tensor dx;
        group_norm_backward(spec, trace, scale_p, dy, dx,
                            grads[param_begin[li]].value,
                            grads[param_begin[li] + 1].value);
        dy = std::move(dx);
        break;
      }
      case LayerKind::kRelu: {
        Tensor dx = Tensor::zeros(trace.input.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) {
          dx[i] = trace.input[i] > 0.0 ? dy[i] : 0.0;
        }
        dy = std::move(dx);
        break;
      }
      case LayerKind::kMaxPool: {
        Tensor dx = Tensor::zeros(trace.input.shape());
        for (std::size_t j = 0; j < dy.size(); ++j) {
          dx[trace.argmax[j]] += dy[j];
        }
        dy = std::move(dx);
        break;
      }
      case LayerKind::kFlatten: {
        Tensor dx = Tensor::zeros(trace.input.shape());
        std::copy_n(dy.data(), dy.size(), dx.data());
        dy = std::move(dx);
        break;
      }
      case LayerKind::kFullyConnected: {
        const Tensor& weight = params[param_begin[li] + 1].value;
        const std::size_t out = weight.shape()[0];
        const std::size_t in = weight.shape()[1];
        Tensor& dbias = grads[param_begin[li]].value;
        Tensor& dweight = grads[param_begin[li] + 1].value;
        const Tensor& x = trace.input;
        for (std::size_t o = 0; o < out; ++o) {
          dbias[o] += dy[o];
          double* dw_row = dweight.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) dw_row[i] += dy[o] * x[i];
        }
        if (want_dx) {
          Tensor dx = Tensor::zeros({in});
          for (std::size_t o = 0; o < out; ++o) {
            const double* w_row = weight.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) dx[i] += w_row[i] * dy[o];
          }
          dy = std::move(dx);
        }
        break;
      }
    }
  }
}

double cross_entropy_and_dlogits(const Tensor& logits, int label,
                                 Tensor* dlogits) {
  const std::size_t k = logits.size();
  double max_logit = logits[0];
  for (std::size_t j = 1; j < k; ++j) max_logit = std::max(max_logit, logits[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits[j] - max_logit);
  const double lse = max_logit + std::log(sum);
  if (dlogits != nullptr) {
    *dlogits = Tensor::zeros({k});
    for (std::size_t j = 0; j < k; ++j) {
      (*dlogits)[j] = std::exp(logits[j] - lse);
    }
    (*dlogits)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return lse - logits[static_cast<std::size_t>(label)];
}

Tensor slice_sample(const Tensor& batch, std::size_t b, const Shape& sample) {
  const std::size_t stride = shape_elements(sample);
  std::vector<double> data(stride);
  std::copy_n(batch.data() + b * stride, stride, data.data());
  return Tensor::from_data(sample, std::move(data));
}

}  // namespace

LayerSpec LayerSpec::conv2d(std::size_t out_channels, std::size_t kernel,
                            std::size_t stride, std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::group_norm(std::size_t groups, double epsilon) {
  LayerSpec s;
  s.kind = LayerKind::kGroupNorm;
  s.groups = groups;
  s.epsilon = epsilon;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  return s;
}

LayerSpec LayerSpec::max_pool(std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

LayerSpec LayerSpec::fully_connected(std::size_t out_features) {
  LayerSpec s;
  s.kind = LayerKind::kFullyConnected;
  s.out_features = out_features;
  return s;
}

void Model::resolve_shapes() {
  if (layers_.empty()) {
    throw ConfigError("model: layer list must not be empty");
  }
  io_shapes_.clear();
  io_shapes_.push_back(input_shape_);
  Shape cur = input_shape_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerSpec& spec = layers_[l];
    switch (spec.kind) {
      case LayerKind::kConv2d: {
        if (cur.size() != 3) {
          throw ConfigError("conv2d layer needs [C,H,W] input");
        }
        if (spec.out_channels == 0 || spec.kernel == 0 || spec.stride == 0) {
          throw ConfigError("conv2d layer has invalid hyperparameters");
        }
        if (cur[1] + 2 * spec.padding < spec.kernel ||
            cur[2] + 2 * spec.padding < spec.kernel) {
          throw ConfigError("conv2d kernel is larger than its input");
        }
        cur = {spec.out_channels,
               (cur[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1,
               (cur[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1};
        break;
      }
      case LayerKind::kGroupNorm:
        if (cur.size() != 3) {
          throw ConfigError("group_norm layer needs [C,H,W] input");
        }
        if (spec.groups == 0 || cur[0] % spec.groups != 0) {
          throw ConfigError("group_norm groups must divide the channel count");
        }
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kMaxPool:
        if (cur.size() != 3) {
          throw ConfigError("max_pool layer needs [C,H,W] input");
        }
        if (spec.kernel == 0 || spec.stride == 0 || cur[1] < spec.kernel ||
            cur[2] < spec.kernel) {
          throw ConfigError("max_pool window does not fit its input");
        }
        cur = {cur[0], (cur[1] - spec.kernel) / spec.stride + 1,
               (cur[2] - spec.kernel) / spec.stride + 1};
        break;
      case LayerKind::kFlatten:
        cur = {shape_elements(cur)};
        break;
      case LayerKind::kFullyConnected:
        if (cur.size() != 1) {
          throw ConfigError("fully_connected layer needs flattened input");
        }
        if (spec.out_features == 0) {
          throw ConfigError("fully_connected layer needs out_features > 0");
        }
        cur = {spec.out_features};
        break;
    }
    io_shapes_.push_back(cur);
  }
  if (layers_.back().kind != LayerKind::kFullyConnected) {
    throw ConfigError("model must end in a fully-connected layer");
  }
  if (cur.size() != 1 || cur[0] != class_count_) {
    throw ConfigError("final layer width must equal class_count");
  }
}

void Model::index_params() {
  param_begin_.assign(layers_.size(), 0);
  std::size_t next = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    param_begin_[l] = next;
    next += layer_param_schema(layers_[l], io_shapes_[l], l).size();
  }
}

Model Model::build(std::vector<LayerSpec> layers, Shape input_shape,
                   std::size_t class_count, RngStream& init_stream) {
  Model m;
  m.layers_ = std::move(layers);
  m.input_shape_ = std::move(input_shape);
  m.class_count_ = class_count;
  m.resolve_shapes();
  m.index_params();

  for (std::size_t l = 0; l < m.layers_.size(); ++l) {
    const LayerSpec& spec = m.layers_[l];
    for (const ParamSchemaEntry& entry :
         layer_param_schema(spec, m.io_shapes_[l], l)) {
      ParamEntry p;
      p.name = entry.name;
      p.prunable = entry.prunable;
      if (entry.prunable) {
        p.value = scale(gaussian_sample(init_stream, entry.shape),
                        he_scale(spec, m.io_shapes_[l]));
      } else if (spec.kind == LayerKind::kGroupNorm &&
                 entry.name.ends_with(".scale")) {
        p.value = Tensor::full(entry.shape, 1.0);
      } else {
        p.value = Tensor::zeros(entry.shape);
      }
      m.params_.push_back(std::move(p));
    }
  }
  return m;
}

Model Model::from_parts(std::vector<LayerSpec> layers, Shape input_shape,
                        std::size_t class_count, ParamSet params) {
  Model m;
  m.layers_ = std::move(layers);
  m.input_shape_ = std::move(input_shape);
  m.class_count_ = class_count;
  m.resolve_shapes();
  m.index_params();

  std::size_t cursor = 0;
  for (std::size_t l = 0; l < m.layers_.size(); ++l) {
    for (const ParamSchemaEntry& entry :
         layer_param_schema(m.layers_[l], m.io_shapes_[l], l)) {
      if (cursor >= params.size()) {
        throw ConfigError("model parts: missing parameter " + entry.name);
      }
      ParamEntry& p = params[cursor++];
      if (p.name != entry.name || p.value.shape() != entry.shape) {
        throw ConfigError("model parts: parameter " + entry.name +
                          " does not match the layer table");
      }
      p.prunable = entry.prunable;
    }
  }
  if (cursor != params.size()) {
    throw ConfigError("model parts: extra parameter tensors");
  }
  m.params_ = std::move(params);
  return m;
}

Tensor Model::forward(const Tensor& inputs) const {
  if (inputs.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(),
                  inputs.shape().begin() + 1)) {
    throw ShapeError("forward: input shape does not match the model");
  }
  const std::size_t batch = inputs.shape()[0];
  Tensor logits = Tensor::zeros({batch, class_count_});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch); ++b) {
    const Tensor sample =
        slice_sample(inputs, static_cast<std::size_t>(b), input_shape_);
    const Tensor row =
        forward_one(layers_, params_, param_begin_, sample, nullptr);
    std::copy_n(row.data(), class_count_,
                logits.data() + static_cast<std::size_t>(b) * class_count_);
  }
  return logits;
}

std::pair<double, PerSampleGrads> Model::loss_and_per_sample_gradients(
    const Batch& batch) const {
  PerSampleGrads grads;
  if (batch.empty()) {
    return {0.0, grads};
  }
  for (int label : batch.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= class_count_) {
      throw DataError("label " + std::to_string(label) +
                      " outside [0, " + std::to_string(class_count_) + ")");
    }
  }
  const std::size_t b_count = batch.size();
  grads.samples.resize(b_count);
  std::vector<double> losses(b_count, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(b_count);
       ++bi) {
    const std::size_t b = static_cast<std::size_t>(bi);
    const Tensor sample = slice_sample(batch.inputs, b, input_shape_);
    std::vector<LayerTrace> traces;
    const Tensor logits =
        forward_one(layers_, params_, param_begin_, sample, &traces);
    Tensor dlogits;
    losses[b] = cross_entropy_and_dlogits(logits, batch.labels[b], &dlogits);
    grads.samples[b] = zeros_like(params_);
    backward_one(layers_, params_, param_begin_, traces, std::move(dlogits),
                 grads.samples[b]);
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return {total / static_cast<double>(b_count), std::move(grads)};
}

void Model::apply_update(const ParamSet& delta) {
  if (delta.size() != params_.size()) {
    throw ShapeError("apply_update: parameter count mismatch");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (delta[i].name != params_[i].name ||
        !delta[i].value.same_shape(params_[i].value)) {
      throw ShapeError("apply_update: mismatch at " + params_[i].name);
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    axpy(-1.0, delta[i].value, params_[i].value);
    if (!params_[i].value.all_finite()) {
      throw DataError("apply_update: non-finite values in " + params_[i].name);
    }
  }
}

void Model::reinit_last_layer(std::size_t new_class_count, RngStream& stream) {
  const std::size_t last = layers_.size() - 1;
  if (layers_[last].kind != LayerKind::kFullyConnected) {
    throw ConfigError("reinit_last_layer: final layer is not fully connected");
  }
  if (new_class_count == 0) {
    throw ConfigError("reinit_last_layer: class count must be positive");
  }
  const std::size_t in_features = io_shapes_[last][0];
  layers_[last].out_features = new_class_count;
  class_count_ = new_class_count;
  io_shapes_[last + 1] = {new_class_count};

  const std::size_t base = param_begin_[last];
  params_[base].value = Tensor::zeros({new_class_count});
  params_[base + 1].value =
      scale(gaussian_sample(stream, {new_class_count, in_features}),
            he_scale(layers_[last], io_shapes_[last]));
}

void Model::include_biases_in_pruning() {
  for (ParamEntry& p : params_) p.prunable = true;
}

std::vector<int> Model::predict(const Tensor& inputs) const {
  const Tensor logits = forward(inputs);
  const std::size_t batch = logits.shape()[0];
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = logits.data() + b * class_count_;
    std::size_t best = 0;
    for (std::size_t j = 1; j < class_count_; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

EvalMetrics evaluate(const Model& model, const Tensor& inputs,
                     std::span<const int> labels) {
  const Tensor logits = model.forward(inputs);
  const std::size_t n = labels.size();
  const std::size_t k = model.class_count();
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> row(logits.data() + b * k, logits.data() + (b + 1) * k);
    const Tensor row_t = Tensor::from_data({k}, std::move(row));
    loss += cross_entropy_and_dlogits(row_t, labels[b], nullptr);
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row_t[j] > row_t[best]) best = j;
    }
    correct += static_cast<std::size_t>(best) ==
               static_cast<std::size_t>(labels[b]);
  }
  return {static_cast<double>(correct) / static_cast<double>(n),
          loss / static_cast<double>(n)};
}

std::size_t total_param_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const ParamEntry& p : params) n += p.value.size();
  return n;
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet out;
  out.reserve(params.size());
  for (const ParamEntry& p : params) {
    out.push_back({p.name, Tensor::zeros(p.value.shape()), p.prunable});
  }
  return out;
}

void axpy_params(double a, const ParamSet& x, ParamSet& y) {
  if (x.size() != y.size()) {
    throw ShapeError("axpy_params: parameter count mismatch");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    axpy(a, x[i].value, y[i].value);
  }
}

void scale_params_in_place(ParamSet& params, double factor) {
  for (ParamEntry& p : params) {
    for (double& v : p.value.values()) v *= factor;
  }
}

}  // namespace dpssgd
