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

#include "dpssgd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "dpssgd/errors.hpp"

namespace dpssgd {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'S', 'S'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* data, std::size_t n) {
    bytes_.insert(bytes_.end(), data, data + n);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw IoError("truncated checkpoint: " + path_);
    }
  }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string path_;
};

void write_layer(Writer& w, const LayerSpec& spec) {
  w.u32(static_cast<std::uint32_t>(spec.kind));
  w.u64(spec.out_channels);
  w.u64(spec.kernel);
  w.u64(spec.stride);
  w.u64(spec.padding);
  w.u64(spec.groups);
  w.u64(spec.out_features);
  w.f64(spec.epsilon);
}

LayerSpec read_layer(Reader& r, const std::string& path) {
  LayerSpec spec;
  const std::uint32_t kind = r.u32();
  if (kind > static_cast<std::uint32_t>(LayerKind::kFullyConnected)) {
    throw FormatError("unknown layer kind in checkpoint: " + path);
  }
  spec.kind = static_cast<LayerKind>(kind);
  spec.out_channels = r.u64();
  spec.kernel = r.u64();
  spec.stride = r.u64();
  spec.padding = r.u64();
  spec.groups = r.u64();
  spec.out_features = r.u64();
  spec.epsilon = r.f64();
  return spec;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const FrozenMask* mask) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.class_count()));

  w.u32(static_cast<std::uint32_t>(model.input_shape().size()));
  for (std::size_t dim : model.input_shape()) w.u64(dim);

  w.u32(static_cast<std::uint32_t>(model.layers().size()));
  for (const LayerSpec& spec : model.layers()) write_layer(w, spec);

  w.u32(static_cast<std::uint32_t>(model.params().size()));
  for (const ParamEntry& p : model.params()) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t dim : p.value.shape()) w.u64(dim);
    for (double v : p.value.values()) w.f64(v);
  }

  if (mask != nullptr) {
    if (mask->partition.tensors.size() != model.params().size()) {
      throw ShapeError("frozen mask does not match the model parameters");
    }
    w.u32(static_cast<std::uint32_t>(mask->partition.tensors.size()));
    for (const TensorPartition& part : mask->partition.tensors) {
      w.u64(part.non_selected.size());
      for (std::uint64_t i : part.non_selected) w.u64(i);
    }
  } else {
    w.u32(0);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write checkpoint: " + path);
  }
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) {
    throw IoError("checkpoint write failed: " + path);
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint: " + path);
  }
  std::vector<char> bytes{std::istreambuf_iterator<char>(in),
                          std::istreambuf_iterator<char>()};
  Reader r(std::move(bytes), path);

  if (r.str(4) != std::string(kMagic, 4)) {
    throw FormatError("bad checkpoint magic: " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + ": " + path);
  }
  const std::size_t class_count = r.u32();

  Shape input_shape(r.u32());
  for (std::size_t& dim : input_shape) dim = r.u64();

  std::vector<LayerSpec> layers(r.u32());
  for (LayerSpec& spec : layers) spec = read_layer(r, path);

  ParamSet params(r.u32());
  for (ParamEntry& p : params) {
    p.name = r.str(r.u32());
    Shape shape(r.u32());
    std::size_t n = 1;
    for (std::size_t& dim : shape) {
      dim = r.u64();
      n *= dim;
    }
    r.need(n * 8);
    std::vector<double> data(n);
    for (double& v : data) v = r.f64();
    p.value = Tensor::from_data(std::move(shape), std::move(data));
  }

  LoadedCheckpoint loaded{
      Model::from_parts(std::move(layers), std::move(input_shape), class_count,
                        std::move(params)),
      std::nullopt};

  const std::uint32_t mask_tensors = r.u32();
  if (mask_tensors != 0) {
    if (mask_tensors != loaded.model.params().size()) {
      throw FormatError("frozen mask tensor count mismatch: " + path);
    }
    FrozenMask mask;
    mask.partition.tensors.resize(mask_tensors);
    for (std::size_t t = 0; t < mask_tensors; ++t) {
      const std::size_t size = loaded.model.params()[t].value.size();
      TensorPartition& part = mask.partition.tensors[t];
      part.non_selected.resize(r.u64());
      std::uint64_t previous = 0;
      for (std::size_t k = 0; k < part.non_selected.size(); ++k) {
        part.non_selected[k] = r.u64();
        if (part.non_selected[k] >= size ||
            (k > 0 && part.non_selected[k] <= previous)) {
          throw FormatError("frozen mask indices not sorted in range: " + path);
        }
        previous = part.non_selected[k];
      }
      // Selected set is the complement, rebuilt rather than stored.
      part.selected.reserve(size - part.non_selected.size());
      std::size_t cursor = 0;
      for (std::uint64_t i = 0; i < size; ++i) {
        if (cursor < part.non_selected.size() &&
            part.non_selected[cursor] == i) {
          ++cursor;
        } else {
          part.selected.push_back(i);
        }
      }
    }
    loaded.mask = std::move(mask);
  }

  if (!r.exhausted()) {
    throw FormatError("trailing bytes in checkpoint: " + path);
  }
  return loaded;
}

}  // namespace dpssgd
