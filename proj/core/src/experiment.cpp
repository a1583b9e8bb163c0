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

#include "dpssgd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "dpssgd/accountant.hpp"
#include "dpssgd/checkpoint.hpp"
#include "dpssgd/dp_step.hpp"
#include "dpssgd/errors.hpp"
#include "json.hpp"

namespace dpssgd {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Child-stream tags hung off each run's root stream. Keeping them in one
// place guarantees the same draw never serves two purposes.
namespace stream_tags {
constexpr std::uint64_t kModelInit = 1;
constexpr std::uint64_t kReinit = 2;
constexpr std::uint64_t kSelection = 3;
constexpr std::uint64_t kNoise = 4;
constexpr std::uint64_t kSampler = 5;
constexpr std::uint64_t kShuffle = 6;
}  // namespace stream_tags

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt_optional(const std::optional<double>& v) {
  return v.has_value() ? fmt_double(*v) : std::string();
}

// --------------------------------------------------------------------------
// JSON helpers

[[noreturn]] void config_fail(const std::string& message) {
  throw ConfigError("config: " + message);
}

void check_known_keys(const json& object, const std::string& section,
                      std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : object.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return key == k;
        }) == allowed.end()) {
      config_fail("unknown key \"" + key + "\" in " + section);
    }
  }
}

template <typename T>
T get_or(const json& object, const char* key, T fallback) {
  if (!object.contains(key)) return fallback;
  try {
    return object.at(key).get<T>();
  } catch (const json::exception&) {
    config_fail(std::string("field \"") + key + "\" has the wrong type");
  }
}

Shape shape_from_json(const json& array, const char* key) {
  if (!array.is_array() || array.empty()) {
    config_fail(std::string(key) + " must be a non-empty array");
  }
  Shape shape;
  for (const auto& v : array) {
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) {
      config_fail(std::string(key) + " entries must be positive integers");
    }
    shape.push_back(v.get<std::size_t>());
  }
  return shape;
}

LayerSpec layer_from_json(const json& object) {
  check_known_keys(object, "model.layers[]",
                   {"kind", "out_channels", "kernel", "stride", "padding",
                    "groups", "epsilon", "out_features"});
  const std::string kind = get_or<std::string>(object, "kind", "");
  if (kind == "conv2d") {
    return LayerSpec::conv2d(get_or<std::size_t>(object, "out_channels", 0),
                             get_or<std::size_t>(object, "kernel", 0),
                             get_or<std::size_t>(object, "stride", 1),
                             get_or<std::size_t>(object, "padding", 0));
  }
  if (kind == "group_norm") {
    return LayerSpec::group_norm(get_or<std::size_t>(object, "groups", 0),
                                 get_or<double>(object, "epsilon", 1e-5));
  }
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "max_pool") {
    return LayerSpec::max_pool(get_or<std::size_t>(object, "kernel", 2),
                               get_or<std::size_t>(object, "stride", 2));
  }
  if (kind == "flatten") return LayerSpec::flatten();
  if (kind == "fully_connected") {
    return LayerSpec::fully_connected(
        get_or<std::size_t>(object, "out_features", 0));
  }
  config_fail("unknown layer kind \"" + kind + "\"");
}

json layer_to_json(const LayerSpec& spec) {
  json j;
  switch (spec.kind) {
    case LayerKind::kConv2d:
      j["kind"] = "conv2d";
      j["out_channels"] = spec.out_channels;
      j["kernel"] = spec.kernel;
      j["stride"] = spec.stride;
      j["padding"] = spec.padding;
      break;
    case LayerKind::kGroupNorm:
      j["kind"] = "group_norm";
      j["groups"] = spec.groups;
      j["epsilon"] = spec.epsilon;
      break;
    case LayerKind::kRelu:
      j["kind"] = "relu";
      break;
    case LayerKind::kMaxPool:
      j["kind"] = "max_pool";
      j["kernel"] = spec.kernel;
      j["stride"] = spec.stride;
      break;
    case LayerKind::kFlatten:
      j["kind"] = "flatten";
      break;
    case LayerKind::kFullyConnected:
      j["kind"] = "fully_connected";
      j["out_features"] = spec.out_features;
      break;
  }
  return j;
}

// --------------------------------------------------------------------------
// Mechanism resolution shared by calibrate/train/sweep.

struct Mechanism {
  double sampling_rate = 0.0;
  std::uint64_t steps = 0;
  double sigma = 0.0;
  double achieved_epsilon = 0.0;
  int best_order = 0;
};

Mechanism resolve_mechanism(const ExperimentConfig& config,
                            std::size_t private_size) {
  Mechanism m;
  m.sampling_rate = std::min(
      1.0, static_cast<double>(config.dp.batch_size) /
               static_cast<double>(private_size));
  m.steps = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(std::llround(
             static_cast<double>(config.dp.epochs) / m.sampling_rate)));
  if (config.dp.sigma.has_value()) {
    m.sigma = *config.dp.sigma;
  } else {
    m.sigma = calibrate_sigma({*config.dp.epsilon_target, config.dp.delta},
                              m.sampling_rate, m.steps);
  }
  if (m.sigma > 0.0) {
    const RdpAccountant accountant(m.sampling_rate, m.sigma);
    const EpsilonReport report =
        accountant.epsilon_after(m.steps, config.dp.delta);
    m.achieved_epsilon = report.epsilon;
    m.best_order = report.best_order;
  } else {
    m.achieved_epsilon = std::numeric_limits<double>::infinity();
  }
  return m;
}

std::string setting_label(const SparsityConfig& sparsity) {
  return to_string(sparsity.criterion) + "-" + to_string(sparsity.mode);
}

std::string run_file_stem(const SparsityConfig& sparsity) {
  return setting_label(sparsity) + "_p" + fmt_double(sparsity.rate);
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << text;
}

void write_config_echo(const ExperimentConfig& config,
                       const std::string& command, const json& resolved) {
  json echo = json::parse(config_to_json(config));
  echo["resolved"] = resolved;
  const fs::path path =
      fs::path(config.output_dir) / ("config_echo_" + command + ".json");
  write_text_file(path, echo.dump(2) + "\n");
}

Batch batch_of_prefix(const Dataset& d, std::size_t cap) {
  MiniBatch prefix;
  const std::size_t n = std::min(cap, d.size());
  prefix.indices.resize(n);
  std::iota(prefix.indices.begin(), prefix.indices.end(), std::size_t{0});
  return gather(d, prefix);
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// --------------------------------------------------------------------------
// Pretraining (non-private SGD on the public split).

double train_plain_epochs(Model& model, const Dataset& data,
                          std::size_t epochs, double learning_rate,
                          std::size_t batch_size, RngStream shuffle_stream) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double last_loss = 0.0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const std::size_t j =
          i + static_cast<std::size_t>(
                  shuffle_stream.next_below(order.size() - i));
      std::swap(order[i], order[j]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      MiniBatch mb;
      const std::size_t stop = std::min(start + batch_size, order.size());
      mb.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::sort(mb.indices.begin(), mb.indices.end());
      const Batch batch = gather(data, mb);
      auto [loss, grads] = model.loss_and_per_sample_gradients(batch);
      last_loss = loss;
      ParamSet delta = zeros_like(model.params());
      for (const ParamSet& g : grads.samples) axpy_params(1.0, g, delta);
      scale_params_in_place(
          delta, learning_rate / static_cast<double>(batch.size()));
      model.apply_update(delta);
    }
  }
  return last_loss;
}

}  // namespace

// --------------------------------------------------------------------------
// Strings and config plumbing

std::string to_string(SparsityMode mode) {
  return mode == SparsityMode::kFreezing ? "freezing" : "selection";
}

std::string to_string(SelectionCriterion criterion) {
  return criterion == SelectionCriterion::kRandom ? "random" : "magnitude";
}

SparsityMode mode_from_string(const std::string& s) {
  if (s == "freezing") return SparsityMode::kFreezing;
  if (s == "selection") return SparsityMode::kSelection;
  throw ConfigError("unknown sparsity mode \"" + s + "\"");
}

SelectionCriterion criterion_from_string(const std::string& s) {
  if (s == "random") return SelectionCriterion::kRandom;
  if (s == "magnitude") return SelectionCriterion::kMagnitude;
  throw ConfigError("unknown selection criterion \"" + s + "\"");
}

std::string ExperimentConfig::checkpoint_path() const {
  if (!checkpoint.empty()) return checkpoint;
  return (fs::path(output_dir) / "pretrained.dpss").string();
}

void ExperimentConfig::validate() const {
  if (model.layers.empty()) config_fail("model.layers must not be empty");
  if (model.class_count == 0) config_fail("model.class_count must be positive");
  if (model.input_shape.empty()) config_fail("model.input_shape is required");
  if (seeds.empty()) config_fail("seeds must not be empty");
  if (output_dir.empty()) config_fail("output_dir is required");
  if (dp.epsilon_target.has_value() == dp.sigma.has_value()) {
    config_fail("exactly one of dp.epsilon and dp.sigma must be set");
  }
  if (dp.epsilon_target.has_value() && !(*dp.epsilon_target > 0.0)) {
    config_fail("dp.epsilon must be positive");
  }
  if (dp.sigma.has_value() && !(*dp.sigma >= 0.0)) {
    config_fail("dp.sigma must be nonnegative");
  }
  if (!(dp.delta > 0.0) || !(dp.delta < 1.0)) {
    config_fail("dp.delta must be in (0, 1)");
  }
  if (!(dp.clip_norm > 0.0)) config_fail("dp.clip_norm must be positive");
  if (!(dp.learning_rate > 0.0)) config_fail("dp.learning_rate must be positive");
  if (dp.batch_size == 0) config_fail("dp.batch_size must be positive");
  if (dp.epochs == 0) config_fail("dp.epochs must be positive");
  if (!(sparsity.rate >= 0.0) || sparsity.rate >= 1.0) {
    config_fail("sparsity.rate must be in [0, 1)");
  }
  if (pretrain.epochs == 0) config_fail("pretrain.epochs must be positive");
  if (!(pretrain.learning_rate > 0.0)) {
    config_fail("pretrain.learning_rate must be positive");
  }
  if (pretrain.batch_size == 0) config_fail("pretrain.batch_size must be positive");
  if (!(data.public_fraction > 0.0) || data.public_fraction >= 1.0) {
    config_fail("data.public_fraction must be in (0, 1)");
  }
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    config_fail(std::string("invalid JSON: ") + e.what());
  }
  check_known_keys(root, "top level",
                   {"version", "model", "data", "pretrain", "dp", "sparsity",
                    "seeds", "output_dir", "checkpoint"});
  if (get_or<int>(root, "version", -1) != kConfigVersion) {
    config_fail("missing or unsupported \"version\" (expected 1)");
  }

  ExperimentConfig config;

  if (!root.contains("model")) config_fail("\"model\" section is required");
  const json& model = root.at("model");
  check_known_keys(model, "model", {"input_shape", "layers", "class_count"});
  config.model.input_shape =
      shape_from_json(model.value("input_shape", json::array()),
                      "model.input_shape");
  if (!model.contains("layers") || !model.at("layers").is_array()) {
    config_fail("model.layers must be an array");
  }
  for (const json& layer : model.at("layers")) {
    config.model.layers.push_back(layer_from_json(layer));
  }
  config.model.class_count = get_or<std::size_t>(model, "class_count", 0);

  if (root.contains("data")) {
    const json& data = root.at("data");
    check_known_keys(data, "data",
                     {"kind", "train_images", "train_labels", "test_images",
                      "test_labels", "train_file", "test_file",
                      "public_fraction", "public_seed", "synthetic"});
    const std::string kind = get_or<std::string>(data, "kind", "synthetic");
    if (kind == "idx") {
      config.data.kind = DataSourceKind::kIdx;
    } else if (kind == "cifar") {
      config.data.kind = DataSourceKind::kCifar;
    } else if (kind == "synthetic") {
      config.data.kind = DataSourceKind::kSynthetic;
    } else {
      config_fail("unknown data.kind \"" + kind + "\"");
    }
    config.data.train_images = get_or<std::string>(data, "train_images", "");
    config.data.train_labels = get_or<std::string>(data, "train_labels", "");
    config.data.test_images = get_or<std::string>(data, "test_images", "");
    config.data.test_labels = get_or<std::string>(data, "test_labels", "");
    config.data.train_file = get_or<std::string>(data, "train_file", "");
    config.data.test_file = get_or<std::string>(data, "test_file", "");
    config.data.public_fraction =
        get_or<double>(data, "public_fraction", 0.05);
    config.data.public_seed = get_or<std::uint64_t>(data, "public_seed", 1);
    if (data.contains("synthetic")) {
      const json& syn = data.at("synthetic");
      check_known_keys(syn, "data.synthetic",
                       {"train_size", "test_size", "class_count",
                        "sample_shape", "noise_std", "seed"});
      config.data.synthetic.train_size =
          get_or<std::size_t>(syn, "train_size", 2048);
      config.data.synthetic.test_size =
          get_or<std::size_t>(syn, "test_size", 512);
      config.data.synthetic.class_count =
          get_or<std::size_t>(syn, "class_count", 4);
      if (syn.contains("sample_shape")) {
        config.data.synthetic.sample_shape =
            shape_from_json(syn.at("sample_shape"), "data.synthetic.sample_shape");
      }
      config.data.synthetic.noise_std = get_or<double>(syn, "noise_std", 0.08);
      config.data.synthetic.seed = get_or<std::uint64_t>(syn, "seed", 11);
    }
  }

  if (root.contains("pretrain")) {
    const json& pre = root.at("pretrain");
    check_known_keys(pre, "pretrain",
                     {"epochs", "learning_rate", "batch_size",
                      "learning_rate_grid"});
    config.pretrain.epochs = get_or<std::size_t>(pre, "epochs", 10);
    config.pretrain.learning_rate = get_or<double>(pre, "learning_rate", 0.1);
    config.pretrain.batch_size = get_or<std::size_t>(pre, "batch_size", 32);
    config.pretrain.learning_rate_grid =
        get_or<std::vector<double>>(pre, "learning_rate_grid", {});
  }

  if (root.contains("dp")) {
    const json& dp = root.at("dp");
    check_known_keys(dp, "dp",
                     {"epsilon", "sigma", "delta", "clip_norm",
                      "learning_rate", "batch_size", "epochs",
                      "eval_every_steps", "eval_test_cap", "force_reinit"});
    if (dp.contains("epsilon") && !dp.at("epsilon").is_null()) {
      config.dp.epsilon_target = dp.at("epsilon").get<double>();
    }
    if (dp.contains("sigma") && !dp.at("sigma").is_null()) {
      config.dp.sigma = dp.at("sigma").get<double>();
    }
    config.dp.delta = get_or<double>(dp, "delta", 1e-5);
    config.dp.clip_norm = get_or<double>(dp, "clip_norm", 1.0);
    config.dp.learning_rate = get_or<double>(dp, "learning_rate", 0.5);
    config.dp.batch_size = get_or<std::size_t>(dp, "batch_size", 128);
    config.dp.epochs = get_or<std::size_t>(dp, "epochs", 3);
    config.dp.eval_every_steps =
        get_or<std::size_t>(dp, "eval_every_steps", 0);
    config.dp.eval_test_cap = get_or<std::size_t>(dp, "eval_test_cap", 0);
    config.dp.force_reinit = get_or<bool>(dp, "force_reinit", false);
  }

  if (root.contains("sparsity")) {
    const json& sp = root.at("sparsity");
    check_known_keys(sp, "sparsity",
                     {"mode", "criterion", "rate", "prune_biases"});
    config.sparsity.mode =
        mode_from_string(get_or<std::string>(sp, "mode", "freezing"));
    config.sparsity.criterion =
        criterion_from_string(get_or<std::string>(sp, "criterion", "random"));
    config.sparsity.rate = get_or<double>(sp, "rate", 0.0);
    config.sparsity.prune_biases = get_or<bool>(sp, "prune_biases", false);
  }

  config.seeds = get_or<std::vector<std::uint64_t>>(root, "seeds",
                                                    {1, 2, 3, 4, 5});
  config.output_dir = get_or<std::string>(root, "output_dir", "runs/out");
  config.checkpoint = get_or<std::string>(root, "checkpoint", "");

  config.validate();
  return config;
}

ExperimentConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config: " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return config_from_json_text(buffer.str());
}

std::string config_to_json(const ExperimentConfig& config) {
  json root;
  root["version"] = kConfigVersion;
  root["model"]["input_shape"] = config.model.input_shape;
  root["model"]["class_count"] = config.model.class_count;
  root["model"]["layers"] = json::array();
  for (const LayerSpec& layer : config.model.layers) {
    root["model"]["layers"].push_back(layer_to_json(layer));
  }
  switch (config.data.kind) {
    case DataSourceKind::kIdx:
      root["data"]["kind"] = "idx";
      break;
    case DataSourceKind::kCifar:
      root["data"]["kind"] = "cifar";
      break;
    case DataSourceKind::kSynthetic:
      root["data"]["kind"] = "synthetic";
      break;
  }
  if (!config.data.train_images.empty())
    root["data"]["train_images"] = config.data.train_images;
  if (!config.data.train_labels.empty())
    root["data"]["train_labels"] = config.data.train_labels;
  if (!config.data.test_images.empty())
    root["data"]["test_images"] = config.data.test_images;
  if (!config.data.test_labels.empty())
    root["data"]["test_labels"] = config.data.test_labels;
  if (!config.data.train_file.empty())
    root["data"]["train_file"] = config.data.train_file;
  if (!config.data.test_file.empty())
    root["data"]["test_file"] = config.data.test_file;
  root["data"]["public_fraction"] = config.data.public_fraction;
  root["data"]["public_seed"] = config.data.public_seed;
  if (config.data.kind == DataSourceKind::kSynthetic) {
    root["data"]["synthetic"] = {
        {"train_size", config.data.synthetic.train_size},
        {"test_size", config.data.synthetic.test_size},
        {"class_count", config.data.synthetic.class_count},
        {"sample_shape", config.data.synthetic.sample_shape},
        {"noise_std", config.data.synthetic.noise_std},
        {"seed", config.data.synthetic.seed}};
  }
  root["pretrain"] = {{"epochs", config.pretrain.epochs},
                      {"learning_rate", config.pretrain.learning_rate},
                      {"batch_size", config.pretrain.batch_size}};
  if (!config.pretrain.learning_rate_grid.empty()) {
    root["pretrain"]["learning_rate_grid"] = config.pretrain.learning_rate_grid;
  }
  if (config.dp.epsilon_target.has_value()) {
    root["dp"]["epsilon"] = *config.dp.epsilon_target;
  }
  if (config.dp.sigma.has_value()) {
    root["dp"]["sigma"] = *config.dp.sigma;
  }
  root["dp"]["delta"] = config.dp.delta;
  root["dp"]["clip_norm"] = config.dp.clip_norm;
  root["dp"]["learning_rate"] = config.dp.learning_rate;
  root["dp"]["batch_size"] = config.dp.batch_size;
  root["dp"]["epochs"] = config.dp.epochs;
  root["dp"]["eval_every_steps"] = config.dp.eval_every_steps;
  root["dp"]["eval_test_cap"] = config.dp.eval_test_cap;
  root["dp"]["force_reinit"] = config.dp.force_reinit;
  root["sparsity"] = {{"mode", to_string(config.sparsity.mode)},
                      {"criterion", to_string(config.sparsity.criterion)},
                      {"rate", config.sparsity.rate},
                      {"prune_biases", config.sparsity.prune_biases}};
  root["seeds"] = config.seeds;
  root["output_dir"] = config.output_dir;
  if (!config.checkpoint.empty()) root["checkpoint"] = config.checkpoint;
  return root.dump(2);
}

// --------------------------------------------------------------------------
// Data resolution

DataBundle resolve_data(const DataConfig& data, const ModelConfig& model) {
  Dataset train, test;
  switch (data.kind) {
    case DataSourceKind::kIdx:
      train = load_idx(data.train_images, data.train_labels);
      test = load_idx(data.test_images, data.test_labels);
      break;
    case DataSourceKind::kCifar:
      train = load_cifar_binary(data.train_file);
      test = load_cifar_binary(data.test_file);
      break;
    case DataSourceKind::kSynthetic: {
      const SyntheticDataConfig& syn = data.synthetic;
      // One blob population; the tail is held out for testing so train and
      // test share the same class means.
      const Dataset all = synthetic_blobs(
          syn.train_size + syn.test_size, syn.class_count, syn.sample_shape,
          syn.noise_std, syn.seed, Provenance::kPrivate);
      std::vector<std::size_t> train_idx(syn.train_size);
      std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
      std::vector<std::size_t> test_idx(syn.test_size);
      std::iota(test_idx.begin(), test_idx.end(), syn.train_size);
      train = take(all, train_idx, Provenance::kPrivate);
      test = take(all, test_idx, Provenance::kPrivate);
      break;
    }
  }

  if (train.sample_shape() != model.input_shape) {
    throw ConfigError("data sample shape does not match model.input_shape");
  }
  if (train.class_count > model.class_count) {
    throw ConfigError("data has more classes than model.class_count");
  }
  train.class_count = model.class_count;
  test.class_count = model.class_count;

  const auto public_idx =
      stratified_indices(train, data.public_fraction, data.public_seed);
  const auto private_idx = complement_indices(train.size(), public_idx);
  if (public_idx.size() + private_idx.size() != train.size()) {
    throw DataError("public/private split is not a partition");
  }
  DataBundle bundle{take(train, public_idx, Provenance::kPublic),
                    take(train, private_idx, Provenance::kPrivate),
                    std::move(test)};
  return bundle;
}

// --------------------------------------------------------------------------
// CSV emission

std::string metrics_csv_header() {
  return "setting,mode,criterion,p,epsilon_target,sigma,seed,step,epoch,"
         "train_loss,test_acc,eps_spent";
}

std::string format_metrics_row(const MetricsRow& row) {
  std::string out;
  out += row.setting;
  out += ',';
  out += to_string(row.mode);
  out += ',';
  out += to_string(row.criterion);
  out += ',';
  out += fmt_double(row.rate);
  out += ',';
  out += fmt_optional(row.epsilon_target);
  out += ',';
  out += fmt_double(row.sigma);
  out += ',';
  out += std::to_string(row.seed);
  out += ',';
  out += std::to_string(row.step);
  out += ',';
  out += fmt_double(row.epoch);
  out += ',';
  out += fmt_double(row.train_loss);
  out += ',';
  out += fmt_double(row.test_acc);
  out += ',';
  out += fmt_double(row.eps_spent);
  return out;
}

std::string aggregate_csv_header() {
  return "setting,mode,criterion,p,epsilon_target,sigma,seeds,acc_mean,"
         "acc_std,eps_final";
}

std::string format_aggregate_row(const AggregateRow& row) {
  std::string out;
  out += row.setting;
  out += ',';
  out += to_string(row.mode);
  out += ',';
  out += to_string(row.criterion);
  out += ',';
  out += fmt_double(row.rate);
  out += ',';
  out += fmt_optional(row.epsilon_target);
  out += ',';
  out += fmt_double(row.sigma);
  out += ',';
  out += std::to_string(row.seed_count);
  out += ',';
  out += fmt_double(row.acc_mean);
  out += ',';
  out += fmt_double(row.acc_std);
  out += ',';
  out += fmt_double(row.eps_final);
  return out;
}

// --------------------------------------------------------------------------
// Commands

PretrainOutcome run_pretrain(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir);
  const DataBundle bundle = resolve_data(config.data, config.model);

  RngStream root(config.seeds.front(), 0);
  RngStream init = root.fork(stream_tags::kModelInit);
  const Model fresh = Model::build(config.model.layers,
                                   config.model.input_shape,
                                   config.model.class_count, init);

  // Optional coarse learning-rate probe on the public split.
  double chosen_lr = config.pretrain.learning_rate;
  if (!config.pretrain.learning_rate_grid.empty()) {
    double best_acc = -1.0;
    for (double candidate : config.pretrain.learning_rate_grid) {
      Model probe = fresh;
      train_plain_epochs(probe, bundle.public_train, 1, candidate,
                         config.pretrain.batch_size,
                         root.fork(stream_tags::kShuffle));
      const EvalMetrics metrics = evaluate(probe, bundle.public_train.inputs,
                                           bundle.public_train.labels);
      if (metrics.accuracy > best_acc) {
        best_acc = metrics.accuracy;
        chosen_lr = candidate;
      }
    }
  }

  Model model = fresh;
  train_plain_epochs(model, bundle.public_train, config.pretrain.epochs,
                     chosen_lr, config.pretrain.batch_size,
                     root.fork(stream_tags::kShuffle));

  PretrainOutcome outcome;
  outcome.checkpoint_path = config.checkpoint_path();
  outcome.chosen_learning_rate = chosen_lr;
  outcome.train_accuracy = evaluate(model, bundle.public_train.inputs,
                                    bundle.public_train.labels)
                               .accuracy;
  outcome.test_accuracy =
      evaluate(model, bundle.test.inputs, bundle.test.labels).accuracy;
  save_checkpoint(outcome.checkpoint_path, model);

  write_config_echo(config, "pretrain",
                    json{{"chosen_learning_rate", chosen_lr},
                         {"public_train_accuracy", outcome.train_accuracy},
                         {"test_accuracy", outcome.test_accuracy},
                         {"public_examples", bundle.public_train.size()}});
  return outcome;
}

CalibrationOutcome run_calibrate(const ExperimentConfig& config) {
  config.validate();
  const DataBundle bundle = resolve_data(config.data, config.model);
  const Mechanism m = resolve_mechanism(config, bundle.private_train.size());
  CalibrationOutcome outcome;
  outcome.epsilon = config.dp.epsilon_target.value_or(m.achieved_epsilon);
  outcome.delta = config.dp.delta;
  outcome.sampling_rate = m.sampling_rate;
  outcome.steps = m.steps;
  outcome.sigma = m.sigma;
  outcome.achieved_epsilon = m.achieved_epsilon;
  outcome.best_order = m.best_order;
  return outcome;
}

namespace {

SeedRunResult train_one_seed(const ExperimentConfig& config,
                             const DataBundle& bundle,
                             const LoadedCheckpoint& start,
                             const Mechanism& mechanism, std::uint64_t seed) {
  SeedRunResult result;
  result.seed = seed;

  RngStream root(seed, 0);
  Model model = start.model;
  if (config.dp.force_reinit ||
      model.class_count() != bundle.private_train.class_count) {
    RngStream reinit = root.fork(stream_tags::kReinit);
    model.reinit_last_layer(bundle.private_train.class_count, reinit);
  }
  if (config.sparsity.prune_biases) {
    model.include_biases_in_pruning();
  }

  SparsityPlan plan;
  plan.mode = config.sparsity.mode;
  plan.criterion = config.sparsity.criterion;
  plan.rate = config.sparsity.rate;
  plan.selection_stream = root.fork(stream_tags::kSelection);

  std::optional<FrozenMask> mask;
  if (plan.mode == SparsityMode::kFreezing) {
    if (start.mask.has_value()) {
      validate_partition(start.mask->partition, model.params());
      mask = start.mask;
    } else {
      mask = FrozenMask{
          partition_for_step(plan, 0, model.params(), nullptr)};
    }
  }
  const ParamSet initial_params = model.params();

  DpStepConfig step_config;
  step_config.clip_norm = config.dp.clip_norm;
  step_config.noise_multiplier = mechanism.sigma;
  step_config.learning_rate = config.dp.learning_rate;
  step_config.expected_batch_size = config.dp.batch_size;

  RngStream noise = root.fork(stream_tags::kNoise);
  RngStream sampler = root.fork(stream_tags::kSampler);

  std::optional<RdpAccountant> accountant;
  if (mechanism.sigma > 0.0) {
    accountant.emplace(mechanism.sampling_rate, mechanism.sigma);
  }

  const std::size_t eval_every =
      config.dp.eval_every_steps != 0
          ? config.dp.eval_every_steps
          : static_cast<std::size_t>(
                std::ceil(1.0 / mechanism.sampling_rate));
  const Batch capped_test =
      config.dp.eval_test_cap != 0
          ? batch_of_prefix(bundle.test, config.dp.eval_test_cap)
          : Batch{};

  double loss_window = 0.0;
  std::size_t loss_count = 0;
  for (std::uint64_t step = 0; step < mechanism.steps; ++step) {
    const IndexPartition partition =
        plan.mode == SparsityMode::kFreezing
            ? partition_for_step(plan, step, model.params(), &*mask)
            : partition_for_step(plan, step, model.params(), nullptr);
    if (step == 0) {
      result.selected_coordinates = partition.selected_count();
      result.non_selected_coordinates = partition.non_selected_count();
    }
    const MiniBatch mini =
        poisson_sample(bundle.private_train, mechanism.sampling_rate, sampler);
    const Batch batch = gather(bundle.private_train, mini);
    const DpStepResult step_result =
        dp_ssgd_step(model, batch, step_config, partition, noise);
    if (step_result.realized_batch > 0) {
      loss_window += step_result.mean_batch_loss;
      ++loss_count;
    }

    const bool last_step = step + 1 == mechanism.steps;
    if ((step + 1) % eval_every == 0 || last_step) {
      const EvalMetrics test_metrics =
          (last_step || config.dp.eval_test_cap == 0)
              ? evaluate(model, bundle.test.inputs, bundle.test.labels)
              : evaluate(model, capped_test.inputs, capped_test.labels);
      const double eps =
          accountant.has_value()
              ? accountant->epsilon_after(step + 1, config.dp.delta).epsilon
              : std::numeric_limits<double>::infinity();

      MetricsRow row;
      row.setting = setting_label(config.sparsity);
      row.mode = config.sparsity.mode;
      row.criterion = config.sparsity.criterion;
      row.rate = config.sparsity.rate;
      row.epsilon_target = config.dp.epsilon_target;
      row.sigma = mechanism.sigma;
      row.seed = seed;
      row.step = step + 1;
      row.epoch = static_cast<double>(step + 1) * mechanism.sampling_rate;
      row.train_loss = loss_count > 0
                           ? loss_window / static_cast<double>(loss_count)
                           : 0.0;
      row.test_acc = test_metrics.accuracy;
      row.eps_spent = eps;
      result.rows.push_back(row);

      loss_window = 0.0;
      loss_count = 0;
    }
  }

  // Frozen-coordinate audit: every non-selected coordinate must still carry
  // its initial bits.
  if (plan.mode == SparsityMode::kFreezing) {
    for (std::size_t t = 0; t < model.params().size(); ++t) {
      for (std::uint64_t i : mask->partition.tensors[t].non_selected) {
        if (model.params()[t].value[i] != initial_params[t].value[i]) {
          throw StateError("frozen coordinate moved in " +
                           model.params()[t].name);
        }
      }
    }
  }

  result.final_test_accuracy = result.rows.back().test_acc;

  const std::string stem = run_file_stem(config.sparsity);
  const fs::path metrics_path =
      fs::path(config.output_dir) /
      ("metrics_" + stem + "_seed" + std::to_string(seed) + ".csv");
  std::string text = metrics_csv_header() + "\n";
  for (const MetricsRow& row : result.rows) {
    text += format_metrics_row(row) + "\n";
  }
  write_text_file(metrics_path, text);
  result.metrics_path = metrics_path.string();

  const fs::path final_path =
      fs::path(config.output_dir) /
      ("final_" + stem + "_seed" + std::to_string(seed) + ".dpss");
  save_checkpoint(final_path.string(), model,
                  mask.has_value() ? &*mask : nullptr);
  return result;
}

AggregateRow aggregate_from_runs(const ExperimentConfig& config,
                                 const Mechanism& mechanism,
                                 const std::vector<SeedRunResult>& runs) {
  AggregateRow row;
  row.setting = setting_label(config.sparsity);
  row.mode = config.sparsity.mode;
  row.criterion = config.sparsity.criterion;
  row.rate = config.sparsity.rate;
  row.epsilon_target = config.dp.epsilon_target;
  row.sigma = mechanism.sigma;
  row.seed_count = runs.size();
  std::vector<double> accs;
  accs.reserve(runs.size());
  for (const SeedRunResult& r : runs) accs.push_back(r.final_test_accuracy);
  row.acc_mean = mean_of(accs);
  row.acc_std = sample_std(accs, row.acc_mean);
  row.eps_final = runs.front().rows.back().eps_spent;
  return row;
}

}  // namespace

TrainOutcome run_train(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir);
  const DataBundle bundle = resolve_data(config.data, config.model);
  const LoadedCheckpoint start = load_checkpoint(config.checkpoint_path());
  const Mechanism mechanism =
      resolve_mechanism(config, bundle.private_train.size());

  TrainOutcome outcome;
  for (std::uint64_t seed : config.seeds) {
    outcome.seed_runs.push_back(
        train_one_seed(config, bundle, start, mechanism, seed));
  }
  outcome.aggregate =
      aggregate_from_runs(config, mechanism, outcome.seed_runs);

  const fs::path aggregate_path =
      fs::path(config.output_dir) /
      ("aggregate_" + run_file_stem(config.sparsity) + ".csv");
  write_text_file(aggregate_path,
                  aggregate_csv_header() + "\n" +
                      format_aggregate_row(outcome.aggregate) + "\n");
  outcome.aggregate_path = aggregate_path.string();

  write_config_echo(
      config, "train",
      json{{"sampling_rate", mechanism.sampling_rate},
           {"steps", mechanism.steps},
           {"sigma", mechanism.sigma},
           {"achieved_epsilon", mechanism.achieved_epsilon},
           {"best_order", mechanism.best_order},
           {"private_examples", bundle.private_train.size()},
           {"selected_coordinates",
            outcome.seed_runs.front().selected_coordinates},
           {"non_selected_coordinates",
            outcome.seed_runs.front().non_selected_coordinates}});
  return outcome;
}

SweepOutcome run_sweep(const ExperimentConfig& config,
                       const std::vector<double>& rate_grid,
                       const std::vector<SparsityMode>& modes,
                       const std::vector<SelectionCriterion>& criteria) {
  if (rate_grid.empty() || modes.empty() || criteria.empty()) {
    throw ConfigError("sweep: rate grid, modes, and criteria must be non-empty");
  }
  fs::create_directories(config.output_dir);

  SweepOutcome outcome;
  for (SparsityMode mode : modes) {
    for (SelectionCriterion criterion : criteria) {
      for (double rate : rate_grid) {
        ExperimentConfig point = config;
        point.sparsity.mode = mode;
        point.sparsity.criterion = criterion;
        point.sparsity.rate = rate;
        outcome.rows.push_back(run_train(point).aggregate);
      }
    }
  }

  std::string csv = aggregate_csv_header() + "\n";
  for (const AggregateRow& row : outcome.rows) {
    csv += format_aggregate_row(row) + "\n";
  }
  const fs::path csv_path = fs::path(config.output_dir) / "sweep.csv";
  write_text_file(csv_path, csv);
  outcome.csv_path = csv_path.string();

  // Accuracy-versus-rate curves, one series per setting.
  std::string plot;
  plot += "set datafile separator ','\n";
  plot += "set xlabel 'pruning rate p'\n";
  plot += "set ylabel 'test accuracy (mean over seeds)'\n";
  plot += "set key outside\n";
  plot += "set grid\n";
  plot += "set term pngcairo size 900,600\n";
  plot += "set output 'sweep.png'\n";
  std::vector<std::string> settings;
  for (const AggregateRow& row : outcome.rows) {
    if (std::find(settings.begin(), settings.end(), row.setting) ==
        settings.end()) {
      settings.push_back(row.setting);
    }
  }
  plot += "plot ";
  for (std::size_t i = 0; i < settings.size(); ++i) {
    if (i != 0) plot += ", \\\n     ";
    plot += "'sweep.csv' every ::1 using (strcol(1) eq '" + settings[i] +
            "' ? column(4) : NaN):8 with linespoints title '" + settings[i] +
            "'";
  }
  plot += "\n";
  const fs::path plot_path = fs::path(config.output_dir) / "plot_sweep.gp";
  write_text_file(plot_path, plot);
  outcome.plot_path = plot_path.string();
  return outcome;
}

EvalMetrics run_eval(const std::string& checkpoint_path,
                     const ExperimentConfig& config) {
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  const DataBundle bundle = resolve_data(config.data, config.model);
  return evaluate(loaded.model, bundle.test.inputs, bundle.test.labels);
}

std::vector<AggregateRow> run_report(const std::string& run_dir) {
  if (!fs::is_directory(run_dir)) {
    throw IoError("run directory not found: " + run_dir);
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("metrics_") && name.ends_with(".csv")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw DataError("no metrics files in " + run_dir);
  }

  struct Group {
    MetricsRow last;
    std::vector<double> final_accs;
  };
  std::map<std::string, Group> groups;
  for (const fs::path& file : files) {
    std::ifstream in(file);
    std::string line;
    if (!std::getline(in, line) || line != metrics_csv_header()) {
      throw FormatError("unexpected metrics header in " + file.string());
    }
    MetricsRow last;
    bool any = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, ',')) cols.push_back(col);
      // A trailing empty column is still a column.
      if (cols.size() == 11 && line.back() == ',') cols.emplace_back();
      if (cols.size() != 12) {
        throw FormatError("malformed metrics row in " + file.string());
      }
      last.setting = cols[0];
      last.mode = mode_from_string(cols[1]);
      last.criterion = criterion_from_string(cols[2]);
      last.rate = std::strtod(cols[3].c_str(), nullptr);
      last.epsilon_target =
          cols[4].empty() ? std::optional<double>{}
                          : std::optional<double>{
                                std::strtod(cols[4].c_str(), nullptr)};
      last.sigma = std::strtod(cols[5].c_str(), nullptr);
      last.seed = std::strtoull(cols[6].c_str(), nullptr, 10);
      last.step = std::strtoull(cols[7].c_str(), nullptr, 10);
      last.epoch = std::strtod(cols[8].c_str(), nullptr);
      last.train_loss = std::strtod(cols[9].c_str(), nullptr);
      last.test_acc = std::strtod(cols[10].c_str(), nullptr);
      last.eps_spent = std::strtod(cols[11].c_str(), nullptr);
      any = true;
    }
    if (!any) {
      throw DataError("metrics file has no rows: " + file.string());
    }
    const std::string key = last.setting + "|" + fmt_double(last.rate) + "|" +
                            fmt_optional(last.epsilon_target) + "|" +
                            fmt_double(last.sigma);
    auto& group = groups[key];
    group.last = last;
    group.final_accs.push_back(last.test_acc);
  }

  std::vector<AggregateRow> rows;
  for (const auto& [key, group] : groups) {
    (void)key;
    AggregateRow row;
    row.setting = group.last.setting;
    row.mode = group.last.mode;
    row.criterion = group.last.criterion;
    row.rate = group.last.rate;
    row.epsilon_target = group.last.epsilon_target;
    row.sigma = group.last.sigma;
    row.seed_count = group.final_accs.size();
    row.acc_mean = mean_of(group.final_accs);
    row.acc_std = sample_std(group.final_accs, row.acc_mean);
    row.eps_final = group.last.eps_spent;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dpssgd
