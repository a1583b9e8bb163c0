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

#ifndef DPSSGD_EXPERIMENT_HPP_
#define DPSSGD_EXPERIMENT_HPP_

#include <optional>
#include <string>
#include <vector>

#include "dpssgd/dataset.hpp"
#include "dpssgd/model.hpp"
#include "dpssgd/sparsify.hpp"

namespace dpssgd {

// ---------------------------------------------------------------------------
// Configuration. Loaded from a versioned JSON document; command line flags
// override individual fields (see tools/).

struct ModelConfig {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::size_t class_count = 0;
};

enum class DataSourceKind { kIdx, kCifar, kSynthetic };

struct SyntheticDataConfig {
  std::size_t train_size = 2048;
  std::size_t test_size = 512;
  std::size_t class_count = 4;
  Shape sample_shape{1, 8, 8};
  double noise_std = 0.08;
  std::uint64_t seed = 11;
};

struct DataConfig {
  DataSourceKind kind = DataSourceKind::kSynthetic;
  std::string train_images, train_labels;  // idx
  std::string test_images, test_labels;    // idx
  std::string train_file, test_file;       // cifar binaries
  double public_fraction = 0.05;           // carved out of the train split
  std::uint64_t public_seed = 1;
  SyntheticDataConfig synthetic;
};

struct PretrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  // Optional coarse probe: each candidate gets one epoch on a copy, the
  // best public-train accuracy wins, then the full run uses that rate.
  std::vector<double> learning_rate_grid;
};

struct DpTrainConfig {
  // Exactly one of these two must be set: either a target budget to
  // calibrate the noise for, or an explicit noise multiplier.
  std::optional<double> epsilon_target;
  std::optional<double> sigma;
  double delta = 1e-5;
  double clip_norm = 1.0;
  double learning_rate = 0.5;
  std::size_t batch_size = 128;  // expected batch: q = batch_size / N
  std::size_t epochs = 3;        // steps = round(epochs / q)
  std::size_t eval_every_steps = 0;  // 0: once per epoch equivalent
  std::size_t eval_test_cap = 0;     // 0: full test set at every eval point
  // The last layer is reinitialized when the checkpoint's class count
  // differs from the private data's; this forces the reinit either way.
  bool force_reinit = false;
};

struct SparsityConfig {
  SparsityMode mode = SparsityMode::kFreezing;
  SelectionCriterion criterion = SelectionCriterion::kRandom;
  double rate = 0.0;
  // Biases and norm parameters stay selected by default; flipping this
  // makes every tensor prunable.
  bool prune_biases = false;
};

struct ExperimentConfig {
  ModelConfig model;
  DataConfig data;
  PretrainConfig pretrain;
  DpTrainConfig dp;
  SparsityConfig sparsity;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir = "runs/out";
  std::string checkpoint;  // empty: "<output_dir>/pretrained.dpss"

  std::string checkpoint_path() const;
  void validate() const;  // throws ConfigError
};

inline constexpr int kConfigVersion = 1;

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig config_from_json_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

std::string to_string(SparsityMode mode);
std::string to_string(SelectionCriterion criterion);
SparsityMode mode_from_string(const std::string& s);
SelectionCriterion criterion_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Data resolution: one train corpus split into disjoint public/private
// parts, plus the held-out test set.

struct DataBundle {
  Dataset public_train;
  Dataset private_train;
  Dataset test;
};

DataBundle resolve_data(const DataConfig& data, const ModelConfig& model);

// ---------------------------------------------------------------------------
// Runs. Every run is a pure function of its config and seeds; metrics files
// are byte-identical across repeats.

// One evaluation point of one seeded run. Serialized as a CSV row with the
// header: setting,mode,criterion,p,epsilon_target,sigma,seed,step,epoch,
// train_loss,test_acc,eps_spent
struct MetricsRow {
  std::string setting;
  SparsityMode mode;
  SelectionCriterion criterion;
  double rate = 0.0;
  std::optional<double> epsilon_target;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  double epoch = 0.0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double eps_spent = 0.0;
};

struct SeedRunResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  double final_test_accuracy = 0.0;
  std::string metrics_path;
  // Realized partition size at step 0 (constant across steps: the dropped
  // count per tensor is floor(rate * size) regardless of criterion).
  std::size_t selected_coordinates = 0;
  std::size_t non_selected_coordinates = 0;
};

struct AggregateRow {
  std::string setting;
  SparsityMode mode;
  SelectionCriterion criterion;
  double rate = 0.0;
  std::optional<double> epsilon_target;
  double sigma = 0.0;
  std::size_t seed_count = 0;
  double acc_mean = 0.0;
  double acc_std = 0.0;  // sample standard deviation across seeds
  double eps_final = 0.0;
};

struct PretrainOutcome {
  std::string checkpoint_path;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double chosen_learning_rate = 0.0;
};

struct CalibrationOutcome {
  double epsilon = 0.0;
  double delta = 0.0;
  double sampling_rate = 0.0;
  std::uint64_t steps = 0;
  double sigma = 0.0;
  double achieved_epsilon = 0.0;
  int best_order = 0;
};

struct TrainOutcome {
  std::vector<SeedRunResult> seed_runs;
  AggregateRow aggregate;
  std::string aggregate_path;
};

struct SweepOutcome {
  std::vector<AggregateRow> rows;
  std::string csv_path;
  std::string plot_path;
};

// Non-private SGD on the public split; writes the checkpoint and a config
// echo into the output directory.
PretrainOutcome run_pretrain(const ExperimentConfig& config);

// Resolves (q, T) from the config and data, then calibrates sigma for the
// target budget (or reports the explicit sigma's achieved epsilon).
CalibrationOutcome run_calibrate(const ExperimentConfig& config);

// The DP-SSGD fine-tuning protocol, one run per seed: load checkpoint,
// reinitialize the last layer if the class counts differ, build the
// sparsity plan, then run dp_ssgd_step over all steps with periodic
// evaluation. Writes per-seed metrics CSVs plus an aggregate CSV.
TrainOutcome run_train(const ExperimentConfig& config);

// Cartesian product of (mode, criterion, rate) settings; one aggregate row
// per setting. Also writes a gnuplot script for accuracy-vs-rate curves.
SweepOutcome run_sweep(const ExperimentConfig& config,
                       const std::vector<double>& rate_grid,
                       const std::vector<SparsityMode>& modes,
                       const std::vector<SelectionCriterion>& criteria);

// Accuracy/loss of a checkpoint on the config's test split.
EvalMetrics run_eval(const std::string& checkpoint_path,
                     const ExperimentConfig& config);

// Re-aggregates the per-seed metrics files found in a run directory; the
// result matches the aggregate CSVs written at training time.
std::vector<AggregateRow> run_report(const std::string& run_dir);

std::string metrics_csv_header();
std::string format_metrics_row(const MetricsRow& row);
std::string aggregate_csv_header();
std::string format_aggregate_row(const AggregateRow& row);

}  // namespace dpssgd

#endif  // DPSSGD_EXPERIMENT_HPP_
