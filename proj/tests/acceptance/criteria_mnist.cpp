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

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "acceptance.hpp"
#include "dpssgd/experiment.hpp"

namespace acceptance {

namespace {

namespace fs = std::filesystem;

// The MNIST reproduction criteria need the real IDX files. They are looked
// up under $DPSSGD_MNIST_DIR (default ./data/mnist) and the criteria skip
// when absent, since the data cannot be fabricated.
std::string mnist_dir() {
  const char* env = std::getenv("DPSSGD_MNIST_DIR");
  return env != nullptr ? env : "data/mnist";
}

struct MnistFiles {
  std::string train_images, train_labels, test_images, test_labels;
};

MnistFiles locate_mnist_or_skip() {
  const fs::path dir = mnist_dir();
  MnistFiles files{
      (dir / "train-images-idx3-ubyte").string(),
      (dir / "train-labels-idx1-ubyte").string(),
      (dir / "t10k-images-idx3-ubyte").string(),
      (dir / "t10k-labels-idx1-ubyte").string(),
  };
  for (const std::string& f : {files.train_images, files.train_labels,
                               files.test_images, files.test_labels}) {
    if (!fs::exists(f)) {
      throw Skip("MNIST not found at \"" + dir.string() +
                 "\"; set DPSSGD_MNIST_DIR to run this criterion");
    }
  }
  return files;
}

dpssgd::ExperimentConfig mnist_config(const MnistFiles& files,
                                      const std::string& out_dir) {
  dpssgd::ExperimentConfig config;
  config.model.input_shape = {1, 28, 28};
  config.model.layers = {
      dpssgd::LayerSpec::conv2d(16, 5), dpssgd::LayerSpec::group_norm(8),
      dpssgd::LayerSpec::relu(),        dpssgd::LayerSpec::max_pool(),
      dpssgd::LayerSpec::conv2d(32, 5), dpssgd::LayerSpec::group_norm(8),
      dpssgd::LayerSpec::relu(),        dpssgd::LayerSpec::max_pool(),
      dpssgd::LayerSpec::flatten(),     dpssgd::LayerSpec::fully_connected(10)};
  config.model.class_count = 10;

  config.data.kind = dpssgd::DataSourceKind::kIdx;
  config.data.train_images = files.train_images;
  config.data.train_labels = files.train_labels;
  config.data.test_images = files.test_images;
  config.data.test_labels = files.test_labels;
  config.data.public_fraction = 0.05;
  config.data.public_seed = 1;

  config.pretrain.epochs = 40;
  config.pretrain.learning_rate = 0.1;
  config.pretrain.batch_size = 64;
  config.pretrain.learning_rate_grid = {0.05, 0.1, 0.2};

  config.dp.epsilon_target = 2.0;
  config.dp.delta = 1e-5;
  config.dp.clip_norm = 1.0;
  config.dp.learning_rate = 0.5;
  config.dp.batch_size = 256;
  config.dp.epochs = 5;
  config.dp.eval_test_cap = 2000;

  config.sparsity.mode = dpssgd::SparsityMode::kFreezing;
  config.sparsity.criterion = dpssgd::SelectionCriterion::kRandom;

  config.output_dir = out_dir;
  return config;
}

std::string scratch_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / "dpssgd_acceptance" / tag;
  fs::create_directories(dir);
  return dir.string();
}

// 7. Desk-scale MNIST reproduction: pretrain on a 5% stratified subset,
//    DP-fine-tune at epsilon=2 with random freezing at p in {0.5, 0.9};
//    final test accuracy >= 95%.
void criterion_mnist_freezing() {
  const MnistFiles files = locate_mnist_or_skip();
  dpssgd::ExperimentConfig config =
      mnist_config(files, scratch_dir("criterion7"));
  config.seeds = {1};
  config.dp.force_reinit = true;  // the protocol reinitializes the last layer
  config.dp.epochs = 6;

  const auto pretrain = dpssgd::run_pretrain(config);
  std::printf("      pretrain: public_train_acc=%.4f test_acc=%.4f\n",
              pretrain.train_accuracy, pretrain.test_accuracy);

  for (double rate : {0.5, 0.9}) {
    config.sparsity.rate = rate;
    const auto outcome = dpssgd::run_train(config);
    const double acc = outcome.aggregate.acc_mean;
    std::printf("      p=%.1f: test_acc=%.4f eps=%.3f sigma=%.3f\n", rate, acc,
                outcome.aggregate.eps_final, outcome.aggregate.sigma);
    require(outcome.aggregate.eps_final <= 2.0 + 1e-9,
            "spent epsilon exceeds the target");
    require(acc >= 0.95, "test accuracy " + std::to_string(acc) +
                             " below 0.95 at p=" + std::to_string(rate));
  }
}

// 8. Pruning-trend property at small epsilon: mean accuracy over 5 seeds at
//    p=0.9 is at least the mean at p=0 for random freezing.
void criterion_mnist_pruning_trend() {
  const MnistFiles files = locate_mnist_or_skip();
  dpssgd::ExperimentConfig config =
      mnist_config(files, scratch_dir("criterion8"));
  config.seeds = {1, 2, 3, 4, 5};
  config.dp.force_reinit = true;
  config.dp.epochs = 3;
  config.dp.eval_every_steps = 1000000;  // final evaluation only

  dpssgd::run_pretrain(config);

  config.sparsity.rate = 0.0;
  const auto dense = dpssgd::run_train(config);
  config.sparsity.rate = 0.9;
  const auto sparse = dpssgd::run_train(config);

  std::printf("      p=0.0: mean=%.4f std=%.4f | p=0.9: mean=%.4f std=%.4f\n",
              dense.aggregate.acc_mean, dense.aggregate.acc_std,
              sparse.aggregate.acc_mean, sparse.aggregate.acc_std);
  require(dense.aggregate.seed_count == 5 && sparse.aggregate.seed_count == 5,
          "expected 5 seeds per setting");
  require(sparse.aggregate.acc_mean >= dense.aggregate.acc_mean,
          "pruning at p=0.9 did not help at epsilon=2: " +
              std::to_string(sparse.aggregate.acc_mean) + " < " +
              std::to_string(dense.aggregate.acc_mean));
}

}  // namespace

std::vector<Criterion> mnist_criteria() {
  return {
      {7, "MNIST: 5% public pretrain + DP freezing at eps=2 reaches 95%", true,
       criterion_mnist_freezing},
      {8, "MNIST: at eps=2, p=0.9 freezing beats p=0 (5-seed means)", true,
       criterion_mnist_pruning_trend},
  };
}

}  // namespace acceptance
