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

#include <cinttypes>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpssgd/accountant.hpp"
#include "dpssgd/errors.hpp"
#include "dpssgd/experiment.hpp"

namespace {

using dpssgd::ExperimentConfig;

// Exit codes: 0 success, 2 configuration error, 3 io/format error,
// 4 calibration error.
constexpr int kOk = 0;
constexpr int kUnexpectedError = 1;
constexpr int kConfigExit = 2;
constexpr int kIoExit = 3;
constexpr int kCalibrationExit = 4;

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item =
        text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const std::string& item : split_csv(text)) {
    out.push_back(std::stod(item));
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (double v : parse_double_list(text)) {
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

struct Overrides {
  std::string output_dir;
  std::string checkpoint;
  std::string seeds;
  std::string mode;
  std::string criterion;
  std::optional<double> rate;
  std::optional<double> epsilon;
  std::optional<double> sigma;
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  std::string train_images, train_labels, test_images, test_labels;
  std::string cifar_train, cifar_test;
  std::optional<double> public_fraction;

  void apply(ExperimentConfig& config) const {
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (!checkpoint.empty()) config.checkpoint = checkpoint;
    if (!seeds.empty()) config.seeds = parse_seed_list(seeds);
    if (!mode.empty()) config.sparsity.mode = dpssgd::mode_from_string(mode);
    if (!criterion.empty()) {
      config.sparsity.criterion = dpssgd::criterion_from_string(criterion);
    }
    if (rate.has_value()) config.sparsity.rate = *rate;
    if (epsilon.has_value()) {
      config.dp.epsilon_target = *epsilon;
      config.dp.sigma.reset();
    }
    if (sigma.has_value()) {
      config.dp.sigma = *sigma;
      config.dp.epsilon_target.reset();
    }
    if (epochs.has_value()) config.dp.epochs = *epochs;
    if (learning_rate.has_value()) config.dp.learning_rate = *learning_rate;
    if (batch_size.has_value()) config.dp.batch_size = *batch_size;
    if (!train_images.empty() || !train_labels.empty() ||
        !test_images.empty() || !test_labels.empty()) {
      config.data.kind = dpssgd::DataSourceKind::kIdx;
      if (!train_images.empty()) config.data.train_images = train_images;
      if (!train_labels.empty()) config.data.train_labels = train_labels;
      if (!test_images.empty()) config.data.test_images = test_images;
      if (!test_labels.empty()) config.data.test_labels = test_labels;
    }
    if (!cifar_train.empty() || !cifar_test.empty()) {
      config.data.kind = dpssgd::DataSourceKind::kCifar;
      if (!cifar_train.empty()) config.data.train_file = cifar_train;
      if (!cifar_test.empty()) config.data.test_file = cifar_test;
    }
    if (public_fraction.has_value()) {
      config.data.public_fraction = *public_fraction;
    }
    config.validate();
  }
};

void add_override_flags(CLI::App* cmd, Overrides& o,
                        bool include_budget_flags = true) {
  cmd->add_option("--output-dir", o.output_dir, "Override output directory");
  cmd->add_option("--checkpoint", o.checkpoint, "Override checkpoint path");
  cmd->add_option("--seeds", o.seeds, "Comma-separated seed list");
  cmd->add_option("--mode", o.mode, "Sparsity mode: freezing|selection");
  cmd->add_option("--criterion", o.criterion,
                  "Selection criterion: random|magnitude");
  cmd->add_option("--rate", o.rate, "Pruning rate p in [0,1)");
  if (include_budget_flags) {
    cmd->add_option("--epsilon", o.epsilon, "Target epsilon (clears sigma)");
    cmd->add_option("--sigma", o.sigma, "Explicit noise multiplier");
  }
  cmd->add_option("--epochs", o.epochs, "DP training epochs");
  cmd->add_option("--lr", o.learning_rate, "DP learning rate");
  cmd->add_option("--batch-size", o.batch_size, "Expected batch size");
  cmd->add_option("--train-images", o.train_images, "IDX training images");
  cmd->add_option("--train-labels", o.train_labels, "IDX training labels");
  cmd->add_option("--test-images", o.test_images, "IDX test images");
  cmd->add_option("--test-labels", o.test_labels, "IDX test labels");
  cmd->add_option("--cifar-train", o.cifar_train, "CIFAR-binary train file");
  cmd->add_option("--cifar-test", o.cifar_test, "CIFAR-binary test file");
  cmd->add_option("--public-fraction", o.public_fraction,
                  "Fraction of the train split treated as public");
}

void print_calibration(const dpssgd::CalibrationOutcome& outcome) {
  std::printf("q,sigma,steps,delta,epsilon,achieved_epsilon,best_order\n");
  std::printf("%.10g,%.10g,%" PRIu64 ",%.10g,%.10g,%.10g,%d\n",
              outcome.sampling_rate, outcome.sigma, outcome.steps,
              outcome.delta, outcome.epsilon, outcome.achieved_epsilon,
              outcome.best_order);
}

int run(int argc, char** argv) {
  CLI::App app{
      "dpssgd: differentially private SGD with sparse parameter updates"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides overrides;

  // pretrain
  CLI::App* pretrain = app.add_subcommand(
      "pretrain", "Non-private SGD on the public split; writes a checkpoint");
  pretrain->add_option("--config", config_path, "JSON experiment config")
      ->required();
  add_override_flags(pretrain, overrides);

  // calibrate
  CLI::App* calibrate = app.add_subcommand(
      "calibrate", "Solve for the noise multiplier of a privacy budget");
  std::optional<double> cal_q;
  std::optional<std::uint64_t> cal_steps;
  std::optional<double> cal_epsilon;
  double cal_delta = 1e-5;
  calibrate->add_option("--config", config_path,
                        "JSON experiment config (q and steps from data)");
  calibrate->add_option("--q", cal_q, "Poisson sampling rate (direct mode)");
  calibrate->add_option("--steps", cal_steps, "Step count (direct mode)");
  calibrate->add_option("--epsilon", cal_epsilon, "Target epsilon");
  calibrate->add_option("--delta", cal_delta, "Target delta (direct mode)");
  add_override_flags(calibrate, overrides, /*include_budget_flags=*/false);

  // train
  CLI::App* train = app.add_subcommand(
      "train", "DP-SSGD fine-tuning from a checkpoint, one run per seed");
  train->add_option("--config", config_path, "JSON experiment config")
      ->required();
  add_override_flags(train, overrides);

  // sweep
  CLI::App* sweep = app.add_subcommand(
      "sweep", "Cartesian sweep over modes, criteria, and pruning rates");
  std::string sweep_rates = "0,0.5,0.9";
  std::string sweep_modes = "freezing,selection";
  std::string sweep_criteria = "random,magnitude";
  sweep->add_option("--config", config_path, "JSON experiment config")
      ->required();
  sweep->add_option("--rates", sweep_rates, "Comma-separated pruning rates");
  sweep->add_option("--modes", sweep_modes, "Comma-separated modes");
  sweep->add_option("--criteria", sweep_criteria,
                    "Comma-separated criteria");
  add_override_flags(sweep, overrides);

  // eval
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Evaluate a checkpoint on the config's test split");
  std::string eval_checkpoint;
  eval_cmd->add_option("--config", config_path, "JSON experiment config")
      ->required();
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint path")
      ->required();

  // report
  CLI::App* report = app.add_subcommand(
      "report", "Re-aggregate the per-seed metrics files of a run directory");
  std::string run_dir;
  report->add_option("--run-dir", run_dir, "Directory with metrics_*.csv")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigExit;
  }

  const auto load_config = [&] {
    ExperimentConfig config = dpssgd::config_from_json_file(config_path);
    overrides.apply(config);
    return config;
  };

  if (pretrain->parsed()) {
    const auto outcome = dpssgd::run_pretrain(load_config());
    std::printf("pretrain,checkpoint=%s,public_train_acc=%.4f,test_acc=%.4f,lr=%.6g\n",
                outcome.checkpoint_path.c_str(), outcome.train_accuracy,
                outcome.test_accuracy, outcome.chosen_learning_rate);
    return kOk;
  }
  if (calibrate->parsed()) {
    if (cal_q.has_value() || cal_steps.has_value()) {
      if (!cal_q.has_value() || !cal_steps.has_value() ||
          !cal_epsilon.has_value()) {
        throw dpssgd::ConfigError(
            "calibrate direct mode needs --q, --steps, and --epsilon");
      }
      const double sigma =
          dpssgd::calibrate_sigma({*cal_epsilon, cal_delta}, *cal_q, *cal_steps);
      const dpssgd::RdpAccountant accountant(*cal_q, sigma);
      const auto report_eps = accountant.epsilon_after(*cal_steps, cal_delta);
      print_calibration({*cal_epsilon, cal_delta, *cal_q, *cal_steps, sigma,
                         report_eps.epsilon, report_eps.best_order});
      return kOk;
    }
    if (config_path.empty()) {
      throw dpssgd::ConfigError(
          "calibrate needs either --config or the --q/--steps/--epsilon trio");
    }
    ExperimentConfig config = dpssgd::config_from_json_file(config_path);
    if (cal_epsilon.has_value()) {
      config.dp.epsilon_target = *cal_epsilon;
      config.dp.sigma.reset();
    }
    overrides.apply(config);
    print_calibration(dpssgd::run_calibrate(config));
    return kOk;
  }
  if (train->parsed()) {
    const auto outcome = dpssgd::run_train(load_config());
    for (const auto& seed_run : outcome.seed_runs) {
      std::printf("seed=%" PRIu64 ",final_test_acc=%.4f,metrics=%s\n",
                  seed_run.seed, seed_run.final_test_accuracy,
                  seed_run.metrics_path.c_str());
    }
    std::printf("%s\n", dpssgd::aggregate_csv_header().c_str());
    std::printf("%s\n",
                dpssgd::format_aggregate_row(outcome.aggregate).c_str());
    return kOk;
  }
  if (sweep->parsed()) {
    std::vector<dpssgd::SparsityMode> modes;
    for (const std::string& item : split_csv(sweep_modes)) {
      modes.push_back(dpssgd::mode_from_string(item));
    }
    std::vector<dpssgd::SelectionCriterion> criteria;
    for (const std::string& item : split_csv(sweep_criteria)) {
      criteria.push_back(dpssgd::criterion_from_string(item));
    }
    const auto outcome = dpssgd::run_sweep(
        load_config(), parse_double_list(sweep_rates), modes, criteria);
    std::printf("%s\n", dpssgd::aggregate_csv_header().c_str());
    for (const auto& row : outcome.rows) {
      std::printf("%s\n", dpssgd::format_aggregate_row(row).c_str());
    }
    std::printf("sweep_csv=%s\nplot_script=%s\n", outcome.csv_path.c_str(),
                outcome.plot_path.c_str());
    return kOk;
  }
  if (eval_cmd->parsed()) {
    const auto metrics = dpssgd::run_eval(eval_checkpoint, load_config());
    std::printf("test_acc=%.4f,mean_loss=%.6g\n", metrics.accuracy,
                metrics.mean_loss);
    return kOk;
  }
  if (report->parsed()) {
    const auto rows = dpssgd::run_report(run_dir);
    std::printf("%s\n", dpssgd::aggregate_csv_header().c_str());
    for (const auto& row : rows) {
      std::printf("%s\n", dpssgd::format_aggregate_row(row).c_str());
    }
    return kOk;
  }
  return kConfigExit;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dpssgd::CalibrationError& e) {
    std::fprintf(stderr, "calibration error: %s\n", e.what());
    return kCalibrationExit;
  } catch (const dpssgd::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIoExit;
  } catch (const dpssgd::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kIoExit;
  } catch (const dpssgd::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kIoExit;
  } catch (const dpssgd::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return kUnexpectedError;
  }
}
