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

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "acceptance.hpp"
#include "dpssgd/accountant.hpp"
#include "dpssgd/dp_step.hpp"
#include "dpssgd/model.hpp"
#include "dpssgd/sparsify.hpp"

namespace acceptance {

namespace {

using dpssgd::Batch;
using dpssgd::DpStepConfig;
using dpssgd::IndexPartition;
using dpssgd::LayerSpec;
using dpssgd::Model;
using dpssgd::ParamSet;
using dpssgd::PerSampleGrads;
using dpssgd::RngStream;
using dpssgd::SelectionCriterion;
using dpssgd::Tensor;

Model tiny_cnn(std::uint64_t seed) {
  RngStream init(seed, 0);
  return Model::build(
      {LayerSpec::conv2d(8, 3), LayerSpec::group_norm(4), LayerSpec::relu(),
       LayerSpec::max_pool(), LayerSpec::flatten(),
       LayerSpec::fully_connected(2)},
      {1, 4, 4}, 2, init);
}

Batch random_batch(std::size_t b, std::uint64_t seed, std::size_t classes = 2) {
  RngStream s(seed, 99);
  Batch batch;
  batch.inputs = dpssgd::gaussian_sample(s, {b, 1, 4, 4});
  batch.labels.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    batch.labels[i] = static_cast<int>(s.next_below(classes));
  }
  return batch;
}

PerSampleGrads single_tensor_grads(const std::vector<std::vector<double>>& rows,
                                   bool prunable = true) {
  PerSampleGrads g;
  for (const auto& row : rows) {
    const std::size_t n = row.size();
    ParamSet set;
    set.push_back({"w", Tensor::from_data({n}, std::vector<double>(row)),
                   prunable});
    g.samples.push_back(std::move(set));
  }
  return g;
}

// ---------------------------------------------------------------------------

// 1. Per-sample gradients vs central finite differences: 100 random
//    coordinates of a tiny CNN, relative error < 1e-4.
void criterion_gradient_exactness() {
  const Model model = tiny_cnn(7);
  require(model.parameter_count() >= 100, "tiny model needs >= 100 params");
  const Batch batch = random_batch(3, 55);
  const auto [mean_loss, grads] = model.loss_and_per_sample_gradients(batch);
  (void)mean_loss;

  // Loss of sample 0 alone, as a function of parameter perturbations.
  Batch lone;
  std::vector<double> first(batch.inputs.data(), batch.inputs.data() + 16);
  lone.inputs = Tensor::from_data({1, 1, 4, 4}, std::move(first));
  lone.labels = {batch.labels[0]};

  // 100 distinct global coordinates.
  RngStream pick(77, 3);
  std::set<std::pair<std::size_t, std::size_t>> coords;
  while (coords.size() < 100) {
    const std::size_t t =
        static_cast<std::size_t>(pick.next_below(model.params().size()));
    const std::size_t i = static_cast<std::size_t>(
        pick.next_below(model.params()[t].value.size()));
    coords.insert({t, i});
  }

  const double h = 1e-5;
  for (const auto& [t, i] : coords) {
    Model plus = model, minus = model;
    ParamSet bump = dpssgd::zeros_like(model.params());
    bump[t].value[i] = -h;
    plus.apply_update(bump);
    bump[t].value[i] = h;
    minus.apply_update(bump);
    const double fd = (plus.loss_and_per_sample_gradients(lone).first -
                       minus.loss_and_per_sample_gradients(lone).first) /
                      (2 * h);
    const double got = grads.samples[0][t].value[i];
    const double denom = std::max({std::fabs(fd), std::fabs(got), 1e-6});
    require(std::fabs(fd - got) / denom < 1e-4,
            "finite-difference mismatch at " + model.params()[t].name +
                "[" + std::to_string(i) + "]: fd=" + std::to_string(fd) +
                " grad=" + std::to_string(got));
  }
}

// 2. With p=0 and a shared noise stream, dp_ssgd_step matches an
//    independently written DP-SGD step coordinatewise to 1e-15, over 50
//    random configurations.
void criterion_vanilla_reduction() {
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Model model = tiny_cnn(1000 + trial);
    Model reference = model;
    RngStream knobs(2000 + trial, 0);
    const std::size_t batch_size = 1 + knobs.next_below(6);
    const Batch batch = random_batch(batch_size, 3000 + trial);

    DpStepConfig cfg;
    cfg.clip_norm = 0.3 + 1.7 * knobs.next_uniform();
    cfg.noise_multiplier = trial % 5 == 0 ? 0.0 : 1.5 * knobs.next_uniform();
    cfg.learning_rate = 0.05 + knobs.next_uniform();
    cfg.expected_batch_size = batch_size;

    RngStream unused(0, 0);
    const IndexPartition part = dpssgd::select_indices(
        model.params(), 0.0, SelectionCriterion::kRandom, unused);

    RngStream noise(4000 + trial, 0);
    dpssgd::dp_ssgd_step(model, batch, cfg, part, noise);

    // Independent reference implementation.
    RngStream ref_noise(4000 + trial, 0);
    const auto [loss, grads] = reference.loss_and_per_sample_gradients(batch);
    (void)loss;
    ParamSet sum = dpssgd::zeros_like(reference.params());
    for (const ParamSet& g : grads.samples) {
      double norm_sq = 0.0;
      for (const auto& entry : g) {
        for (double v : entry.value.values()) norm_sq += v * v;
      }
      const double norm = std::sqrt(norm_sq);
      const double factor = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
      for (std::size_t t = 0; t < g.size(); ++t) {
        for (std::size_t i = 0; i < g[t].value.size(); ++i) {
          sum[t].value[i] += g[t].value[i] * factor;
        }
      }
    }
    if (cfg.noise_multiplier > 0.0) {
      for (auto& entry : sum) {
        for (double& v : entry.value.values()) {
          v += cfg.noise_multiplier * cfg.clip_norm * ref_noise.next_gaussian();
        }
      }
    }
    dpssgd::scale_params_in_place(
        sum, cfg.learning_rate / static_cast<double>(batch_size));
    reference.apply_update(sum);

    for (std::size_t t = 0; t < model.params().size(); ++t) {
      for (std::size_t i = 0; i < model.params()[t].value.size(); ++i) {
        require(std::fabs(model.params()[t].value[i] -
                          reference.params()[t].value[i]) <= 1e-15,
                "vanilla reduction diverged at trial " + std::to_string(trial));
      }
    }
  }
}

// 3. After clip_per_sample, no sample's selected-coordinate norm exceeds
//    C(1 + 1e-12), over 1e3 randomized batches.
void criterion_clipping_sensitivity() {
  RngStream s(2026, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + s.next_below(48);
    const std::size_t batch = 1 + s.next_below(5);
    std::vector<std::vector<double>> rows(batch, std::vector<double>(n));
    for (auto& row : rows) {
      const double scale_factor = std::exp(3.0 * s.next_gaussian());
      for (double& v : row) v = scale_factor * s.next_gaussian();
    }
    std::vector<std::uint64_t> sel, non;
    const double keep = s.next_uniform();
    for (std::size_t i = 0; i < n; ++i) {
      (s.next_uniform() < keep ? sel : non).push_back(i);
    }
    const double clip = 0.05 + 4.0 * s.next_uniform();
    IndexPartition part;
    part.tensors.push_back({sel, non});
    const auto clipped =
        dpssgd::clip_per_sample(single_tensor_grads(rows), part, clip);
    for (std::size_t b = 0; b < batch; ++b) {
      const double norm = dpssgd::l2_norm_at(clipped.samples[b][0].value, sel);
      require(norm <= clip * (1.0 + 1e-12),
              "clipped norm " + std::to_string(norm) + " exceeds C=" +
                  std::to_string(clip));
      for (std::uint64_t i : non) {
        require(clipped.samples[b][0].value[i] == 0.0,
                "non-selected coordinate not zeroed");
      }
    }
  }
}

// 4. 200 freezing-mode steps leave every non-selected coordinate bitwise
//    equal to its initial value.
void criterion_frozen_law() {
  Model model = tiny_cnn(42);
  dpssgd::SparsityPlan plan;
  plan.mode = dpssgd::SparsityMode::kFreezing;
  plan.criterion = SelectionCriterion::kRandom;
  plan.rate = 0.6;
  plan.selection_stream = RngStream(43, 0);
  const dpssgd::FrozenMask mask{
      dpssgd::partition_for_step(plan, 0, model.params(), nullptr)};
  const ParamSet initial = model.params();

  DpStepConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.noise_multiplier = 1.0;
  cfg.learning_rate = 0.25;
  cfg.expected_batch_size = 6;
  RngStream noise(44, 0);
  for (std::uint64_t step = 0; step < 200; ++step) {
    const IndexPartition part =
        dpssgd::partition_for_step(plan, step, model.params(), &mask);
    const Batch batch = random_batch(6, 4500 + step);
    dpssgd::dp_ssgd_step(model, batch, cfg, part, noise);
  }
  for (std::size_t t = 0; t < model.params().size(); ++t) {
    for (std::uint64_t i : mask.partition.tensors[t].non_selected) {
      require(model.params()[t].value[i] == initial[t].value[i],
              "frozen coordinate drifted in " + model.params()[t].name);
    }
  }
}

// 5. Noise statistics: per-coordinate std within 2% of sigma*C over 1e6
//    coordinates; expected squared noise norm |I_s| sigma^2 C^2 within 1%,
//    strictly decreasing in p.
void criterion_noise_statistics() {
  const double sigma = 1.0, clip = 2.0;
  {
    const std::size_t n = 1000000;
    PerSampleGrads zero;
    ParamSet set;
    set.push_back({"w", Tensor::zeros({n}), true});
    zero.samples.push_back(std::move(set));
    std::vector<std::uint64_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    IndexPartition part;
    part.tensors.push_back({std::move(all), {}});
    RngStream noise(2026, 500);
    const ParamSet out = dpssgd::privatize_sum(zero, part, clip, sigma, noise);
    double sum = 0.0, sum_sq = 0.0;
    for (double v : out[0].value.values()) {
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / static_cast<double>(n);
    const double stddev =
        std::sqrt(sum_sq / static_cast<double>(n) - mean * mean);
    require(std::fabs(stddev - sigma * clip) < 0.02 * sigma * clip,
            "per-coordinate std " + std::to_string(stddev) +
                " outside 2% of " + std::to_string(sigma * clip));
  }

  const std::size_t n = 2000000;
  PerSampleGrads zero;
  ParamSet set;
  set.push_back({"w", Tensor::zeros({n}), true});
  zero.samples.push_back(std::move(set));
  double previous_expected = 1e300;
  for (double p : {0.0, 0.25, 0.5, 0.75, 0.9}) {
    RngStream select(7, static_cast<std::uint64_t>(1000 * p));
    const IndexPartition part = dpssgd::select_indices(
        zero.samples[0], p, SelectionCriterion::kRandom, select);
    RngStream noise(8, static_cast<std::uint64_t>(1000 * p));
    const ParamSet out = dpssgd::privatize_sum(zero, part, clip, sigma, noise);
    double sq = 0.0;
    for (double v : out[0].value.values()) sq += v * v;
    const double expected =
        static_cast<double>(part.tensors[0].selected.size()) * sigma * sigma *
        clip * clip;
    require(std::fabs(sq - expected) < 0.01 * expected,
            "squared noise norm off by more than 1% at p=" + std::to_string(p));
    require(expected < previous_expected,
            "expected noise norm not decreasing in p");
    previous_expected = expected;
  }
}

// 6. Accountant: oracle agreement to 1e-9 on a 20-point grid, monotonicity,
//    and a conservative calibrate/epsilon round trip.
void criterion_accountant() {
  // Extended-precision direct evaluation of the same binomial sum.
  const auto oracle = [](long double q, long double sigma, int alpha) {
    long double sum = 0.0L;
    long double choose = 1.0L;
    for (int k = 0; k <= alpha; ++k) {
      sum += choose * powl(1.0L - q, alpha - k) * powl(q, k) *
             expl(static_cast<long double>(k) * (k - 1) /
                  (2.0L * sigma * sigma));
      choose = choose * (alpha - k) / (k + 1.0L);
    }
    return static_cast<double>(logl(sum) / (alpha - 1));
  };

  int points = 0;
  for (double q : {0.001, 0.01, 0.1, 0.4}) {
    for (double sigma : {0.5, 1.0, 2.0, 4.0, 8.0}) {
      const int alpha = 2 + (points * 7) % 63;  // spread over [2, 64]
      const double got = dpssgd::rdp_one_step(q, sigma, alpha);
      const double expected = oracle(q, sigma, alpha);
      require(std::fabs(got - expected) <= 1e-9 * std::max(1e-300, expected),
              "rdp mismatch at q=" + std::to_string(q) +
                  " sigma=" + std::to_string(sigma));
      ++points;
    }
  }
  require(points == 20, "expected a 20-point grid");

  const auto eps = [](double q, double sigma, std::uint64_t steps,
                      double delta) {
    dpssgd::RdpAccountant acc(q, sigma);
    return acc.epsilon_after(steps, delta).epsilon;
  };
  require(eps(0.01, 1.0, 2000, 1e-5) > eps(0.01, 1.0, 1000, 1e-5),
          "epsilon not increasing in steps");
  require(eps(0.01, 2.0, 1000, 1e-5) < eps(0.01, 1.0, 1000, 1e-5),
          "epsilon not decreasing in sigma");
  require(eps(0.01, 1.0, 1000, 1e-4) <= eps(0.01, 1.0, 1000, 1e-5),
          "epsilon not nonincreasing in delta");
  require(eps(0.02, 1.0, 1000, 1e-5) >= eps(0.01, 1.0, 1000, 1e-5),
          "epsilon not nondecreasing in q");

  for (double target : {0.5, 2.0, 8.0}) {
    const double q = 256.0 / 60000.0;
    const std::uint64_t steps = 2344;
    const double sigma = dpssgd::calibrate_sigma({target, 1e-5}, q, steps);
    require(eps(q, sigma, steps, 1e-5) <= target,
            "calibrated sigma exceeds the budget at epsilon=" +
                std::to_string(target));
  }
}

// 9. Magnitude selection is invariant to positive rescaling of any layer's
//    weights: identical index sets for c in {0.1, 3, 10}, 100 random
//    tensors.
void criterion_scale_invariance() {
  RngStream vals(31, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + vals.next_below(128);
    const double rate = 0.9 * vals.next_uniform();
    std::vector<double> base(n);
    for (double& v : base) v = vals.next_gaussian();

    ParamSet params;
    params.push_back({"w", Tensor::from_data({n}, std::vector<double>(base)),
                      true});
    RngStream s1(1, 1);
    const IndexPartition reference = dpssgd::select_indices(
        params, rate, SelectionCriterion::kMagnitude, s1);
    for (double c : {0.1, 3.0, 10.0}) {
      std::vector<double> scaled(base);
      for (double& v : scaled) v *= c;
      ParamSet scaled_params;
      scaled_params.push_back(
          {"w", Tensor::from_data({n}, std::move(scaled)), true});
      RngStream s2(1, 1);
      const IndexPartition got = dpssgd::select_indices(
          scaled_params, rate, SelectionCriterion::kMagnitude, s2);
      require(got == reference,
              "magnitude selection changed under rescaling by " +
                  std::to_string(c));
    }
  }
}

// 10. Group-norm per-sample independence: sample b's logits and gradients
//     are invariant (<= 1e-12) to replacing the rest of the batch, 50
//     trials.
void criterion_per_sample_independence() {
  const Model model = tiny_cnn(88);
  const std::size_t batch_size = 6;
  const Batch batch = random_batch(batch_size, 91);
  const Tensor logits = model.forward(batch.inputs);
  const auto [loss, grads] = model.loss_and_per_sample_gradients(batch);
  (void)loss;

  RngStream pick(92, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = static_cast<std::size_t>(
        pick.next_below(batch_size));
    Batch mutated = random_batch(batch_size, 5000 + trial);
    std::copy_n(batch.inputs.data() + b * 16, 16,
                mutated.inputs.data() + b * 16);
    mutated.labels[b] = batch.labels[b];

    const Tensor mutated_logits = model.forward(mutated.inputs);
    for (std::size_t j = 0; j < 2; ++j) {
      require(std::fabs(mutated_logits[b * 2 + j] - logits[b * 2 + j]) <=
                  1e-12,
              "logits of the kept sample changed with the batch");
    }
    const auto [loss_b, grads_b] = model.loss_and_per_sample_gradients(mutated);
    (void)loss_b;
    for (std::size_t t = 0; t < grads.samples[b].size(); ++t) {
      for (std::size_t i = 0; i < grads.samples[b][t].value.size(); ++i) {
        require(std::fabs(grads.samples[b][t].value[i] -
                          grads_b.samples[b][t].value[i]) <= 1e-12,
                "per-sample gradient changed with the batch");
      }
    }
  }
}

}  // namespace

std::vector<Criterion> fast_criteria() {
  return {
      {1, "per-sample gradients match central finite differences", false,
       criterion_gradient_exactness},
      {2, "p=0 step equals an independent DP-SGD reference (1e-15)", false,
       criterion_vanilla_reduction},
      {3, "clipped per-sample norms never exceed C(1+1e-12)", false,
       criterion_clipping_sensitivity},
      {4, "200 freezing steps leave non-selected coordinates bitwise fixed",
       false, criterion_frozen_law},
      {5, "noise statistics match sigma*C and |I_s| sigma^2 C^2", false,
       criterion_noise_statistics},
      {6, "accountant matches an extended-precision oracle and is monotone",
       false, criterion_accountant},
      {9, "magnitude selection is scale invariant", false,
       criterion_scale_invariance},
      {10, "logits and gradients are per-sample independent", false,
       criterion_per_sample_independence},
  };
}

}  // namespace acceptance
