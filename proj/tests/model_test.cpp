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

#include <cmath>
#include <vector>

#include "doctest.h"
#include "dpssgd/errors.hpp"

using dpssgd::Batch;
using dpssgd::LayerSpec;
using dpssgd::Model;
using dpssgd::ParamSet;
using dpssgd::RngStream;
using dpssgd::Shape;
using dpssgd::Tensor;

namespace {

std::vector<LayerSpec> mnist_arch(std::size_t classes = 10) {
  return {LayerSpec::conv2d(16, 5),      LayerSpec::group_norm(8),
          LayerSpec::relu(),             LayerSpec::max_pool(),
          LayerSpec::conv2d(32, 5),      LayerSpec::group_norm(8),
          LayerSpec::relu(),             LayerSpec::max_pool(),
          LayerSpec::flatten(),          LayerSpec::fully_connected(classes)};
}

std::vector<LayerSpec> tiny_arch(std::size_t classes = 2) {
  return {LayerSpec::conv2d(8, 3), LayerSpec::group_norm(4),
          LayerSpec::relu(),       LayerSpec::max_pool(),
          LayerSpec::flatten(),    LayerSpec::fully_connected(classes)};
}

Model tiny_model(std::uint64_t seed = 1) {
  RngStream init(seed, 0);
  return Model::build(tiny_arch(), {1, 4, 4}, 2, init);
}

Batch random_batch(std::size_t b, const Shape& sample, std::size_t classes,
                   std::uint64_t seed) {
  RngStream s(seed, 50);
  Shape shape{b};
  shape.insert(shape.end(), sample.begin(), sample.end());
  Batch batch;
  batch.inputs = dpssgd::gaussian_sample(s, shape);
  batch.labels.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    batch.labels[i] = static_cast<int>(s.next_below(classes));
  }
  return batch;
}

}  // namespace

TEST_CASE("parameter count of the MNIST architecture is computable by hand") {
  RngStream init(3, 0);
  const Model m = Model::build(mnist_arch(), {1, 28, 28}, 10, init);
  // conv1 16x1x5x5+16, norm 16+16, conv2 32x16x5x5+32, norm 32+32,
  // fc 10x512+10 on the 32x4x4 flattened map.
  const std::size_t expected = (400 + 16) + 32 + (12800 + 32) + 64 + (5120 + 10);
  CHECK(m.parameter_count() == expected);
  CHECK(m.parameter_count() == 18474);
}

TEST_CASE("degenerate specs are configuration errors") {
  RngStream init(3, 0);
  CHECK_THROWS_AS(Model::build({}, {1, 4, 4}, 2, init), dpssgd::ConfigError);
  // Not chainable: fc before flatten.
  CHECK_THROWS_AS(
      Model::build({LayerSpec::fully_connected(2)}, {1, 4, 4}, 2, init),
      dpssgd::ConfigError);
  // Final width disagrees with class count.
  CHECK_THROWS_AS(Model::build({LayerSpec::flatten(),
                                LayerSpec::fully_connected(3)},
                               {1, 4, 4}, 2, init),
                  dpssgd::ConfigError);
  // Groups must divide channels.
  CHECK_THROWS_AS(Model::build({LayerSpec::conv2d(6, 3),
                                LayerSpec::group_norm(4), LayerSpec::flatten(),
                                LayerSpec::fully_connected(2)},
                               {1, 4, 4}, 2, init),
                  dpssgd::ConfigError);
}

TEST_CASE("identical init streams build bitwise-identical models") {
  RngStream a(9, 0);
  RngStream b(9, 0);
  const Model ma = Model::build(tiny_arch(), {1, 4, 4}, 2, a);
  const Model mb = Model::build(tiny_arch(), {1, 4, 4}, 2, b);
  REQUIRE(ma.params().size() == mb.params().size());
  for (std::size_t i = 0; i < ma.params().size(); ++i) {
    CHECK(ma.params()[i].name == mb.params()[i].name);
    for (std::size_t j = 0; j < ma.params()[i].value.size(); ++j) {
      CHECK(ma.params()[i].value[j] == mb.params()[i].value[j]);
    }
  }
}

TEST_CASE("parameter enumeration is stable and canonically ordered") {
  const Model m = tiny_model();
  const std::vector<std::string> expected{
      "layer0.bias", "layer0.weight", "layer1.scale",
      "layer1.shift", "layer5.bias",  "layer5.weight"};
  REQUIRE(m.params().size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(m.params()[i].name == expected[i]);
  }
  CHECK(m.params()[1].prunable);
  CHECK(m.params()[5].prunable);
  CHECK_FALSE(m.params()[0].prunable);
  CHECK_FALSE(m.params()[2].prunable);
}

TEST_CASE("a sample's logits do not depend on its batch") {
  const Model m = tiny_model(4);
  const Batch batch = random_batch(8, {1, 4, 4}, 2, 21);
  const Tensor all_logits = m.forward(batch.inputs);

  // The same sample alone.
  std::vector<double> first(batch.inputs.data(), batch.inputs.data() + 16);
  const Tensor single = Tensor::from_data({1, 1, 4, 4}, std::move(first));
  const Tensor single_logits = m.forward(single);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(std::fabs(single_logits[j] - all_logits[j]) < 1e-12);
  }
}

TEST_CASE("duplicated samples produce duplicated logits and gradients") {
  const Model m = tiny_model(5);
  Batch batch = random_batch(1, {1, 4, 4}, 2, 33);
  std::vector<double> doubled(batch.inputs.values().begin(),
                              batch.inputs.values().end());
  doubled.insert(doubled.end(), batch.inputs.values().begin(),
                 batch.inputs.values().end());
  Batch pair;
  pair.inputs = Tensor::from_data({2, 1, 4, 4}, std::move(doubled));
  pair.labels = {batch.labels[0], batch.labels[0]};

  const Tensor logits = m.forward(pair.inputs);
  CHECK(logits[0] == logits[2]);
  CHECK(logits[1] == logits[3]);

  const auto [loss, grads] = m.loss_and_per_sample_gradients(pair);
  (void)loss;
  REQUIRE(grads.batch_size() == 2);
  for (std::size_t t = 0; t < grads.samples[0].size(); ++t) {
    for (std::size_t j = 0; j < grads.samples[0][t].value.size(); ++j) {
      CHECK(grads.samples[0][t].value[j] == grads.samples[1][t].value[j]);
    }
  }
}

TEST_CASE("all-zero fully-connected weights map zero input to zero logits") {
  RngStream init(2, 0);
  Model m = Model::build({LayerSpec::flatten(), LayerSpec::fully_connected(3)},
                         {1, 2, 2}, 3, init);
  // Zero out the fc weight via an update equal to the current weights.
  ParamSet delta = dpssgd::zeros_like(m.params());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    delta[i].value = m.params()[i].value;
  }
  m.apply_update(delta);
  const Tensor zeros_in = Tensor::zeros({2, 1, 2, 2});
  const Tensor logits = m.forward(zeros_in);
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == 0.0);
}

TEST_CASE("per-sample gradients match central finite differences") {
  const Model m = tiny_model(7);
  const Batch batch = random_batch(3, {1, 4, 4}, 2, 55);
  const auto [loss, grads] = m.loss_and_per_sample_gradients(batch);
  (void)loss;
  const std::size_t target_sample = 1;

  // Loss of sample 1 alone as a function of a parameter perturbation.
  std::vector<double> sample_data(batch.inputs.data() + 16,
                                  batch.inputs.data() + 32);
  Batch lone;
  lone.inputs = Tensor::from_data({1, 1, 4, 4}, std::move(sample_data));
  lone.labels = {batch.labels[target_sample]};

  const double h = 1e-5;
  RngStream pick(77, 0);
  int checked = 0;
  for (std::size_t t = 0; t < m.params().size(); ++t) {
    const std::size_t n = m.params()[t].value.size();
    for (int rep = 0; rep < 6; ++rep) {
      const std::size_t idx = static_cast<std::size_t>(pick.next_below(n));
      Model plus = m, minus = m;
      ParamSet up = dpssgd::zeros_like(m.params());
      up[t].value[idx] = -h;  // apply_update subtracts
      plus.apply_update(up);
      up[t].value[idx] = h;
      minus.apply_update(up);
      const double lp = plus.loss_and_per_sample_gradients(lone).first;
      const double lm = minus.loss_and_per_sample_gradients(lone).first;
      const double fd = (lp - lm) / (2 * h);
      const double got = grads.samples[target_sample][t].value[idx];
      const double denom = std::max({std::fabs(fd), std::fabs(got), 1e-6});
      CHECK(std::fabs(fd - got) / denom < 1e-4);
      ++checked;
    }
  }
  CHECK(checked >= 30);
}

TEST_CASE("softmax shift invariance: fc bias gradients sum to zero") {
  const Model m = tiny_model(8);
  const Batch batch = random_batch(4, {1, 4, 4}, 2, 70);
  const auto [loss, grads] = m.loss_and_per_sample_gradients(batch);
  (void)loss;
  for (std::size_t b = 0; b < grads.batch_size(); ++b) {
    // Bias of the final fc layer is the second-to-last entry.
    const Tensor& fc_bias = grads.samples[b][grads.samples[b].size() - 2].value;
    double sum = 0.0;
    for (std::size_t j = 0; j < fc_bias.size(); ++j) sum += fc_bias[j];
    CHECK(std::fabs(sum) < 1e-10);
  }
}

TEST_CASE("labels outside the class range are data errors") {
  const Model m = tiny_model();
  Batch batch = random_batch(2, {1, 4, 4}, 2, 80);
  batch.labels[1] = 2;
  CHECK_THROWS_AS(m.loss_and_per_sample_gradients(batch), dpssgd::DataError);
  batch.labels[1] = -1;
  CHECK_THROWS_AS(m.loss_and_per_sample_gradients(batch), dpssgd::DataError);
}

TEST_CASE("apply_update arithmetic") {
  Model m = tiny_model(11);
  const ParamSet before = m.params();

  SUBCASE("zero delta leaves the model bitwise unchanged") {
    m.apply_update(dpssgd::zeros_like(m.params()));
    for (std::size_t t = 0; t < before.size(); ++t) {
      for (std::size_t j = 0; j < before[t].value.size(); ++j) {
        CHECK(m.params()[t].value[j] == before[t].value[j]);
      }
    }
  }

  SUBCASE("delta then -delta restores the parameters") {
    RngStream s(5, 5);
    ParamSet delta = dpssgd::zeros_like(m.params());
    for (auto& p : delta) {
      p.value = dpssgd::gaussian_sample(s, p.value.shape());
    }
    m.apply_update(delta);
    dpssgd::scale_params_in_place(delta, -1.0);
    m.apply_update(delta);
    for (std::size_t t = 0; t < before.size(); ++t) {
      for (std::size_t j = 0; j < before[t].value.size(); ++j) {
        CHECK(m.params()[t].value[j] ==
              doctest::Approx(before[t].value[j]).epsilon(1e-15));
      }
    }
  }

  SUBCASE("shape mismatches are rejected") {
    ParamSet delta = dpssgd::zeros_like(m.params());
    delta.pop_back();
    CHECK_THROWS_AS(m.apply_update(delta), dpssgd::ShapeError);
  }
}

TEST_CASE("scalar update arithmetic") {
  RngStream init(4, 0);
  Model m = Model::build({LayerSpec::flatten(), LayerSpec::fully_connected(1)},
                         {1, 1, 1}, 1, init);
  ParamSet delta = dpssgd::zeros_like(m.params());
  // Force the single weight to exactly 1.0, then subtract 0.25.
  delta[1].value[0] = m.params()[1].value[0];
  m.apply_update(delta);
  delta[1].value[0] = -1.0;
  m.apply_update(delta);
  CHECK(m.params()[1].value[0] == 1.0);
  delta[1].value[0] = 0.25;
  m.apply_update(delta);
  CHECK(m.params()[1].value[0] == 0.75);
}

TEST_CASE("reinit_last_layer replaces exactly the final layer") {
  RngStream init(13, 0);
  Model m = Model::build(mnist_arch(100), {1, 28, 28}, 100, init);
  const ParamSet before = m.params();

  RngStream reinit(14, 0);
  m.reinit_last_layer(10, reinit);
  CHECK(m.class_count() == 10);
  CHECK(m.layers().back().out_features == 10);
  const std::size_t fc_bias = before.size() - 2;
  const std::size_t fc_weight = before.size() - 1;
  CHECK(m.params()[fc_weight].value.shape() == Shape{10, 512});
  for (std::size_t t = 0; t < fc_bias; ++t) {
    for (std::size_t j = 0; j < before[t].value.size(); ++j) {
      CHECK(m.params()[t].value[j] == before[t].value[j]);
    }
  }
  for (std::size_t j = 0; j < 10; ++j) {
    CHECK(m.params()[fc_bias].value[j] == 0.0);
  }

  // Same stream state, same reinit.
  RngStream a(15, 0), b(15, 0);
  Model ma = m, mb = m;
  ma.reinit_last_layer(10, a);
  mb.reinit_last_layer(10, b);
  for (std::size_t j = 0; j < ma.params()[fc_weight].value.size(); ++j) {
    CHECK(ma.params()[fc_weight].value[j] == mb.params()[fc_weight].value[j]);
  }
}

TEST_CASE("per-sample gradients ignore the rest of the batch") {
  const Model m = tiny_model(19);
  const Batch batch = random_batch(6, {1, 4, 4}, 2, 91);
  const auto [loss_a, grads_a] = m.loss_and_per_sample_gradients(batch);
  (void)loss_a;

  for (int trial = 0; trial < 5; ++trial) {
    Batch mutated = random_batch(6, {1, 4, 4}, 2, 1000 + trial);
    // Keep sample 2 and its label, scramble everything else.
    std::copy_n(batch.inputs.data() + 2 * 16, 16, mutated.inputs.data() + 2 * 16);
    mutated.labels[2] = batch.labels[2];
    const auto [loss_b, grads_b] = m.loss_and_per_sample_gradients(mutated);
    (void)loss_b;
    for (std::size_t t = 0; t < grads_a.samples[2].size(); ++t) {
      for (std::size_t j = 0; j < grads_a.samples[2][t].value.size(); ++j) {
        CHECK(std::fabs(grads_a.samples[2][t].value[j] -
                        grads_b.samples[2][t].value[j]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("evaluate reports accuracy and loss") {
  const Model m = tiny_model(23);
  const Batch batch = random_batch(16, {1, 4, 4}, 2, 17);
  const auto metrics = dpssgd::evaluate(m, batch.inputs, batch.labels);
  CHECK(metrics.accuracy >= 0.0);
  CHECK(metrics.accuracy <= 1.0);
  CHECK(metrics.mean_loss > 0.0);
  CHECK(std::isfinite(metrics.mean_loss));
}
