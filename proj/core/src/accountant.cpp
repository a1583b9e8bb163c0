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

#include "dpssgd/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dpssgd/errors.hpp"

namespace dpssgd {

namespace {

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double log_sum_exp(const std::vector<double>& log_terms) {
  const double max_term =
      *std::max_element(log_terms.begin(), log_terms.end());
  double sum = 0.0;
  for (double t : log_terms) sum += std::exp(t - max_term);
  return max_term + std::log(sum);
}

void validate_mechanism(double q, double sigma) {
  if (!(q >= 0.0) || q > 1.0) {
    throw ConfigError("accountant: sampling rate must be in [0, 1]");
  }
  if (!(sigma > 0.0)) {
    throw ConfigError("accountant: noise multiplier must be positive");
  }
}

}  // namespace

std::vector<int> default_orders() {
  std::vector<int> orders;
  orders.reserve(511);
  for (int a = 2; a <= 512; ++a) orders.push_back(a);
  return orders;
}

double rdp_one_step(double sampling_rate, double noise_multiplier, int order) {
  validate_mechanism(sampling_rate, noise_multiplier);
  if (order < 2) {
    throw ConfigError("accountant: orders must be integers >= 2");
  }
  const double q = sampling_rate;
  const double sigma = noise_multiplier;
  if (q == 0.0) return 0.0;
  if (q == 1.0) return order / (2.0 * sigma * sigma);

  // log of sum_{k=0}^{order} binom(order,k) (1-q)^(order-k) q^k
  //                          exp(k(k-1) / (2 sigma^2))
  std::vector<double> log_terms;
  log_terms.reserve(order + 1);
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  for (int k = 0; k <= order; ++k) {
    const double moment = k * (k - 1.0) / (2.0 * sigma * sigma);
    log_terms.push_back(log_binomial(order, k) + (order - k) * log_1mq +
                        k * log_q + moment);
  }
  const double value = log_sum_exp(log_terms) / (order - 1.0);
  // The divergence is nonnegative; clamp the last-ulp wobble of the k=0/k=1
  // dominated regime.
  return std::max(0.0, value);
}

RdpAccountant::RdpAccountant(double sampling_rate, double noise_multiplier,
                             std::vector<int> orders)
    : sampling_rate_(sampling_rate),
      noise_multiplier_(noise_multiplier),
      orders_(std::move(orders)) {
  validate_mechanism(sampling_rate_, noise_multiplier_);
  if (orders_.empty()) {
    throw ConfigError("accountant: order grid must not be empty");
  }
  per_step_.reserve(orders_.size());
  for (int order : orders_) {
    per_step_.push_back(rdp_one_step(sampling_rate_, noise_multiplier_, order));
  }
  rdp_.assign(orders_.size(), 0.0);
}

void RdpAccountant::compose(std::uint64_t additional_steps) {
  if (additional_steps == 0) return;
  steps_ += additional_steps;
  for (std::size_t i = 0; i < rdp_.size(); ++i) {
    rdp_[i] += static_cast<double>(additional_steps) * per_step_[i];
  }
}

EpsilonReport RdpAccountant::epsilon_for(double delta) const {
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw ConfigError("accountant: delta must be in (0, 1)");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  double best = std::numeric_limits<double>::infinity();
  int best_order = orders_.front();
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    const double eps = rdp_[i] + log_inv_delta / (orders_[i] - 1.0);
    if (eps < best) {
      best = eps;
      best_order = orders_[i];
    }
  }
  return {best, best_order};
}

EpsilonReport RdpAccountant::epsilon_after(std::uint64_t steps,
                                           double delta) const {
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw ConfigError("accountant: delta must be in (0, 1)");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  double best = std::numeric_limits<double>::infinity();
  int best_order = orders_.front();
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    const double eps = static_cast<double>(steps) * per_step_[i] +
                       log_inv_delta / (orders_[i] - 1.0);
    if (eps < best) {
      best = eps;
      best_order = orders_[i];
    }
  }
  return {best, best_order};
}

double calibrate_sigma(PrivacyBudget target, double sampling_rate,
                       std::uint64_t steps) {
  if (!(target.epsilon > 0.0)) {
    throw ConfigError("calibrate_sigma: target epsilon must be positive");
  }
  if (!(target.delta > 0.0) || !(target.delta < 1.0)) {
    throw ConfigError("calibrate_sigma: delta must be in (0, 1)");
  }
  if (steps == 0) {
    throw ConfigError("calibrate_sigma: step count must be positive");
  }

  const auto epsilon_at = [&](double sigma) {
    RdpAccountant accountant(sampling_rate, sigma);
    accountant.compose(steps);
    return accountant.epsilon_for(target.delta).epsilon;
  };

  double lo = kSigmaLowerBound;
  double hi = kSigmaUpperBound;
  if (epsilon_at(lo) <= target.epsilon) {
    return lo;  // even the least noise allowed meets the budget
  }
  const double at_upper = epsilon_at(hi);
  if (at_upper > target.epsilon) {
    throw CalibrationError(
        "calibrate_sigma: target epsilon " + std::to_string(target.epsilon) +
        " unreachable; achievable epsilon at sigma=100 is " +
        std::to_string(at_upper));
  }
  // Invariant: epsilon(lo) > target >= epsilon(hi). Epsilon decreases in
  // sigma, so bisection converges to the boundary and `hi` stays feasible.
  while (hi - lo > kSigmaTolerance) {
    const double mid = 0.5 * (lo + hi);
    if (epsilon_at(mid) <= target.epsilon) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

}  // namespace dpssgd
