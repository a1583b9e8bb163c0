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

#ifndef DPSSGD_ACCOUNTANT_HPP_
#define DPSSGD_ACCOUNTANT_HPP_

#include <cstdint>
#include <vector>

namespace dpssgd {

struct PrivacyBudget {
  double epsilon;  // > 0
  double delta;    // in (0, 1)
};

struct EpsilonReport {
  double epsilon;
  int best_order;  // the order that attained the minimum
};

// Default integer Renyi-order grid: 2..512 inclusive.
std::vector<int> default_orders();

// Renyi divergence of one Poisson-subsampled Gaussian mechanism step at an
// integer order alpha >= 2, with sampling rate q in [0, 1] and noise
// multiplier sigma > 0:
//
//   q = 1:   alpha / (2 sigma^2)
//   q = 0:   0  (no data is touched)
//   else:    1/(alpha-1) * log( sum_{k=0}^{alpha} binom(alpha, k)
//               (1-q)^(alpha-k) q^k exp(k(k-1) / (2 sigma^2)) )
//
// The sum is evaluated in log space so large alpha and small sigma do not
// overflow.
double rdp_one_step(double sampling_rate, double noise_multiplier, int order);

// Tracks the accumulated Renyi divergence of a fixed mechanism
// (sampling rate, noise multiplier) over composed steps. Composition is
// additive per order.
class RdpAccountant {
 public:
  RdpAccountant(double sampling_rate, double noise_multiplier,
                std::vector<int> orders = default_orders());

  // Accounts for `additional_steps` more steps of the mechanism.
  void compose(std::uint64_t additional_steps);

  // Standard RDP-to-DP conversion: the reported epsilon is
  // min over orders of [ rdp(order) + log(1/delta) / (order - 1) ].
  EpsilonReport epsilon_for(double delta) const;

  // Epsilon after a hypothetical `steps` compositions of this mechanism,
  // independent of the accumulated state.
  EpsilonReport epsilon_after(std::uint64_t steps, double delta) const;

  double sampling_rate() const { return sampling_rate_; }
  double noise_multiplier() const { return noise_multiplier_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<int>& orders() const { return orders_; }
  const std::vector<double>& rdp() const { return rdp_; }

 private:
  double sampling_rate_;
  double noise_multiplier_;
  std::uint64_t steps_ = 0;
  std::vector<int> orders_;
  std::vector<double> per_step_;  // rdp_one_step per order, fixed mechanism
  std::vector<double> rdp_;       // accumulated
};

// Smallest noise multiplier (to within 1e-3, bisected over [0.3, 100]) whose
// epsilon after `steps` compositions stays at or below the target. The
// result is conservative: re-running the accountant at the returned sigma
// never exceeds the target epsilon. Throws CalibrationError, naming the
// achievable epsilon at the upper bound, when the target is out of reach.
double calibrate_sigma(PrivacyBudget target, double sampling_rate,
                       std::uint64_t steps);

// Bisection tolerance used by calibrate_sigma, exposed for tests.
inline constexpr double kSigmaTolerance = 1e-3;
inline constexpr double kSigmaLowerBound = 0.3;
inline constexpr double kSigmaUpperBound = 100.0;

}  // namespace dpssgd

#endif  // DPSSGD_ACCOUNTANT_HPP_
