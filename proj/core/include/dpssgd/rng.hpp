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

#ifndef DPSSGD_RNG_HPP_
#define DPSSGD_RNG_HPP_

#include <cstdint>

namespace dpssgd {

// Counter-based random stream. Every draw is a pure function of
// (seed, stream_id, counter), so any draw sequence can be replayed on any
// platform and is independent of execution order elsewhere in the program.
//
// Streams are single-owner: concurrent tasks must not share one stream and
// should fork() their own instead. Distinct stream ids produce statistically
// independent sequences.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id,
            std::uint64_t counter = 0)
      : seed_(seed), stream_id_(stream_id), counter_(counter) {}

  // Next raw 64-bit word; advances the counter by one.
  std::uint64_t next_u64();

  // Uniform draw in the open interval (0, 1); one counter tick.
  double next_uniform();

  // Standard normal draw via the inverse CDF; exactly one counter tick, so a
  // tensor of n samples consumes exactly n counter positions.
  double next_gaussian();

  // Uniform integer in [0, bound), bound > 0. Uses rejection, so it may
  // consume more than one counter tick.
  std::uint64_t next_below(std::uint64_t bound);

  // Derives a decorrelated child stream from this stream's identity and a
  // caller-chosen tag. Forking does not advance this stream.
  RngStream fork(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_;
};

namespace detail {

// Quantile function of the standard normal distribution (Wichura's AS 241,
// double precision variant). Defined on (0, 1).
double inverse_normal_cdf(double p);

// 64-bit finalizer-style mixer used to derive stream ids.
std::uint64_t mix64(std::uint64_t z);

}  // namespace detail

}  // namespace dpssgd

#endif  // DPSSGD_RNG_HPP_
