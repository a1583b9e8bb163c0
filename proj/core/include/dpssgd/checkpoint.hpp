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

#ifndef DPSSGD_CHECKPOINT_HPP_
#define DPSSGD_CHECKPOINT_HPP_

#include <optional>
#include <string>

#include "dpssgd/model.hpp"
#include "dpssgd/sparsify.hpp"

namespace dpssgd {

// Self-describing binary model container, all little-endian:
//
//   magic "DPSS", format version u32
//   class_count u32, input shape (rank u32 + dims u64)
//   layer table (count u32, then one fixed-width record per layer)
//   parameter records: name length u32 + name bytes + rank u32 +
//     dims u64 + raw f64 payload
//   frozen-mask section: tensor count u32 (0 when absent), then per tensor
//     the sorted u64 non-selected index list
//
// Round trips are bitwise lossless: saving a loaded checkpoint reproduces
// the original file byte for byte.
struct LoadedCheckpoint {
  Model model;
  std::optional<FrozenMask> mask;
};

void save_checkpoint(const std::string& path, const Model& model,
                     const FrozenMask* mask = nullptr);

LoadedCheckpoint load_checkpoint(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace dpssgd

#endif  // DPSSGD_CHECKPOINT_HPP_
