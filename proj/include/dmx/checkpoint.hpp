// Copyright 2026 The dmx Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Checkpoints and metrics files.
//
// Checkpoint layout, all integers little-endian:
//
//   offset 0   8 bytes   magic "DMXCKPT\0"
//          8   u32       format version (1)
//         12   u32       bytes per scalar (4 = float, 8 = double)
//         16   u32       tensor count
//   then per tensor:
//              u32       name length, followed by the name bytes
//              u32       rank, followed by rank u64 extents
//              numel scalars, IEEE-754 little-endian
//
// A float tensor "w" of shape [2] holding {1, 2} is therefore
//   01 00 00 00 'w'  01 00 00 00  02 00 00 00 00 00 00 00  00 00 80 3f  00 00 00 40

#ifndef DMX_CHECKPOINT_HPP
#define DMX_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dmx/tensor.hpp"

namespace dmx {

inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const ParamList<S>& params);

/// Reads every tensor. Throws IoError if the file is missing and
/// FormatError on a bad magic, version, scalar width or truncation.
template <typename S>
ParamList<S> read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `params` (matched by name). Missing,
/// extra or differently shaped tensors raise ConfigError naming the tensor.
template <typename S>
void load_checkpoint(const std::filesystem::path& path, const ParamList<S>& params);

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
  double wall_ms = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,test_acc,wall_ms";

/// Writes the CSV header on construction and one flushed line per append.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void append(const MetricsRow& row);

 private:
  std::ofstream out_;
};

std::string format_metrics_row(const MetricsRow& row);

}  // namespace dmx

#endif  // DMX_CHECKPOINT_HPP
