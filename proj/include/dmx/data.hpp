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

// Datasets: CIFAR binary batches and synthetic mixing tasks.

#ifndef DMX_DATA_HPP
#define DMX_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmx/tensor.hpp"

namespace dmx {

/// images [N, C, H, W] with values in [0, 1]; labels in [0, num_classes).
/// An empty dataset has no image tensor (extents are positive).
struct Dataset {
  Tensorf images;
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
};

// CIFAR -----------------------------------------------------------------------

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

/// Parses one CIFAR binary file: records of `label_bytes` label bytes (the
/// last one is used) followed by 3072 pixel bytes as R, G, B 32x32 planes,
/// row-major. Pixels are scaled by 1/255.
Dataset parse_cifar_file(const std::filesystem::path& file, std::size_t label_bytes, int num_classes);

/// split "train" reads data_batch_1..5.bin, "test" reads test_batch.bin.
Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split);
/// split "train" reads train.bin, "test" reads test.bin (coarse, fine label
/// bytes; fine label used).
Dataset load_cifar100(const std::filesystem::path& dir, const std::string& split);

// Synthetic tasks ---------------------------------------------------------------

/// dims bits in {0, 1}, shaped [n, 1, 1, dims], split into `blocks`
/// contiguous blocks. One position per block, fixed by a seeded permutation,
/// carries a relevant bit; the label is the XOR of the relevant bits. Every
/// other position is an independent random bit.
Dataset permuted_parity(std::size_t n, std::size_t dims, std::uint64_t seed, std::size_t blocks = 8);

/// Same inputs as permuted_parity; with s_k = +-1 the relevant bit of block
/// k, the label is 1 when the seeded pairwise sum q(s) = sum_{i<j} w_ij s_i s_j
/// exceeds its median over all sign patterns. Every block pair interacts, and
/// q(s) = q(-s) makes any sum of per-block functions useless, yet every pair
/// term correlates with the label, so gradient training can find it.
Dataset block_sum(std::size_t n, std::size_t dims, std::uint64_t seed, std::size_t blocks = 8);

/// Binary images [n, 1, side, side]; the label is the XOR of the four
/// corner pixels, so information from every corner region must meet.
Dataset tile_class(std::size_t n, std::size_t side, std::uint64_t seed);

// Utilities ---------------------------------------------------------------------

/// Samples at the given indices, in order.
Dataset take(const Dataset& d, const std::vector<std::size_t>& indices);
/// The first `per_class` samples of every class, in original order.
Dataset first_per_class(const Dataset& d, std::size_t per_class);
/// Splits off the last `round(test_fraction * n)` samples as the test set.
std::pair<Dataset, Dataset> split_tail(const Dataset& d, double test_fraction);
/// Bilinear resize (align_corners = false, edge clamped) to side x side.
Tensorf resize_bilinear(const Tensorf& images, std::size_t side);

}  // namespace dmx

#endif  // DMX_DATA_HPP
