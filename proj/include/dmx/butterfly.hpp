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

// Index arithmetic of the butterfly structure.
//
// Layer i of a radix-r butterfly over N dimensions groups indices that are
// `stride` apart into blocks of r, where
//
//   stride = r^i        if r^(i+1) <= N
//          = N / r      otherwise (final-layer clamp)
//
// The grouping is realized as view(-1, r, stride).transpose(1, 2) on the last
// axis, and undone by view(-1, stride, r).transpose(1, 2).

#ifndef DMX_BUTTERFLY_HPP
#define DMX_BUTTERFLY_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "dmx/ops.hpp"

namespace dmx {

std::size_t compute_stride(std::size_t input_dim, std::size_t block_size, std::size_t layer);

/// ceil(log_r N): the layer count at which a radix-r butterfly mixes
/// completely. Radix-N gives 1.
std::size_t num_butterfly_layers(std::size_t input_dim, std::size_t block_size);

struct ButterflySchedule {
  std::size_t input_dim = 0;
  std::size_t block_size = 0;
  std::size_t num_layers = 0;
  std::vector<std::size_t> strides;

  /// Fewer layers than num_butterfly_layers(input_dim, block_size).
  bool partial() const { return num_layers < num_butterfly_layers(input_dim, block_size); }
  /// Stride for a model layer; deeper models cycle through the schedule.
  std::size_t stride_for(std::size_t layer) const { return strides[layer % strides.size()]; }
};

/// Validates divisibility and fills the stride list. `layers` defaults to
/// num_butterfly_layers(N, r).
ButterflySchedule make_butterfly_schedule(std::size_t input_dim, std::size_t block_size,
                                          std::optional<std::size_t> layers = std::nullopt);

/// source[p] is the input index that lands at position p after permuting.
std::vector<std::size_t> butterfly_permutation(std::size_t input_dim, std::size_t block_size,
                                               std::size_t stride);

/// Index sets mixed jointly by one layer: block (m, s) holds
/// m*r*stride + j*stride + s for j < r.
std::vector<std::vector<std::size_t>> butterfly_groups(std::size_t input_dim, std::size_t block_size,
                                                       std::size_t stride);

void check_butterfly_divisibility(std::size_t input_dim, std::size_t block_size, std::size_t stride);

/// Permutes the last axis so each layer block becomes contiguous.
template <typename S>
Tensor<S> butterfly_permute(const Tensor<S>& x, std::size_t block_size, std::size_t stride) {
  check_butterfly_divisibility(x.shape().back(), block_size, stride);
  auto v = reshape(x, {x.numel() / (block_size * stride), block_size, stride});
  return reshape(transpose_axes(v, 1, 2), x.shape());
}

template <typename S>
Tensor<S> butterfly_unpermute(const Tensor<S>& x, std::size_t block_size, std::size_t stride) {
  check_butterfly_divisibility(x.shape().back(), block_size, stride);
  auto v = reshape(x, {x.numel() / (block_size * stride), stride, block_size});
  return reshape(transpose_axes(v, 1, 2), x.shape());
}

/// DeBut factor R^(p,q)_(r,s,t): a block-diagonal p x q matrix whose blocks
/// are r x s grids of t x t diagonal sub-blocks.
struct DebutFactor {
  std::size_t p = 0;
  std::size_t q = 0;
  std::size_t r = 0;
  std::size_t s = 0;
  std::size_t t = 1;

  std::size_t num_blocks() const { return p / (r * t); }
  void validate() const;
};

using SupportMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

SupportMatrix debut_support(const DebutFactor& f);

struct DebutComposition {
  /// t2 == r1 with a dense-sub-block right factor.
  bool original_rule = false;
  /// 1 < t2 <= r1 with a dense-sub-block right factor.
  bool relaxed_rule = false;
  /// Support of f2 * f1 fills every block of f2's block-diagonal layout.
  bool structurally_dense = false;
  /// Same verdict from a random-weight product, |entry| > 1e-12.
  bool numerically_dense = false;
  /// (r2*r1, s2*s1) under the original rule, else (r2*t2, s2*t2) under the
  /// relaxed rule; empty when neither rule applies.
  std::optional<std::pair<std::size_t, std::size_t>> effective_partition;
};

/// Analyzes the product f2 * f1. Throws IncomposableError when q2 != p1.
DebutComposition validate_debut_composition(const DebutFactor& f2, const DebutFactor& f1,
                                            std::uint64_t seed = 0);

}  // namespace dmx

#endif  // DMX_BUTTERFLY_HPP
