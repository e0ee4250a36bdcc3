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

// Block-sparse MLPs and the Butterfly MLP.
//
// A BlockMlp applies an independent MLP to each contiguous block of
// `block_dim` features. A ButterflyMlp interleaves BlockMlps with butterfly
// permutations so that after ceil(log_r N) layers every output depends on
// every input. With radix N it degenerates to a single dense MLP.

#ifndef DMX_BLOCK_MLP_HPP
#define DMX_BLOCK_MLP_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "dmx/butterfly.hpp"
#include "dmx/mac_counter.hpp"
#include "dmx/ops.hpp"
#include "dmx/random.hpp"

namespace dmx {

/// Dense affine map over the last axis: weight [in, out], bias [out].
template <typename S>
struct Linear {
  Tensor<S> weight;
  Tensor<S> bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return {uniform_tensor<S>({in, out}, bound, rng), uniform_tensor<S>({out}, bound, rng)};
  }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  std::size_t num_params() const { return in_features() * out_features() + out_features(); }
  std::uint64_t macs(std::size_t rows) const {
    return static_cast<std::uint64_t>(rows) * in_features() * out_features();
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + "weight", weight});
    out.push_back({prefix + "bias", bias});
  }
};

template <typename S>
Tensor<S> linear_forward(const Tensor<S>& x, const Linear<S>& p) {
  if (x.shape().back() != p.in_features()) {
    throw DimensionError("linear expects last extent " + std::to_string(p.in_features()) + ", got " +
                         to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = p.out_features();
  auto flat = reshape(x, {x.numel() / p.in_features(), p.in_features()});
  return reshape(add(matmul(flat, p.weight), p.bias), out_shape);
}

/// Plain MLP: Linear, GELU, Linear, ... (no activation after the last).
template <typename S>
struct DenseMlp {
  std::vector<Linear<S>> layers;

  static DenseMlp init(const std::vector<std::size_t>& dims, Rng& rng) {
    DenseMlp m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) m.layers.push_back(Linear<S>::init(dims[i], dims[i + 1], rng));
    return m;
  }
  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.num_params();
    return n;
  }
  std::uint64_t macs(std::size_t rows) const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.macs(rows);
    return n;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + std::to_string(i) + ".", out);
  }
};

template <typename S>
Tensor<S> dense_mlp_forward(const Tensor<S>& x, const DenseMlp<S>& p) {
  Tensor<S> h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    h = linear_forward(h, p.layers[i]);
    if (i + 1 < p.layers.size()) h = gelu(h);
  }
  return h;
}

/// weight [num_blocks, in_block, out_block], bias [num_blocks, 1, out_block].
template <typename S>
struct BlockLinear {
  Tensor<S> weight;
  Tensor<S> bias;

  /// uniform(-1/sqrt(in_block), 1/sqrt(in_block)) per block.
  static BlockLinear init(std::size_t num_blocks, std::size_t in_block, std::size_t out_block, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_block));
    return {uniform_tensor<S>({num_blocks, in_block, out_block}, bound, rng),
            uniform_tensor<S>({num_blocks, 1, out_block}, bound, rng)};
  }
  std::size_t num_blocks() const { return weight.dim(0); }
  std::size_t in_block() const { return weight.dim(1); }
  std::size_t out_block() const { return weight.dim(2); }
  std::size_t num_params() const { return num_blocks() * (in_block() * out_block() + out_block()); }
  std::uint64_t macs(std::size_t batch) const {
    return static_cast<std::uint64_t>(batch) * num_blocks() * in_block() * out_block();
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + "weight", weight});
    out.push_back({prefix + "bias", bias});
  }
};

/// x [num_blocks, batch, in_block] -> [num_blocks, batch, out_block]
template <typename S>
Tensor<S> block_linear_forward(const Tensor<S>& x, const BlockLinear<S>& p) {
  if (x.rank() != 3 || x.dim(0) != p.num_blocks() || x.dim(2) != p.in_block()) {
    throw DimensionError("block_linear expects [" + std::to_string(p.num_blocks()) + ", batch, " +
                         std::to_string(p.in_block()) + "], got " + to_string(x.shape()));
  }
  return add(batched_matmul(x, p.weight), p.bias);
}

template <typename S>
struct BlockMlp {
  /// Per-block widths, e.g. {r, 2r, r}.
  std::vector<std::size_t> block_dims;
  std::vector<BlockLinear<S>> layers;

  static BlockMlp init(std::size_t input_dim, const std::vector<std::size_t>& block_dims, Rng& rng) {
    if (block_dims.size() < 2) throw DimensionError("BlockMlp needs at least an input and output block width");
    if (input_dim % block_dims[0] != 0) {
      throw DimensionError("block dim " + std::to_string(block_dims[0]) + " does not divide input dim " +
                           std::to_string(input_dim));
    }
    BlockMlp m;
    m.block_dims = block_dims;
    const std::size_t blocks = input_dim / block_dims[0];
    for (std::size_t i = 0; i + 1 < block_dims.size(); ++i) {
      m.layers.push_back(BlockLinear<S>::init(blocks, block_dims[i], block_dims[i + 1], rng));
    }
    return m;
  }
  std::size_t block_dim() const { return block_dims.front(); }
  std::size_t num_blocks() const { return layers.front().num_blocks(); }
  std::size_t input_dim() const { return num_blocks() * block_dims.front(); }
  std::size_t output_dim() const { return num_blocks() * block_dims.back(); }
  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.num_params();
    return n;
  }
  std::uint64_t macs(std::size_t batch) const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.macs(batch);
    return n;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + std::to_string(i) + ".", out);
  }
};

/// x [batch, dim] -> [batch, num_blocks * block_dims.back()]
template <typename S>
Tensor<S> block_mlp_forward(const Tensor<S>& x, const BlockMlp<S>& p) {
  if (x.rank() != 2 || x.dim(1) % p.block_dim() != 0 || x.dim(1) != p.input_dim()) {
    throw DimensionError("block_mlp expects [batch, " + std::to_string(p.input_dim()) + "] with block dim " +
                         std::to_string(p.block_dim()) + ", got " + to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  auto h = transpose_axes(reshape(x, {batch, p.num_blocks(), p.block_dim()}), 0, 1);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    h = block_linear_forward(h, p.layers[i]);
    if (i + 1 < p.layers.size()) h = gelu(h);
  }
  return reshape(transpose_axes(h, 0, 1), {batch, p.output_dim()});
}

/// Permutation instrumentation. `calls` counts every permute and unpermute
/// invocation; `data_movement_passes` only those with stride > 1, which move
/// data (stride 1 is the identity).
struct PermutationCounter {
  std::uint64_t calls = 0;
  std::uint64_t data_movement_passes = 0;

  void record(std::size_t stride) {
    ++calls;
    if (stride > 1) {
      ++data_movement_passes;
      record_permutation_pass();
    }
  }
  void reset() { *this = {}; }
};

template <typename S>
struct ButterflyMlp {
  ButterflySchedule schedule;
  std::vector<BlockMlp<S>> blocks;
  mutable PermutationCounter permutations;

  /// One BlockMlp per schedule layer with widths {r, e*r, r} (or
  /// {r, r} when linear_only).
  static ButterflyMlp init(const ButterflySchedule& schedule, std::size_t expansion, Rng& rng,
                           bool linear_only = false) {
    ButterflyMlp m;
    m.schedule = schedule;
    const std::size_t r = schedule.block_size;
    const std::vector<std::size_t> dims =
        linear_only ? std::vector<std::size_t>{r, r} : std::vector<std::size_t>{r, expansion * r, r};
    for (std::size_t i = 0; i < schedule.num_layers; ++i) {
      m.blocks.push_back(BlockMlp<S>::init(schedule.input_dim, dims, rng));
    }
    return m;
  }
  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.num_params();
    return n;
  }
  std::uint64_t macs(std::size_t batch) const {
    std::uint64_t n = 0;
    for (const auto& b : blocks) n += b.macs(batch);
    return n;
  }
  /// Data-movement passes one forward performs.
  std::size_t permutation_passes() const {
    std::size_t n = 0;
    for (auto s : schedule.strides) n += s > 1 ? 2 : 0;
    return n;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + std::to_string(i) + ".", out);
  }
};

/// x [batch, N]: per layer permute, BlockMlp, unpermute.
template <typename S>
Tensor<S> butterfly_mlp_forward(const Tensor<S>& x, const ButterflyMlp<S>& p) {
  if (x.rank() != 2 || x.dim(1) != p.schedule.input_dim) {
    throw ScheduleError("butterfly_mlp expects [batch, " + std::to_string(p.schedule.input_dim) + "], got " +
                        to_string(x.shape()));
  }
  const std::size_t r = p.schedule.block_size;
  Tensor<S> h = x;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::size_t stride = p.schedule.strides[i];
    h = butterfly_permute(h, r, stride);
    p.permutations.record(stride);
    h = block_mlp_forward(h, p.blocks[i]);
    h = butterfly_unpermute(h, r, stride);
    p.permutations.record(stride);
  }
  return h;
}

/// MLP whose two affine maps are butterfly-linear factor stacks.
template <typename S>
struct ButterflyLinearMlp {
  ButterflyMlp<S> first;
  ButterflyMlp<S> second;

  static ButterflyLinearMlp init(const ButterflySchedule& schedule, Rng& rng) {
    return {ButterflyMlp<S>::init(schedule, 1, rng, true), ButterflyMlp<S>::init(schedule, 1, rng, true)};
  }
  std::size_t num_params() const { return first.num_params() + second.num_params(); }
  std::uint64_t macs(std::size_t batch) const { return first.macs(batch) + second.macs(batch); }
  std::size_t permutation_passes() const { return first.permutation_passes() + second.permutation_passes(); }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    first.collect(prefix + "0.", out);
    second.collect(prefix + "1.", out);
  }
};

template <typename S>
Tensor<S> butterfly_linear_mlp_forward(const Tensor<S>& x, const ButterflyLinearMlp<S>& p) {
  return butterfly_mlp_forward(gelu(butterfly_mlp_forward(x, p.first)), p.second);
}

enum class MlpKind { kDense, kButterflyMlp, kButterflyLinear };

/// Pluggable N -> N MLP used wherever a mixer needs one.
template <typename S>
struct FeatureMlp {
  std::variant<DenseMlp<S>, ButterflyMlp<S>, ButterflyLinearMlp<S>> impl;

  /// radix and layers are ignored for kDense; layers defaults to the
  /// complete-mixing depth.
  static FeatureMlp init(MlpKind kind, std::size_t dim, std::size_t expansion, std::size_t radix, Rng& rng,
                         std::optional<std::size_t> layers = std::nullopt) {
    switch (kind) {
      case MlpKind::kDense:
        return {DenseMlp<S>::init({dim, expansion * dim, dim}, rng)};
      case MlpKind::kButterflyMlp:
        return {ButterflyMlp<S>::init(make_butterfly_schedule(dim, radix, layers), expansion, rng)};
      case MlpKind::kButterflyLinear:
        if (expansion != 1) throw ConfigError("butterfly_linear MLPs support expansion 1 only");
        return {ButterflyLinearMlp<S>::init(make_butterfly_schedule(dim, radix, layers), rng)};
    }
    throw ConfigError("unknown MLP kind");
  }
  std::size_t num_params() const {
    return std::visit([](const auto& m) { return m.num_params(); }, impl);
  }
  std::uint64_t macs(std::size_t rows) const {
    return std::visit([rows](const auto& m) { return m.macs(rows); }, impl);
  }
  std::size_t permutation_passes() const {
    if (const auto* b = std::get_if<ButterflyMlp<S>>(&impl)) return b->permutation_passes();
    if (const auto* b = std::get_if<ButterflyLinearMlp<S>>(&impl)) return b->permutation_passes();
    return 0;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    std::visit([&](const auto& m) { m.collect(prefix, out); }, impl);
  }
};

/// Applies the MLP over the last axis of x.
template <typename S>
Tensor<S> feature_mlp_forward(const Tensor<S>& x, const FeatureMlp<S>& p) {
  const std::size_t dim = x.shape().back();
  auto flat = reshape(x, {x.numel() / dim, dim});
  Tensor<S> y = std::visit(
      [&](const auto& m) -> Tensor<S> {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, DenseMlp<S>>) {
          return dense_mlp_forward(flat, m);
        } else if constexpr (std::is_same_v<M, ButterflyMlp<S>>) {
          return butterfly_mlp_forward(flat, m);
        } else {
          return butterfly_linear_mlp_forward(flat, m);
        }
      },
      p.impl);
  Shape out_shape = x.shape();
  out_shape.back() = y.dim(1);
  return reshape(y, out_shape);
}

}  // namespace dmx

#endif  // DMX_BLOCK_MLP_HPP
