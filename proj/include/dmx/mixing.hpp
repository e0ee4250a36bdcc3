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

// Structural and numeric mixing analysis.
//
// A MixingSchedule is a list of stages; each stage applies mixer units that
// read a set of dims and write a set of dims. Dims no unit writes pass
// through unchanged. Mixing is complete when every input dim has a path to
// every output dim through the layered graph.

#ifndef DMX_MIXING_HPP
#define DMX_MIXING_HPP

#include <Eigen/Core>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dmx/butterfly.hpp"
#include "dmx/tensor.hpp"

namespace dmx {

struct MixingUnit {
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> outputs;
};

struct MixingStage {
  std::vector<MixingUnit> units;
};

struct MixingSchedule {
  std::size_t num_dims = 0;
  std::vector<MixingStage> stages;

  /// Throws ScheduleError for out-of-range indices or empty units.
  void validate() const;
  void append(const MixingSchedule& other);
};

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Fixed-width bit set over dims.
class DimSet {
 public:
  DimSet() = default;
  explicit DimSet(std::size_t n) : size_(n), words_((n + 63) / 64, 0) {}

  std::size_t size() const { return size_; }
  void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1U; }
  bool intersects(const DimSet& o) const;
  DimSet& operator|=(const DimSet& o);
  std::size_t count() const;
  bool all() const { return count() == size_; }
  template <typename F>
  void for_each(F&& f) const {
    for (std::size_t w = 0; w < words_.size(); ++w)
      for (std::uint64_t bits = words_[w]; bits != 0; bits &= bits - 1) f(w * 64 + static_cast<std::size_t>(std::countr_zero(bits)));
  }

 private:
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Layered graph: node (boundary k, dim d); stage k connects every input of
/// a unit to every output of that unit, and each untouched dim to itself.
struct MixingGraph {
  struct Stage {
    std::vector<DimSet> unit_inputs;
    std::vector<std::vector<std::size_t>> unit_outputs;
    std::vector<std::size_t> pass_through;
  };
  std::size_t num_dims = 0;
  std::vector<Stage> stages;

  std::size_t num_edges() const;
};

MixingGraph build_mixing_graph(const MixingSchedule& schedule);

/// reach(i, o): output dim o is reachable from input dim i.
BoolMatrix reachability(const MixingGraph& g);

struct MixingReport {
  bool complete = false;
  std::vector<std::pair<std::size_t, std::size_t>> missing_pairs;  // (input, output), at most 10
  std::vector<std::size_t> reach_counts;                           // per input dim
};

MixingReport check_complete_mixing(const MixingGraph& g);

// Lowerings ------------------------------------------------------------------

/// One stage per schedule layer; units are the butterfly groups.
MixingSchedule lower_butterfly(const ButterflySchedule& s);

/// A single stage of one unit over all dims.
MixingSchedule lower_dense(std::size_t num_dims);

/// Token grouping of one attention layer: blocks of `block_size` tokens taken
/// at `stride` (stride 1 = contiguous chunks).
struct TokenBlocking {
  std::size_t block_size = 0;
  std::size_t stride = 1;
};

/// Token-level graph of attention layers with the given groupings.
MixingSchedule lower_attention(std::size_t seq_len, const std::vector<TokenBlocking>& layers);

/// Butterfly attention over seq_len tokens, radix a, `depth` layers (strides
/// cycle through the butterfly schedule).
MixingSchedule lower_butterfly_attention(std::size_t seq_len, std::size_t radix, std::size_t depth);

/// Six token blockings over 64 tokens used to contrast complete and
/// incomplete two-layer pairs: a=(8,1) b=(8,8) c=(16,1) d=(4,16) e=(8,4)
/// f=(16,4) as (block_size, stride).
std::map<char, TokenBlocking> example_token_blockings();

/// Pixel-level graph of a patch-only mixer: dims are (c, row, col) of a
/// [C, I, I] image; layer k mixes each K_k x K_k tile over all channels.
MixingSchedule lower_patch_mixer(std::size_t image_size, const std::vector<std::size_t>& patch_sizes,
                                 std::size_t channels, std::size_t num_layers);

/// MLP-Mixer blocks over a [T, C] grid (dim = t*C + c): token mixing per
/// channel, then channel mixing per token. Pass butterfly schedules to lower
/// butterfly token/channel MLPs instead of dense ones.
MixingSchedule lower_mlp_mixer(std::size_t num_tokens, std::size_t channels, std::size_t depth,
                               const ButterflySchedule* token_schedule = nullptr,
                               const ButterflySchedule* channel_schedule = nullptr);

// Numeric --------------------------------------------------------------------

inline constexpr double kJacobianThreshold = 1e-10;

using VectorFn = std::function<Tensord(const Tensord&)>;

/// support(i, j): |d y_j / d x_i| > threshold at x, by central differences.
/// Inputs and outputs are flattened. Throws NumericError on non-finite
/// outputs.
BoolMatrix jacobian_support(const VectorFn& f, const Tensord& x, double threshold = kJacobianThreshold,
                            double step = 1e-5);

/// Collapses a support matrix to groups of consecutive dims (e.g. tokens).
BoolMatrix group_support(const BoolMatrix& support, std::size_t in_group, std::size_t out_group);

/// Union of supports over `trials` uniform(-1, 1) inputs of the given shape,
/// as a fraction of all (input, output) pairs.
double jacobian_density(const VectorFn& f, const Shape& input_shape, std::size_t trials = 1,
                        std::uint64_t seed = 0, double threshold = kJacobianThreshold);

}  // namespace dmx

#endif  // DMX_MIXING_HPP
