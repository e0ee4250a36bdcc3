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

#include "dmx/mixing.hpp"

#include <bit>
#include <cmath>

#include "dmx/random.hpp"

namespace dmx {

bool DimSet::intersects(const DimSet& o) const {
  for (std::size_t w = 0; w < words_.size(); ++w)
    if (words_[w] & o.words_[w]) return true;
  return false;
}

DimSet& DimSet::operator|=(const DimSet& o) {
  for (std::size_t w = 0; w < words_.size(); ++w) words_[w] |= o.words_[w];
  return *this;
}

std::size_t DimSet::count() const {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

void MixingSchedule::validate() const {
  for (std::size_t k = 0; k < stages.size(); ++k) {
    for (const auto& u : stages[k].units) {
      if (u.inputs.empty() || u.outputs.empty()) {
        throw ScheduleError("stage " + std::to_string(k) + " has a mixer unit without inputs or outputs");
      }
      for (auto d : u.inputs)
        if (d >= num_dims) throw ScheduleError("stage " + std::to_string(k) + ": input dim " + std::to_string(d) +
                                               " out of range " + std::to_string(num_dims));
      for (auto d : u.outputs)
        if (d >= num_dims) throw ScheduleError("stage " + std::to_string(k) + ": output dim " + std::to_string(d) +
                                               " out of range " + std::to_string(num_dims));
    }
  }
}

void MixingSchedule::append(const MixingSchedule& other) {
  if (other.num_dims != num_dims) throw ScheduleError("cannot append schedules over different dims");
  stages.insert(stages.end(), other.stages.begin(), other.stages.end());
}

std::size_t MixingGraph::num_edges() const {
  std::size_t n = 0;
  for (const auto& s : stages) {
    n += s.pass_through.size();
    for (std::size_t u = 0; u < s.unit_inputs.size(); ++u) n += s.unit_inputs[u].count() * s.unit_outputs[u].size();
  }
  return n;
}

MixingGraph build_mixing_graph(const MixingSchedule& schedule) {
  schedule.validate();
  MixingGraph g;
  g.num_dims = schedule.num_dims;
  for (const auto& stage : schedule.stages) {
    MixingGraph::Stage s;
    std::vector<bool> written(schedule.num_dims, false);
    for (const auto& u : stage.units) {
      DimSet in(schedule.num_dims);
      for (auto d : u.inputs) in.set(d);
      s.unit_inputs.push_back(std::move(in));
      s.unit_outputs.push_back(u.outputs);
      for (auto d : u.outputs) written[d] = true;
    }
    for (std::size_t d = 0; d < schedule.num_dims; ++d)
      if (!written[d]) s.pass_through.push_back(d);
    g.stages.push_back(std::move(s));
  }
  return g;
}

namespace {

std::vector<DimSet> reach_sets(const MixingGraph& g) {
  const std::size_t n = g.num_dims;
  std::vector<DimSet> reach(n, DimSet(n));
  for (std::size_t i = 0; i < n; ++i) reach[i].set(i);
  for (const auto& stage : g.stages) {
    // Units reading each dim, so a reach set only touches its own units.
    std::vector<std::vector<std::uint32_t>> readers(n);
    for (std::size_t u = 0; u < stage.unit_inputs.size(); ++u)
      stage.unit_inputs[u].for_each([&](std::size_t d) { readers[d].push_back(static_cast<std::uint32_t>(u)); });
    std::vector<bool> passes(n, false);
    for (auto d : stage.pass_through) passes[d] = true;
    std::vector<std::uint32_t> seen(stage.unit_inputs.size(), 0);
    std::uint32_t epoch = 0;
    for (auto& r : reach) {
      ++epoch;
      DimSet next(n);
      r.for_each([&](std::size_t d) {
        if (passes[d]) next.set(d);
        for (auto u : readers[d]) {
          if (seen[u] == epoch) continue;
          seen[u] = epoch;
          for (auto o : stage.unit_outputs[u]) next.set(o);
        }
      });
      r = std::move(next);
    }
  }
  return reach;
}

}  // namespace

BoolMatrix reachability(const MixingGraph& g) {
  const auto reach = reach_sets(g);
  const auto n = static_cast<Eigen::Index>(g.num_dims);
  BoolMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index o = 0; o < n; ++o) m(i, o) = reach[static_cast<std::size_t>(i)].test(static_cast<std::size_t>(o));
  return m;
}

MixingReport check_complete_mixing(const MixingGraph& g) {
  const auto reach = reach_sets(g);
  MixingReport r;
  r.complete = true;
  for (std::size_t i = 0; i < g.num_dims; ++i) {
    r.reach_counts.push_back(reach[i].count());
    if (r.reach_counts.back() == g.num_dims) continue;
    r.complete = false;
    for (std::size_t o = 0; o < g.num_dims && r.missing_pairs.size() < 10; ++o)
      if (!reach[i].test(o)) r.missing_pairs.emplace_back(i, o);
  }
  return r;
}

MixingSchedule lower_butterfly(const ButterflySchedule& s) {
  MixingSchedule m;
  m.num_dims = s.input_dim;
  for (std::size_t layer = 0; layer < s.num_layers; ++layer) {
    MixingStage stage;
    for (auto& group : butterfly_groups(s.input_dim, s.block_size, s.strides[layer])) stage.units.push_back({group, group});
    m.stages.push_back(std::move(stage));
  }
  return m;
}

MixingSchedule lower_dense(std::size_t num_dims) {
  MixingSchedule m;
  m.num_dims = num_dims;
  std::vector<std::size_t> all(num_dims);
  for (std::size_t d = 0; d < num_dims; ++d) all[d] = d;
  m.stages.push_back({{{all, all}}});
  return m;
}

MixingSchedule lower_attention(std::size_t seq_len, const std::vector<TokenBlocking>& layers) {
  MixingSchedule m;
  m.num_dims = seq_len;
  for (const auto& b : layers) {
    if (b.block_size == 0 || b.stride == 0 || seq_len % (b.block_size * b.stride) != 0) {
      throw ScheduleError("token blocking (" + std::to_string(b.block_size) + ", " + std::to_string(b.stride) +
                          ") does not tile " + std::to_string(seq_len) + " tokens");
    }
    MixingStage stage;
    for (auto& group : butterfly_groups(seq_len, b.block_size, b.stride)) stage.units.push_back({group, group});
    m.stages.push_back(std::move(stage));
  }
  return m;
}

MixingSchedule lower_butterfly_attention(std::size_t seq_len, std::size_t radix, std::size_t depth) {
  const auto s = make_butterfly_schedule(seq_len, radix);
  std::vector<TokenBlocking> layers;
  for (std::size_t i = 0; i < depth; ++i) layers.push_back({radix, s.stride_for(i)});
  return lower_attention(seq_len, layers);
}

std::map<char, TokenBlocking> example_token_blockings() {
  return {{'a', {8, 1}}, {'b', {8, 8}}, {'c', {16, 1}}, {'d', {4, 16}}, {'e', {8, 4}}, {'f', {16, 4}}};
}

MixingSchedule lower_patch_mixer(std::size_t image_size, const std::vector<std::size_t>& patch_sizes,
                                 std::size_t channels, std::size_t num_layers) {
  if (patch_sizes.empty()) throw ScheduleError("patch schedule needs at least one patch size");
  MixingSchedule m;
  m.num_dims = channels * image_size * image_size;
  for (std::size_t layer = 0; layer < num_layers; ++layer) {
    const std::size_t k = patch_sizes[layer % patch_sizes.size()];
    if (k == 0 || image_size % k != 0) {
      throw ScheduleError("patch size " + std::to_string(k) + " does not divide image size " +
                          std::to_string(image_size));
    }
    MixingStage stage;
    for (std::size_t tr = 0; tr < image_size / k; ++tr)
      for (std::size_t tc = 0; tc < image_size / k; ++tc) {
        std::vector<std::size_t> tile;
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t r = 0; r < k; ++r)
            for (std::size_t q = 0; q < k; ++q) tile.push_back((c * image_size + tr * k + r) * image_size + tc * k + q);
        stage.units.push_back({tile, tile});
      }
    m.stages.push_back(std::move(stage));
  }
  return m;
}

namespace {

// Stages mixing `count` independent lines of `width` dims each; dim of line
// l, position p is index(l, p).
template <typename Index>
std::vector<MixingStage> line_stages(std::size_t count, std::size_t width, const ButterflySchedule* schedule,
                                     Index index) {
  std::vector<std::vector<std::vector<std::size_t>>> layer_groups;  // per layer: groups of positions
  if (schedule == nullptr) {
    std::vector<std::size_t> all(width);
    for (std::size_t p = 0; p < width; ++p) all[p] = p;
    layer_groups.push_back({all});
  } else {
    if (schedule->input_dim != width) throw ScheduleError("butterfly schedule width does not match mixer axis");
    for (std::size_t layer = 0; layer < schedule->num_layers; ++layer) {
      layer_groups.push_back(butterfly_groups(width, schedule->block_size, schedule->strides[layer]));
    }
  }
  std::vector<MixingStage> out;
  for (const auto& groups : layer_groups) {
    MixingStage stage;
    for (std::size_t l = 0; l < count; ++l)
      for (const auto& g : groups) {
        std::vector<std::size_t> dims;
        for (auto p : g) dims.push_back(index(l, p));
        stage.units.push_back({dims, dims});
      }
    out.push_back(std::move(stage));
  }
  return out;
}

}  // namespace

MixingSchedule lower_mlp_mixer(std::size_t num_tokens, std::size_t channels, std::size_t depth,
                               const ButterflySchedule* token_schedule, const ButterflySchedule* channel_schedule) {
  MixingSchedule m;
  m.num_dims = num_tokens * channels;
  for (std::size_t b = 0; b < depth; ++b) {
    for (auto& s : line_stages(channels, num_tokens, token_schedule,
                               [&](std::size_t c, std::size_t t) { return t * channels + c; }))
      m.stages.push_back(std::move(s));
    for (auto& s : line_stages(num_tokens, channels, channel_schedule,
                               [&](std::size_t t, std::size_t c) { return t * channels + c; }))
      m.stages.push_back(std::move(s));
  }
  return m;
}

BoolMatrix jacobian_support(const VectorFn& f, const Tensord& x, double threshold, double step) {
  NoGradGuard guard;
  Tensord probe = x.detach();
  const std::size_t outputs = f(probe).numel();
  BoolMatrix s(static_cast<Eigen::Index>(x.numel()), static_cast<Eigen::Index>(outputs));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const Tensord up = f(probe);
    probe[i] = saved - step;
    const Tensord down = f(probe);
    probe[i] = saved;
    for (std::size_t j = 0; j < outputs; ++j) {
      const double d = (up[j] - down[j]) / (2 * step);
      if (!std::isfinite(d)) {
        throw NumericError("non-finite output while differentiating input " + std::to_string(i) + ", output " +
                           std::to_string(j));
      }
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::abs(d) > threshold;
    }
  }
  return s;
}

BoolMatrix group_support(const BoolMatrix& support, std::size_t in_group, std::size_t out_group) {
  const auto ig = static_cast<Eigen::Index>(in_group), og = static_cast<Eigen::Index>(out_group);
  if (in_group == 0 || out_group == 0 || support.rows() % ig != 0 || support.cols() % og != 0) {
    throw DimensionError("support matrix does not split into the requested groups");
  }
  BoolMatrix g(support.rows() / ig, support.cols() / og);
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = support.block(r * ig, c * og, ig, og).any();
  return g;
}

double jacobian_density(const VectorFn& f, const Shape& input_shape, std::size_t trials, std::uint64_t seed,
                        double threshold) {
  Rng rng(seed);
  BoolMatrix total;
  for (std::size_t t = 0; t < std::max<std::size_t>(trials, 1); ++t) {
    const auto s = jacobian_support(f, uniform_tensor<double>(input_shape, 1.0, rng), threshold);
    total = t == 0 ? s : BoolMatrix(total.array() || s.array());
  }
  return static_cast<double>(total.count()) / static_cast<double>(total.size());
}

}  // namespace dmx
