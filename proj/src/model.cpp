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

#include "dmx/model.hpp"

#include <cmath>

namespace dmx {

MixingSchedule model_mixing_schedule(const ExperimentConfig& c) {
  validate(c);
  const auto in = input_shape(c);
  if (c.family == "mlp") {
    const std::size_t width = in[0] * in[1] * in[2];
    if (c.mlp == "dense") return lower_dense(width);
    const auto layers = c.depth == 0 ? std::nullopt : std::optional<std::size_t>(c.depth);
    auto s = lower_butterfly(make_butterfly_schedule(width, c.radix, layers));
    if (c.mlp == "butterfly_linear") s.append(lower_butterfly(make_butterfly_schedule(width, c.radix, layers)));
    return s;
  }
  if (c.family == "patch_only") return lower_patch_mixer(in[1], c.patch_sizes, in[0], c.depth);
  const std::size_t tokens = (in[1] / c.patch) * (in[1] / c.patch);
  if (c.family == "mixer") {
    std::optional<ButterflySchedule> ts, cs;
    if (c.token_mlp != "dense") ts = make_butterfly_schedule(tokens, c.token_radix);
    if (c.channel_mlp != "dense") cs = make_butterfly_schedule(c.dim, c.channel_radix);
    return lower_mlp_mixer(tokens, c.dim, c.depth, ts ? &*ts : nullptr, cs ? &*cs : nullptr);
  }
  if (c.family == "butterfly_vit") {
    std::size_t a = c.radix;
    if (a == 0) a = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
    return lower_butterfly_attention(tokens, a, c.depth);
  }
  return lower_attention(tokens, std::vector<TokenBlocking>(c.depth, TokenBlocking{tokens, 1}));
}

}  // namespace dmx
