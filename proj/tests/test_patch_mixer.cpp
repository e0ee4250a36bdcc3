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

#include <cmath>

#include "doctest.h"
#include "dmx/gradcheck.hpp"
#include "dmx/mac_counter.hpp"
#include "dmx/patch_mixer.hpp"
#include "test_util.hpp"

using namespace dmx;
using dmx::testing::bitwise_equal;
using dmx::testing::fd_jacobian;

namespace {

template <typename M>
ParamList<double> params_of(const M& m) {
  ParamList<double> out;
  m.collect("", out);
  return out;
}

void fill_generic(ParamList<double> params, Rng& rng) {
  for (auto& p : params) {
    auto g = generic_tensor<double>(p.tensor.shape(), rng);
    std::copy(g.data().begin(), g.data().end(), p.tensor.data().begin());
  }
}

// Spatial positions whose output changes when pixel (0, 0) of channel 0 is
// perturbed, after the first `layers` layers. Outputs that do not depend on
// the pixel are recomputed bit for bit, so any difference marks dependence;
// a large step keeps deep, strongly damped paths above rounding.
std::vector<std::pair<std::size_t, std::size_t>> reach_of_origin(const PatchOnlyMixer<double>& m, std::size_t layers,
                                                                  const Tensord& x) {
  NoGradGuard guard;
  const std::size_t side = m.schedule.image_size, c = m.schedule.channels;
  auto moved = x.detach();
  moved[0] += 0.5;
  auto yu = patch_only_mixer_image(moved, m, layers);
  auto yd = patch_only_mixer_image(x, m, layers);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t col = 0; col < side; ++col) {
      bool hit = false;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = (ch * side + r) * side + col;
        hit = hit || yu[i] != yd[i];
      }
      if (hit) out.emplace_back(r, col);
    }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> square(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) out.emplace_back(r, c);
  return out;
}

}  // namespace

TEST_CASE("extract and combine patches") {
  Rng rng(1);
  for (std::size_t side = 1; side <= 12; ++side)
    for (std::size_t k = 1; k <= side; ++k) {
      if (side % k != 0) continue;
      auto x = uniform_tensor<double>({2, 3, side, side}, 1.0, rng);
      auto p = extract_patches(x, k);
      CHECK(p.shape() == Shape{2, (side / k) * (side / k), 3 * k * k});
      CHECK(bitwise_equal(combine_patches(p, 3, side, side, k), x));
    }
  SUBCASE("pixel (0, 3) of a 4x4 image lands in patch 1") {
    Tensord x({1, 1, 4, 4});
    x[3] = 1.0;
    auto p = extract_patches(x, 2);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) s += p[i * 4 + j];
      CHECK((s != 0.0) == (i == 1));
    }
  }
  SUBCASE("K = I is the flattened image") {
    auto x = uniform_tensor<double>({2, 3, 5, 5}, 1.0, rng);
    CHECK(bitwise_equal(extract_patches(x, 5), reshape(x, {2, 1, 75})));
  }
  CHECK_THROWS_AS(extract_patches(Tensord({1, 1, 6, 6}), 4), DimensionError);
}

TEST_CASE("patch schedules") {
  CHECK(effective_mixing_block({6, 8}) == 24);
  CHECK(effective_mixing_block({5, 7}) == 35);
  CHECK(effective_mixing_block({4, 4}) == 4);
  CHECK_THROWS_AS(effective_mixing_block({}), ConfigError);
  PatchSchedule s{48, {6, 8}, 3};
  CHECK(s.max_pairwise_gcd() == 2);
  CHECK(s.effective_block() == 24);
  CHECK(s.patch_for(3) == 8);
  CHECK((PatchSchedule{35, {5, 7}, 3}.max_pairwise_gcd()) == 1);
  CHECK_THROWS_AS((PatchSchedule{35, {5, 6}, 3}.validate()), DimensionError);
}

TEST_CASE("patch layer shares weights across patches") {
  Rng rng(2);
  auto m = PatchOnlyMixer<double>::init({6, {3}, 2}, 1, 2, 4, rng);
  auto patches = uniform_tensor<double>({2, 4, 18}, 1.0, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Tensord> parts;
  for (auto i : perm) parts.push_back(slice(patches, 1, i, 1));
  auto shuffled = concat(std::span<const Tensord>(parts), 1);
  auto y = patch_layer_forward(patches, m.layers[0]);
  auto ys = patch_layer_forward(shuffled, m.layers[0]);
  for (std::size_t k = 0; k < 4; ++k) CHECK(bitwise_equal(slice(ys, 1, k, 1), slice(y, 1, perm[k], 1)));
}

TEST_CASE("patch-only mixer gradients, I=6, K=3, C=2") {
  Rng rng(3);
  auto m = PatchOnlyMixer<double>::init({6, {3}, 2}, 1, 2, 4, rng);
  auto x = uniform_tensor<double>({2, 2, 6, 6}, 1.0, rng);
  auto w = uniform_tensor<double>({2, 4}, 1.0, rng);
  CHECK(grad_check([&](const Tensord& v) { return sum(mul(patch_only_mixer_forward(v, m), w)); }, x) < 1e-4);
  std::vector<Tensord> tensors;
  for (auto& p : params_of(m)) tensors.push_back(p.tensor);
  CHECK(grad_check_params([&] { return sum(mul(patch_only_mixer_forward(x, m), w)); }, tensors) < 1e-4);
}

TEST_CASE("spatial reach of the patch-only mixer") {
  Rng rng(4);
  SUBCASE("K=(5,7) on I=35 grows tile by tile") {
    auto m = PatchOnlyMixer<double>::init({35, {5, 7}, 1}, 12, 1, 2, rng);
    fill_generic(params_of(m), rng);
    auto x = uniform_tensor<double>({1, 1, 35, 35}, 1.0, rng);
    CHECK(reach_of_origin(m, 1, x) == square(5));
    // Contiguous tiles: the 7x7 tile holding the 5x5 reach is all that is
    // added, so two layers are far from covering the image.
    CHECK(reach_of_origin(m, 2, x) == square(7));
    CHECK(reach_of_origin(m, 12, x).size() == 35 * 35);
  }
  SUBCASE("K=(6,8) on I=48 stays inside the 24-block") {
    auto m = PatchOnlyMixer<double>::init({48, {6, 8}, 1}, 8, 1, 2, rng);
    fill_generic(params_of(m), rng);
    auto x = uniform_tensor<double>({1, 1, 48, 48}, 1.0, rng);
    CHECK(reach_of_origin(m, 8, x) == square(24));
  }
}

TEST_CASE("MLP-Mixer baseline") {
  Rng rng(5);
  MixerConfig c;
  CHECK(c.num_tokens() == 64);
  c.depth = 2;
  auto dense = MlpMixer<double>::init(c, rng);
  CHECK(linear_forward(extract_patches(Tensord({1, 3, 32, 32}), 4), dense.embed).shape() == Shape{1, 64, 121});
  CHECK(dense.num_params() == count_stored_scalars(params_of(dense)));

  SUBCASE("butterfly mixing MLPs change only the mixing parameters") {
    MixerConfig bc = c;
    bc.token_kind = MlpKind::kButterflyMlp;
    bc.channel_kind = MlpKind::kButterflyMlp;
    auto bfly = MlpMixer<double>::init(bc, rng);
    CHECK(bfly.num_params() == count_stored_scalars(params_of(bfly)));
    std::size_t dense_mixing = 0, bfly_mixing = 0;
    for (const auto& b : dense.blocks) dense_mixing += b.num_mixing_params();
    for (const auto& b : bfly.blocks) bfly_mixing += b.num_mixing_params();
    CHECK(bfly_mixing < dense_mixing);
    CHECK(dense.num_params() - dense_mixing == bfly.num_params() - bfly_mixing);
    MacRecorder rec;
    auto logits = mlp_mixer_forward(uniform_tensor<double>({2, 3, 32, 32}, 1.0, rng), bfly);
    CHECK(logits.shape() == Shape{2, 10});
    CHECK(rec.total() == bfly.macs(2));
  }
  SUBCASE("one mixer block mixes every token with every channel") {
    MixerConfig tiny;
    tiny.image_size = 4;
    tiny.in_channels = 1;
    tiny.patch = 2;
    tiny.hidden = 6;
    tiny.depth = 1;
    auto m = MlpMixer<double>::init(tiny, rng);
    fill_generic(params_of(m), rng);
    auto x = uniform_tensor<double>({1, 4, 6}, 1.0, rng);
    auto jac = fd_jacobian([&](const Tensord& v) { return mixer_block_forward(v, m.blocks[0]); }, x);
    CHECK((jac.array().abs() > 1e-10).all());
  }
  SUBCASE("patch-only MACs are below the mixer's at matched depth") {
    MixerConfig seven = c;
    seven.depth = 7;
    auto mixer = MlpMixer<double>::init(seven, rng);
    auto patch_only = PatchOnlyMixer<double>::init({35, {5, 7}, 3}, 7, 1, 10, rng);
    CHECK(patch_only.macs(1) < mixer.macs(1));
    CHECK(patch_only.num_params() == count_stored_scalars(params_of(patch_only)));
    MacRecorder rec;
    patch_only_mixer_forward(Tensord({1, 3, 35, 35}), patch_only);
    CHECK(rec.total() == patch_only.macs(1));
  }
}
