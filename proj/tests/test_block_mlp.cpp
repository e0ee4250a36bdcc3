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

#include "doctest.h"
#include "dmx/block_mlp.hpp"
#include "dmx/gradcheck.hpp"
#include "dmx/mac_counter.hpp"
#include "test_util.hpp"

using namespace dmx;
using dmx::testing::bitwise_equal;
using dmx::testing::fd_jacobian;

namespace {

// Weights drawn away from zero so structural zeros are the only zeros.
void make_generic(ParamList<double> params, Rng& rng) {
  for (auto& p : params) {
    auto g = generic_tensor<double>(p.tensor.shape(), rng);
    std::copy(g.data().begin(), g.data().end(), p.tensor.data().begin());
  }
}

template <typename M>
ParamList<double> params_of(const M& m) {
  ParamList<double> out;
  m.collect("", out);
  return out;
}

}  // namespace

TEST_CASE("block_linear_forward") {
  Rng rng(1);
  SUBCASE("identity weights and zero bias are the identity") {
    auto p = BlockLinear<double>::init(3, 4, 4, rng);
    std::fill(p.weight.data().begin(), p.weight.data().end(), 0.0);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < 4; ++i) p.weight[b * 16 + i * 4 + i] = 1.0;
    std::fill(p.bias.data().begin(), p.bias.data().end(), 0.0);
    auto x = uniform_tensor<double>({3, 5, 4}, 1.0, rng);
    CHECK(bitwise_equal(block_linear_forward(x, p), x));
  }
  SUBCASE("one block equals a dense affine layer") {
    auto p = BlockLinear<double>::init(1, 6, 3, rng);
    Linear<double> dense{reshape(p.weight, {6, 3}), reshape(p.bias, {3})};
    auto x = uniform_tensor<double>({5, 6}, 1.0, rng);
    CHECK(bitwise_equal(reshape(block_linear_forward(reshape(x, {1, 5, 6}), p), {5, 3}), linear_forward(x, dense)));
  }
  SUBCASE("eight blocks against a loop-over-blocks oracle") {
    auto p = BlockLinear<double>::init(8, 8, 8, rng);
    auto x = uniform_tensor<double>({8, 3, 8}, 1.0, rng);
    auto y = block_linear_forward(x, p);
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t o = 0; o < 8; ++o) {
          double acc = p.bias[b * 8 + o];
          for (std::size_t i = 0; i < 8; ++i) acc += x[(b * 3 + n) * 8 + i] * p.weight[(b * 8 + i) * 8 + o];
          CHECK(std::abs(y[(b * 3 + n) * 8 + o] - acc) < 1e-12);
        }
  }
  SUBCASE("block count mismatch") {
    auto p = BlockLinear<double>::init(4, 2, 2, rng);
    CHECK_THROWS_AS(block_linear_forward(Tensord({3, 1, 2}), p), DimensionError);
  }
}

TEST_CASE("block_mlp_forward") {
  Rng rng(2);
  SUBCASE("single BlockLinear equals block_linear on regrouped input") {
    auto p = BlockMlp<double>::init(12, {4, 4}, rng);
    auto x = uniform_tensor<double>({5, 12}, 1.0, rng);
    auto grouped = transpose_axes(reshape(x, {5, 3, 4}), 0, 1);
    auto expect = reshape(transpose_axes(block_linear_forward(grouped, p.layers[0]), 0, 1), {5, 12});
    CHECK(bitwise_equal(block_mlp_forward(x, p), expect));
  }
  SUBCASE("Jacobian is block diagonal with dense 4x4 blocks") {
    auto p = BlockMlp<double>::init(16, {4, 8, 4}, rng);
    make_generic(params_of(p), rng);
    auto x = uniform_tensor<double>({1, 16}, 1.0, rng);
    auto jac = fd_jacobian([&](const Tensord& v) { return block_mlp_forward(v, p); }, x);
    for (int o = 0; o < 16; ++o)
      for (int i = 0; i < 16; ++i) CHECK((std::abs(jac(o, i)) > 1e-8) == (o / 4 == i / 4));
  }
  SUBCASE("parameter count for the expansion-2 stack") {
    auto p = BlockMlp<double>::init(16, {4, 8, 4}, rng);
    CHECK(p.num_params() == 304);
    CHECK(count_stored_scalars(params_of(p)) == 304);
  }
  SUBCASE("divisibility failure") {
    CHECK_THROWS_AS(BlockMlp<double>::init(10, {4, 4}, rng), DimensionError);
    auto p = BlockMlp<double>::init(16, {4, 4}, rng);
    CHECK_THROWS_AS(block_mlp_forward(Tensord({2, 12}), p), DimensionError);
  }
}

TEST_CASE("Radix-N butterfly MLP equals a plain MLP bitwise") {
  Rng rng(3);
  for (std::size_t n : {8u, 16u, 64u}) {
    auto bfly = ButterflyMlp<double>::init(make_butterfly_schedule(n, n), 2, rng);
    REQUIRE(bfly.blocks.size() == 1);
    DenseMlp<double> plain;
    for (const auto& layer : bfly.blocks[0].layers) {
      plain.layers.push_back({reshape(layer.weight, {layer.in_block(), layer.out_block()}),
                              reshape(layer.bias, {layer.out_block()})});
    }
    auto x = uniform_tensor<double>({7, n}, 2.0, rng);
    CHECK(bitwise_equal(butterfly_mlp_forward(x, bfly), dense_mlp_forward(x, plain)));
  }
}

TEST_CASE("permutation instrumentation") {
  Rng rng(4);
  auto bfly = ButterflyMlp<double>::init(make_butterfly_schedule(64, 8), 2, rng);
  butterfly_mlp_forward(Tensord({2, 64}), bfly);
  CHECK(bfly.permutations.calls == 4);
  CHECK(bfly.permutations.data_movement_passes == 2);
  CHECK(bfly.permutation_passes() == 2);

  auto linear = ButterflyLinearMlp<double>::init(make_butterfly_schedule(64, 8), rng);
  butterfly_linear_mlp_forward(Tensord({2, 64}), linear);
  CHECK(linear.first.permutations.data_movement_passes + linear.second.permutations.data_movement_passes == 4);
  CHECK(linear.permutation_passes() == 4);
}

TEST_CASE("complete butterfly MLP has a dense Jacobian") {
  Rng rng(5);
  auto bfly = ButterflyMlp<double>::init(make_butterfly_schedule(64, 8), 2, rng);
  make_generic(params_of(bfly), rng);
  auto x = uniform_tensor<double>({1, 64}, 1.0, rng);
  auto jac = fd_jacobian([&](const Tensord& v) { return butterfly_mlp_forward(v, bfly); }, x);
  CHECK((jac.array().abs() > 1e-10).all());
}

TEST_CASE("parameter and MAC counts") {
  Rng rng(6);
  auto dense = Linear<double>::init(64, 64, rng);
  CHECK(dense.num_params() == 4160);
  CHECK(dense.macs(1) == 4096);

  // The closed form 2*8*(8*8+8) counts one block-linear per butterfly layer.
  auto bfly = ButterflyMlp<double>::init(make_butterfly_schedule(64, 8), 1, rng, /*linear_only=*/true);
  CHECK(bfly.num_params() == 1152);
  CHECK(bfly.macs(1) == 1024);
  CHECK(count_stored_scalars(params_of(bfly)) == 1152);
  {
    MacRecorder rec;
    butterfly_mlp_forward(Tensord({1, 64}), bfly);
    CHECK(rec.total() == 1024);
  }
  auto dense_mlp = DenseMlp<double>::init({64, 64, 64}, rng);
  CHECK(dense_mlp.num_params() == 8320);
  CHECK(count_stored_scalars(params_of(dense_mlp)) == 8320);
  // With a hidden layer per block the count doubles.
  CHECK(ButterflyMlp<double>::init(make_butterfly_schedule(64, 8), 1, rng).num_params() == 2304);

  // MACs = 2 e N r L for a {r, e r, r} stack.
  std::vector<std::uint64_t> macs;
  std::vector<std::size_t> depth;
  for (std::size_t n : {64u, 512u, 4096u}) {
    auto s = make_butterfly_schedule(n, 8);
    auto m = ButterflyMlp<double>::init(s, 2, rng);
    CHECK(m.macs(1) == 2 * 2 * n * 8 * s.num_layers);
    MacRecorder rec;
    butterfly_mlp_forward(Tensord({1, n}), m);
    CHECK(rec.total() == m.macs(1));
    macs.push_back(m.macs(1));
    depth.push_back(s.num_layers);
  }
  CHECK(macs[1] * depth[0] == macs[0] * 8 * depth[1]);
  CHECK(macs[2] * depth[1] == macs[1] * 8 * depth[2]);
}

TEST_CASE("butterfly MLP gradients match finite differences") {
  Rng rng(7);
  auto bfly = ButterflyMlp<double>::init(make_butterfly_schedule(16, 4), 2, rng);
  auto x = uniform_tensor<double>({3, 16}, 1.0, rng);
  auto w = uniform_tensor<double>({3, 16}, 1.0, rng);
  CHECK(grad_check([&](const Tensord& v) { return sum(mul(butterfly_mlp_forward(v, bfly), w)); }, x) < 1e-4);
  std::vector<Tensord> tensors;
  for (auto& p : params_of(bfly)) tensors.push_back(p.tensor);
  CHECK(grad_check_params([&] { return sum(mul(butterfly_mlp_forward(x, bfly), w)); }, tensors) < 1e-4);
}

TEST_CASE("feature MLP kinds") {
  Rng rng(8);
  auto x = uniform_tensor<double>({2, 3, 16}, 1.0, rng);
  for (auto kind : {MlpKind::kDense, MlpKind::kButterflyMlp, MlpKind::kButterflyLinear}) {
    auto m = FeatureMlp<double>::init(kind, 16, 1, 4, rng);
    auto y = feature_mlp_forward(x, m);
    CHECK(y.shape() == x.shape());
    CHECK(count_stored_scalars(params_of(m)) == m.num_params());
    MacRecorder rec;
    feature_mlp_forward(x, m);
    CHECK(rec.total() == m.macs(6));
  }
  CHECK_THROWS_AS(FeatureMlp<double>::init(MlpKind::kButterflyLinear, 16, 2, 4, rng), ConfigError);
  auto m = ButterflyMlp<double>::init(make_butterfly_schedule(16, 4), 2, rng);
  CHECK_THROWS_AS(butterfly_mlp_forward(Tensord({2, 8}), m), ScheduleError);
}
