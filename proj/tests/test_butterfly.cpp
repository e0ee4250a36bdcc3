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

#include <Eigen/Dense>
#include <numeric>

#include "doctest.h"
#include "dmx/butterfly.hpp"
#include "dmx/random.hpp"

using namespace dmx;

namespace {

// Literal evaluation of `r**i if r**(i+1) <= N else N//r` with wide integers.
std::size_t stride_by_formula(std::size_t n, std::size_t r, std::size_t i) {
  unsigned __int128 pow_i = 1;
  for (std::size_t k = 0; k < i; ++k) pow_i *= r;
  return pow_i * r <= n ? static_cast<std::size_t>(pow_i) : n / r;
}

// Product of per-layer structure matrices P^T B P with random nonzero blocks.
Eigen::MatrixXd composed_structure(const ButterflySchedule& s, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(s.input_dim);
  Eigen::MatrixXd total = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t layer = 0; layer < s.num_layers; ++layer) {
    Eigen::MatrixXd layer_matrix = Eigen::MatrixXd::Zero(n, n);
    for (const auto& group : butterfly_groups(s.input_dim, s.block_size, s.strides[layer])) {
      for (auto out : group)
        for (auto in : group) {
          const double mag = rng.uniform(0.1, 1.0);
          layer_matrix(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)) = rng.coin() ? mag : -mag;
        }
    }
    total = layer_matrix * total;
  }
  return total;
}

}  // namespace

TEST_CASE("compute_stride examples") {
  CHECK(compute_stride(8, 2, 0) == 1);
  CHECK(compute_stride(8, 2, 1) == 2);
  CHECK(compute_stride(8, 2, 2) == 4);
  CHECK(compute_stride(16, 4, 1) == 4);
  CHECK(compute_stride(8, 4, 1) == 2);
  CHECK_THROWS_AS(compute_stride(10, 4, 0), ScheduleError);
}

TEST_CASE("compute_stride matches the literal formula for N <= 4096") {
  for (std::size_t n = 1; n <= 4096; ++n) {
    for (std::size_t r = 2; r <= n; ++r) {
      if (n % r != 0) continue;
      const std::size_t layers = num_butterfly_layers(n, r);
      for (std::size_t i = 0; i < layers; ++i) REQUIRE(compute_stride(n, r, i) == stride_by_formula(n, r, i));
    }
  }
}

TEST_CASE("num_butterfly_layers") {
  CHECK(num_butterfly_layers(8, 2) == 3);
  CHECK(num_butterfly_layers(64, 8) == 2);
  CHECK(num_butterfly_layers(121, 11) == 2);
  for (std::size_t n : {2u, 7u, 64u, 100u}) CHECK(num_butterfly_layers(n, n) == 1);
  CHECK(num_butterfly_layers(32, 4) == 3);
  CHECK_THROWS_AS(num_butterfly_layers(12, 5), ScheduleError);
}

TEST_CASE("schedule construction") {
  auto s = make_butterfly_schedule(16, 4);
  CHECK(s.num_layers == 2);
  CHECK(s.strides == std::vector<std::size_t>{1, 4});
  CHECK_FALSE(s.partial());
  auto p = make_butterfly_schedule(64, 8, 1);
  CHECK(p.partial());
  // 24 = 4 * 6: the middle layer needs 24 divisible by 4 * 4.
  CHECK_THROWS_AS(make_butterfly_schedule(24, 4), ScheduleError);
  CHECK(make_butterfly_schedule(16, 4, 5).stride_for(7) == 4);
}

TEST_CASE("permute example and identity stride") {
  Tensord x({1, 4}, {0, 1, 2, 3});
  auto y = butterfly_permute(x, 2, 2);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 2, 1, 3});
  Rng rng(1);
  auto z = uniform_tensor<double>({3, 12}, 1.0, rng);
  auto same = butterfly_permute(z, 4, 1);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(same[i] == z[i]);
  CHECK_THROWS_AS(butterfly_permute(z, 4, 2), ScheduleError);
}

TEST_CASE("permute and unpermute are inverse bijections for every schedule layer, N <= 1024") {
  Rng rng(2);
  for (std::size_t n = 2; n <= 1024; ++n) {
    for (std::size_t r : {2u, 4u, 8u, 16u, 32u}) {
      if (n % r != 0 || r > n) continue;
      for (std::size_t i = 0; i < num_butterfly_layers(n, r); ++i) {
        const std::size_t stride = compute_stride(n, r, i);
        if (n % (r * stride) != 0) continue;
        const auto source = butterfly_permutation(n, r, stride);
        std::vector<std::size_t> sorted = source;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> iota(n);
        std::iota(iota.begin(), iota.end(), 0);
        REQUIRE(sorted == iota);

        Tensord x({2, n});
        for (std::size_t k = 0; k < x.numel(); ++k) x[k] = static_cast<double>(k);
        auto y = butterfly_permute(x, r, stride);
        for (std::size_t p = 0; p < n; ++p) REQUIRE(y[p] == x[source[p]]);
        auto back = butterfly_unpermute(y, r, stride);
        for (std::size_t k = 0; k < x.numel(); ++k) REQUIRE(back[k] == x[k]);
      }
    }
  }
}

TEST_CASE("structural densification iff r^L >= N") {
  Rng rng(3);
  for (std::size_t n = 2; n <= 64; ++n) {
    for (std::size_t r = 2; r <= n; ++r) {
      if (n % r != 0) continue;
      const std::size_t full = num_butterfly_layers(n, r);
      for (std::size_t layers = 1; layers <= full; ++layers) {
        ButterflySchedule s;
        try {
          s = make_butterfly_schedule(n, r, layers);
        } catch (const ScheduleError&) {
          continue;
        }
        const auto m = composed_structure(s, rng);
        const bool dense = (m.array().abs() > 1e-12).all();
        std::size_t reach = 1;
        for (std::size_t k = 0; k < layers; ++k) reach *= r;
        INFO("N=" << n << " r=" << r << " L=" << layers);
        CHECK(dense == (reach >= n));
      }
    }
  }
}

TEST_CASE("DeBut composition worked examples") {
  SUBCASE("t2 = r1 densifies under both rules") {
    DebutFactor f1{8, 8, 4, 4, 1};
    DebutFactor f2{8, 8, 2, 2, 4};
    auto c = validate_debut_composition(f2, f1);
    CHECK(c.original_rule);
    CHECK(c.relaxed_rule);
    CHECK(c.structurally_dense);
    CHECK(c.numerically_dense);
    REQUIRE(c.effective_partition.has_value());
    CHECK(*c.effective_partition == std::pair<std::size_t, std::size_t>{8, 8});
  }
  SUBCASE("t2 = 2 < r1 densifies under the relaxed rule only") {
    DebutFactor f1{8, 8, 4, 4, 1};
    DebutFactor f2{8, 8, 4, 4, 2};
    auto c = validate_debut_composition(f2, f1);
    CHECK_FALSE(c.original_rule);
    CHECK(c.relaxed_rule);
    CHECK(c.structurally_dense);
    CHECK(c.numerically_dense);
    CHECK(*c.effective_partition == std::pair<std::size_t, std::size_t>{8, 8});
  }
  SUBCASE("t2 > r1 does not densify") {
    DebutFactor f1{8, 8, 2, 2, 1};
    DebutFactor f2{8, 8, 2, 2, 4};
    auto c = validate_debut_composition(f2, f1);
    CHECK_FALSE(c.original_rule);
    CHECK_FALSE(c.relaxed_rule);
    CHECK_FALSE(c.structurally_dense);
    CHECK_FALSE(c.numerically_dense);
    CHECK_FALSE(c.effective_partition.has_value());
  }
  SUBCASE("incomposable and malformed factors") {
    CHECK_THROWS_AS(validate_debut_composition(DebutFactor{8, 4, 2, 1, 1}, DebutFactor{8, 8, 4, 4, 1}),
                    IncomposableError);
    CHECK_THROWS_AS(DebutFactor({8, 8, 3, 3, 1}).validate(), ScheduleError);
  }
}

TEST_CASE("DeBut structural and numeric verdicts agree across small factors") {
  for (std::size_t r1 : {1u, 2u, 4u, 8u})
    for (std::size_t r2 : {1u, 2u, 4u})
      for (std::size_t t2 : {1u, 2u, 4u, 8u}) {
        if (8 % (r2 * t2) != 0) continue;
        DebutFactor f1{8, 8, r1, r1, 1};
        DebutFactor f2{8, 8, r2, r2, t2};
        auto c = validate_debut_composition(f2, f1, r1 * 100 + r2 * 10 + t2);
        CHECK(c.structurally_dense == c.numerically_dense);
      }
}
