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

#ifndef DMX_RANDOM_HPP
#define DMX_RANDOM_HPP

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "dmx/tensor.hpp"

namespace dmx {

/// Seeded generator. split() derives an independent child stream so each
/// consumer (init, data order, synthetic data) is reproducible on its own.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng split() {
    std::seed_seq seq{engine_(), engine_(), engine_(), engine_()};
    Rng child(0);
    child.engine_.seed(seq);
    return child;
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }
  bool coin() { return below(2) == 1; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  return t;
}

/// Entries with |w| in [0.1, 1] and random sign; keeps accidental
/// cancellation out of structural-support measurements.
template <typename Scalar>
Tensor<Scalar> generic_tensor(Shape shape, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  for (auto& v : t.data()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = static_cast<Scalar>(rng.coin() ? mag : -mag);
  }
  return t;
}

}  // namespace dmx

#endif  // DMX_RANDOM_HPP
