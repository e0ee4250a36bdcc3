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

#include "dmx/butterfly.hpp"

#include <cmath>

#include "dmx/random.hpp"

namespace dmx {

namespace {

void check_radix(std::size_t input_dim, std::size_t block_size) {
  if (input_dim == 0 || block_size == 0) throw ScheduleError("butterfly dimensions must be positive");
  if (input_dim % block_size != 0) {
    throw ScheduleError("block size " + std::to_string(block_size) + " does not divide input dim " +
                        std::to_string(input_dim));
  }
  if (block_size == 1 && input_dim > 1) throw ScheduleError("block size 1 cannot mix dimensions");
}

}  // namespace

std::size_t compute_stride(std::size_t input_dim, std::size_t block_size, std::size_t layer) {
  check_radix(input_dim, block_size);
  // r^(i+1) <= N, evaluated without overflow.
  std::size_t power = 1;
  for (std::size_t i = 0; i < layer; ++i) {
    if (power > input_dim / block_size) return input_dim / block_size;
    power *= block_size;
  }
  return power <= input_dim / block_size ? power : input_dim / block_size;
}

std::size_t num_butterfly_layers(std::size_t input_dim, std::size_t block_size) {
  check_radix(input_dim, block_size);
  if (block_size == input_dim) return 1;
  std::size_t layers = 0;
  for (std::size_t reach = 1; reach < input_dim; reach *= block_size) ++layers;
  return layers;
}

void check_butterfly_divisibility(std::size_t input_dim, std::size_t block_size, std::size_t stride) {
  if (stride == 0 || block_size == 0 || input_dim % (block_size * stride) != 0) {
    throw ScheduleError("dim " + std::to_string(input_dim) + " is not divisible by block_size*stride = " +
                        std::to_string(block_size) + "*" + std::to_string(stride));
  }
}

ButterflySchedule make_butterfly_schedule(std::size_t input_dim, std::size_t block_size,
                                          std::optional<std::size_t> layers) {
  ButterflySchedule s;
  s.input_dim = input_dim;
  s.block_size = block_size;
  s.num_layers = layers.value_or(num_butterfly_layers(input_dim, block_size));
  if (s.num_layers == 0) throw ScheduleError("butterfly schedule needs at least one layer");
  for (std::size_t i = 0; i < s.num_layers; ++i) {
    const std::size_t stride = compute_stride(input_dim, block_size, i);
    if (input_dim % (block_size * stride) != 0) {
      throw ScheduleError("layer " + std::to_string(i) + ": dim " + std::to_string(input_dim) +
                          " is not divisible by block_size*stride = " + std::to_string(block_size) + "*" +
                          std::to_string(stride));
    }
    s.strides.push_back(stride);
  }
  return s;
}

std::vector<std::size_t> butterfly_permutation(std::size_t input_dim, std::size_t block_size,
                                               std::size_t stride) {
  check_butterfly_divisibility(input_dim, block_size, stride);
  std::vector<std::size_t> source(input_dim);
  const std::size_t chunk = block_size * stride;
  for (std::size_t m = 0; m < input_dim / chunk; ++m)
    for (std::size_t s = 0; s < stride; ++s)
      for (std::size_t j = 0; j < block_size; ++j) source[m * chunk + s * block_size + j] = m * chunk + j * stride + s;
  return source;
}

std::vector<std::vector<std::size_t>> butterfly_groups(std::size_t input_dim, std::size_t block_size,
                                                       std::size_t stride) {
  const auto source = butterfly_permutation(input_dim, block_size, stride);
  std::vector<std::vector<std::size_t>> groups(input_dim / block_size);
  for (std::size_t p = 0; p < input_dim; ++p) groups[p / block_size].push_back(source[p]);
  return groups;
}

void DebutFactor::validate() const {
  if (p == 0 || q == 0 || r == 0 || s == 0 || t == 0) throw ScheduleError("DeBut extents must be positive");
  if (p % (r * t) != 0 || q % (s * t) != 0 || p / (r * t) != q / (s * t)) {
    throw ScheduleError("DeBut factor (p=" + std::to_string(p) + ", q=" + std::to_string(q) + ", r=" +
                        std::to_string(r) + ", s=" + std::to_string(s) + ", t=" + std::to_string(t) +
                        ") does not tile into equal diagonal blocks");
  }
}

SupportMatrix debut_support(const DebutFactor& f) {
  f.validate();
  const std::size_t rows = f.r * f.t;
  const std::size_t cols = f.s * f.t;
  SupportMatrix m = SupportMatrix::Zero(static_cast<Eigen::Index>(f.p), static_cast<Eigen::Index>(f.q));
  for (std::size_t i = 0; i < f.p; ++i) {
    for (std::size_t j = 0; j < f.q; ++j) {
      if (i / rows == j / cols && (i % rows) % f.t == (j % cols) % f.t) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1;
      }
    }
  }
  return m;
}

DebutComposition validate_debut_composition(const DebutFactor& f2, const DebutFactor& f1, std::uint64_t seed) {
  f2.validate();
  f1.validate();
  if (f2.q != f1.p) {
    throw IncomposableError("cannot compose DeBut factors: q2 = " + std::to_string(f2.q) +
                            " differs from p1 = " + std::to_string(f1.p));
  }
  DebutComposition out;
  out.original_rule = f1.t == 1 && f2.t == f1.r;
  out.relaxed_rule = f1.t == 1 && f2.t > 1 && f2.t <= f1.r;
  if (out.original_rule) {
    out.effective_partition = std::make_pair(f2.r * f1.r, f2.s * f1.s);
  } else if (out.relaxed_rule) {
    out.effective_partition = std::make_pair(f2.r * f2.t, f2.s * f2.t);
  }

  // Target pattern: f2's block count, every block dense over q1.
  const std::size_t blocks = f2.num_blocks();
  SupportMatrix target = SupportMatrix::Zero(static_cast<Eigen::Index>(f2.p), static_cast<Eigen::Index>(f1.q));
  if (f1.q % blocks == 0) {
    const std::size_t br = f2.p / blocks;
    const std::size_t bc = f1.q / blocks;
    for (std::size_t i = 0; i < f2.p; ++i)
      for (std::size_t j = 0; j < f1.q; ++j)
        if (i / br == j / bc) target(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1;
  }

  const SupportMatrix s2 = debut_support(f2);
  const SupportMatrix s1 = debut_support(f1);
  const Eigen::MatrixXi structural = s2.cast<int>() * s1.cast<int>();
  out.structurally_dense = target.cast<int>().sum() > 0 && (structural.array() > 0).cast<std::uint8_t>().matrix() == target;

  Rng rng(seed);
  const auto random_on = [&rng](const SupportMatrix& support) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(support.rows(), support.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (support(i, j)) {
          const double mag = rng.uniform(0.1, 1.0);
          m(i, j) = rng.coin() ? mag : -mag;
        }
    return m;
  };
  const Eigen::MatrixXd numeric = random_on(s2) * random_on(s1);
  out.numerically_dense =
      target.cast<int>().sum() > 0 && (numeric.array().abs() > 1e-12).cast<std::uint8_t>().matrix() == target;
  return out;
}

}  // namespace dmx
