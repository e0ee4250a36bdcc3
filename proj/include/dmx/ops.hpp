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

// Differentiable tensor operations. Every function returns a freshly
// materialized row-major tensor; gradients are attached when an input
// requires them and grad mode is on.

#ifndef DMX_OPS_HPP
#define DMX_OPS_HPP

#include <span>
#include <vector>

#include "dmx/tensor.hpp"

namespace dmx {

inline constexpr double kLayerNormEps = 1e-5;

// Elementwise with numpy-style broadcasting (shapes right-aligned).
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& x, S factor);

/// [m,k] x [k,n] -> [m,n]
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
/// [B,m,k] x [B,k,n] -> [B,m,n]
template <typename S> Tensor<S> batched_matmul(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
/// Output axis k is input axis perm[k].
template <typename S> Tensor<S> permute_axes(const Tensor<S>& x, const std::vector<std::size_t>& perm);
template <typename S> Tensor<S> transpose_axes(const Tensor<S>& x, std::size_t axis_a, std::size_t axis_b);
template <typename S> Tensor<S> slice(const Tensor<S>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename S> Tensor<S> concat(std::span<const Tensor<S>> parts, std::size_t axis);

template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
/// Mean over one axis; the axis is removed from the shape.
template <typename S> Tensor<S> mean_axis(const Tensor<S>& x, std::size_t axis);

/// tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3)))
template <typename S> Tensor<S> gelu(const Tensor<S>& x);
/// Max-subtracted softmax. Slices that are entirely -inf produce zeros.
template <typename S> Tensor<S> softmax(const Tensor<S>& x, std::size_t axis);
/// Normalizes along `axis` with std = sqrt(max(var, eps)), then applies
/// gain and bias (both shaped [x.dim(axis)]).
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     std::size_t axis, S eps = S(kLayerNormEps));
/// Mean cross entropy of logits [B,C] against integer labels.
template <typename S> Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels);

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

namespace detail {
/// C = op(A) * op(B) for row-major buffers; C is overwritten unless accumulate.
template <typename S>
void gemm(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n,
          bool transpose_a, bool transpose_b, bool accumulate);
}  // namespace detail

}  // namespace dmx

#endif  // DMX_OPS_HPP
