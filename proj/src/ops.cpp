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

#include "dmx/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dmx/mac_counter.hpp"

namespace dmx {

namespace {

template <typename S>
using Impl = detail::TensorImpl<S>;
template <typename S>
using ImplPtr = std::shared_ptr<Impl<S>>;

template <typename S>
bool wants_grad(std::initializer_list<const Tensor<S>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename S, typename F>
void attach(Tensor<S>& out, const char* op, std::vector<ImplPtr<S>> inputs, F&& fn) {
  auto node = std::make_shared<detail::Node<S>>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::forward<F>(fn);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
}

template <typename S>
void accumulate(const ImplPtr<S>& target, std::span<const S> g) {
  if (target->requires_grad) target->accumulate_grad(g);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Broadcast geometry for a binary op: per-axis strides into a and b
// (0 on broadcast axes), right-aligned to the output rank.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.assign(rank, 1);
  bc.stride_a.assign(rank, 0);
  bc.stride_b.assign(rank, 0);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t eb = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    bc.out[i] = std::max(ea, eb);
    if (ea != 1) bc.stride_a[i] = sa[i + a.size() - rank];
    if (eb != 1) bc.stride_b[i] = sb[i + b.size() - rank];
  }
  return bc;
}

// Calls fn(out_index, a_index, b_index) over every output element.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& fn) {
  const std::size_t rank = bc.out.size();
  const std::size_t total = numel(bc.out);
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  const std::size_t last = bc.out.back();
  const std::size_t la = bc.stride_a.back();
  const std::size_t lb = bc.stride_b.back();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; o += last) {
    for (std::size_t j = 0; j < last; ++j) fn(o + j, ia + j * la, ib + j * lb);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      ia += bc.stride_a[ax];
      ib += bc.stride_b[ax];
      if (idx[ax] < bc.out[ax]) break;
      ia -= bc.stride_a[ax] * idx[ax];
      ib -= bc.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinaryOp { kAdd, kSub, kMul };

template <typename S>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, BinaryOp op) {
  const Broadcast bc = broadcast_shapes(a.shape(), b.shape());
  Tensor<S> out(bc.out);
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  switch (op) {
    case BinaryOp::kAdd:
      for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { o[i] = da[x] + db[y]; });
      break;
    case BinaryOp::kSub:
      for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { o[i] = da[x] - db[y]; });
      break;
    case BinaryOp::kMul:
      for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { o[i] = da[x] * db[y]; });
      break;
  }
  if (!wants_grad<S>({&a, &b})) return out;

  const char* name = op == BinaryOp::kAdd ? "add" : op == BinaryOp::kSub ? "sub" : "mul";
  auto ia = a.impl();
  auto ib = b.impl();
  attach(out, name, {ia, ib}, [ia, ib, bc, op](std::span<const S> g) {
    detail::Buffer<S> ga;
    detail::Buffer<S> gb;
    if (ia->requires_grad) ga.assign(ia->data.size(), S(0));
    if (ib->requires_grad) gb.assign(ib->data.size(), S(0));
    for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) {
      switch (op) {
        case BinaryOp::kAdd:
          if (!ga.empty()) ga[x] += g[i];
          if (!gb.empty()) gb[y] += g[i];
          break;
        case BinaryOp::kSub:
          if (!ga.empty()) ga[x] += g[i];
          if (!gb.empty()) gb[y] -= g[i];
          break;
        case BinaryOp::kMul:
          if (!ga.empty()) ga[x] += g[i] * ib->data[y];
          if (!gb.empty()) gb[y] += g[i] * ia->data[x];
          break;
      }
    });
    if (!ga.empty()) ia->accumulate_grad(ga);
    if (!gb.empty()) ib->accumulate_grad(gb);
  });
  return out;
}

// dst[out linear] = src[in linear] under an axis permutation.
template <typename S>
void permute_copy(std::span<const S> src, const Shape& in_shape, const std::vector<std::size_t>& perm,
                  std::span<S> dst) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = row_major_strides(in_shape);
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = in_shape[perm[k]];
    stride[k] = in_strides[perm[k]];
  }
  if (rank == 0) {
    dst[0] = src[0];
    return;
  }
  const std::size_t total = src.size();
  const std::size_t last = out_shape.back();
  const std::size_t ls = stride.back();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t base = 0;
  for (std::size_t o = 0; o < total; o += last) {
    for (std::size_t j = 0; j < last; ++j) dst[o + j] = src[base + j * ls];
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      base += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      base -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

namespace detail {

template <typename S>
void gemm(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n, bool transpose_a,
          bool transpose_b, bool accumulate) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  const auto rows = [](std::size_t r) { return static_cast<Eigen::Index>(r); };
  Eigen::Map<Mat> C(c, rows(m), rows(n));
  const CMap A(a, transpose_a ? rows(k) : rows(m), transpose_a ? rows(m) : rows(k));
  const CMap B(b, transpose_b ? rows(n) : rows(k), transpose_b ? rows(k) : rows(n));
  if (!transpose_a && !transpose_b) {
    if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (transpose_a && !transpose_b) {
    if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else if (!transpose_a && transpose_b) {
    if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else {
    if (accumulate) C.noalias() += A.transpose() * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
}

template void gemm<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool,
                          bool, bool);
template void gemm<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t,
                           bool, bool, bool);

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinaryOp::kAdd);
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinaryOp::kSub);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinaryOp::kMul);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  Tensor<S> out(x.shape());
  auto o = out.data();
  auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) o[i] = d[i] * factor;
  if (wants_grad<S>({&x})) {
    auto ix = x.impl();
    attach(out, "scale", {ix}, [ix, factor](std::span<const S> g) {
      detail::Buffer<S> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * factor;
      ix->accumulate_grad(gx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> batched_matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3) {
    throw DimensionError("batched_matmul expects rank-3 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("batched_matmul shape mismatch: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<S> out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    detail::gemm(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data().data() + i * m * n, m,
                 k, n, false, false, false);
  }
  record_macs(static_cast<std::uint64_t>(batch) * m * k * n);
  if (wants_grad<S>({&a, &b})) {
    auto ia = a.impl();
    auto ib = b.impl();
    attach(out, "batched_matmul", {ia, ib}, [ia, ib, batch, m, k, n](std::span<const S> g) {
      if (ia->requires_grad) {
        detail::Buffer<S> ga(batch * m * k);
        for (std::size_t i = 0; i < batch; ++i) {
          detail::gemm(g.data() + i * m * n, ib->data.data() + i * k * n, ga.data() + i * m * k, m, n, k,
                       false, true, false);
        }
        ia->accumulate_grad(ga);
      }
      if (ib->requires_grad) {
        detail::Buffer<S> gb(batch * k * n);
        for (std::size_t i = 0; i < batch; ++i) {
          detail::gemm(ia->data.data() + i * m * k, g.data() + i * m * n, gb.data() + i * k * n, k, m, n,
                       true, false, false);
        }
        ib->accumulate_grad(gb);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  // Same kernel and accumulation order as a single batched slice.
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out({m, n});
  detail::gemm(a.data().data(), b.data().data(), out.data().data(), m, k, n, false, false, false);
  record_macs(static_cast<std::uint64_t>(m) * k * n);
  if (wants_grad<S>({&a, &b})) {
    auto ia = a.impl();
    auto ib = b.impl();
    attach(out, "matmul", {ia, ib}, [ia, ib, m, k, n](std::span<const S> g) {
      if (ia->requires_grad) {
        detail::Buffer<S> ga(m * k);
        detail::gemm(g.data(), ib->data.data(), ga.data(), m, n, k, false, true, false);
        ia->accumulate_grad(ga);
      }
      if (ib->requires_grad) {
        detail::Buffer<S> gb(k * n);
        detail::gemm(ia->data.data(), g.data(), gb.data(), k, m, n, true, false, false);
        ib->accumulate_grad(gb);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " (" + std::to_string(x.numel()) +
                         " elements) to " + to_string(shape));
  }
  Tensor<S> out(std::move(shape), x.data());
  if (wants_grad<S>({&x})) {
    auto ix = x.impl();
    attach(out, "reshape", {ix}, [ix](std::span<const S> g) { ix->accumulate_grad(g); });
  }
  return out;
}

template <typename S>
Tensor<S> permute_axes(const Tensor<S>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) throw DimensionError("permutation rank does not match tensor rank");
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("invalid axis permutation for shape " + to_string(x.shape()));
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t k = 0; k < rank; ++k) out_shape[k] = x.dim(perm[k]);
  Tensor<S> out(out_shape);
  permute_copy<S>(x.data(), x.shape(), perm, out.data());
  if (wants_grad<S>({&x})) {
    auto ix = x.impl();
    std::vector<std::size_t> inverse(rank);
    for (std::size_t k = 0; k < rank; ++k) inverse[perm[k]] = k;
    attach(out, "permute_axes", {ix}, [ix, inverse, out_shape](std::span<const S> g) {
      detail::Buffer<S> gx(g.size());
      permute_copy<S>(g, out_shape, inverse, gx);
      ix->accumulate_grad(gx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose_axes(const Tensor<S>& x, std::size_t axis_a, std::size_t axis_b) {
  if (axis_a >= x.rank() || axis_b >= x.rank()) {
    throw DimensionError("transpose axes (" + std::to_string(axis_a) + ", " + std::to_string(axis_b) +
                         ") out of range for shape " + to_string(x.shape()));
  }
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[axis_a], perm[axis_b]);
  return permute_axes(x, perm);
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_at(x.shape(), axis);
  if (length == 0 || start + length > s.extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  Tensor<S> out(shape);
  auto src = x.data();
  auto dst = out.data();
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(src.begin() + (o * s.extent + start) * s.inner, chunk, dst.begin() + o * chunk);
  }
  if (wants_grad<S>({&x})) {
    auto ix = x.impl();
    attach(out, "slice", {ix}, [ix, s, start, chunk](std::span<const S> g) {
      detail::Buffer<S> gx(ix->data.size(), S(0));
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(g.begin() + o * chunk, chunk, gx.begin() + (o * s.extent + start) * s.inner);
      }
      ix->accumulate_grad(gx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(std::span<const Tensor<S>> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape shape = parts[0].shape();
  split_at(shape, axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) throw DimensionError("concat rank mismatch");
    probe[axis] = shape[axis];
    if (probe != shape) {
      throw DimensionError("concat shape mismatch: " + to_string(p.shape()) + " vs " + to_string(shape));
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  const AxisSplit s = split_at(shape, axis);
  Tensor<S> out(shape);
  auto dst = out.data();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * s.inner;
    auto src = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk, dst.begin() + (o * s.extent + offset) * s.inner);
    }
    offset += p.dim(axis);
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (grad_enabled() && any) {
    std::vector<ImplPtr<S>> inputs;
    for (const auto& p : parts) inputs.push_back(p.impl());
    attach(out, "concat", inputs, [inputs, offsets, s, axis](std::span<const S> g) {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i]->requires_grad) continue;
        const std::size_t chunk = inputs[i]->shape[axis] * s.inner;
        detail::Buffer<S> gp(inputs[i]->data.size());
        for (std::size_t o = 0; o < s.outer; ++o) {
          std::copy_n(g.begin() + (o * s.extent + offsets[i]) * s.inner, chunk, gp.begin() + o * chunk);
        }
        inputs[i]->accumulate_grad(gp);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total(0);
  for (auto v : x.data()) total += v;
  Tensor<S> out = Tensor<S>::scalar(total);
  if (wants_grad<S>({&x})) {
    auto ix = x.impl();
    attach(out, "sum", {ix}, [ix](std::span<const S> g) {
      detail::Buffer<S> gx(ix->data.size(), g[0]);
      ix->accumulate_grad(gx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<S> out(shape);
  auto src = x.data();
  auto dst = out.data();
  const S inv = S(1) / static_cast<S>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      S acc(0);
      for (std::size_t j = 0; j < s.extent; ++j) acc += src[(o * s.extent + j) * s.inner + i];
      dst[o * s.inner + i] = acc * inv;
    }
  }
  if (wants_grad<S>({&x})) {
    auto ix = x.impl();
    attach(out, "mean_axis", {ix}, [ix, s, inv](std::span<const S> g) {
      detail::Buffer<S> gx(ix->data.size());
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.extent; ++j) {
          for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.extent + j) * s.inner + i] = g[o * s.inner + i] * inv;
        }
      }
      ix->accumulate_grad(gx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const S c = static_cast<S>(std::sqrt(2.0 / std::numbers::pi));
  const S k = S(0.044715);
  Tensor<S> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const S v = src[i];
    dst[i] = S(0.5) * v * (S(1) + std::tanh(c * (v + k * v * v * v)));
  }
  if (wants_grad<S>({&x})) {
    auto ix = x.impl();
    attach(out, "gelu", {ix}, [ix, c, k](std::span<const S> g) {
      detail::Buffer<S> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const S v = ix->data[i];
        const S t = std::tanh(c * (v + k * v * v * v));
        const S d = S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * c * (S(1) + S(3) * k * v * v);
        gx[i] = g[i] * d;
      }
      ix->accumulate_grad(gx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor<S> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  const S neg_inf = -std::numeric_limits<S>::infinity();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      S mx = neg_inf;
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, src[base + j * s.inner]);
      if (mx == neg_inf) {
        for (std::size_t j = 0; j < s.extent; ++j) dst[base + j * s.inner] = S(0);
        continue;
      }
      S total(0);
      for (std::size_t j = 0; j < s.extent; ++j) {
        const S e = std::exp(src[base + j * s.inner] - mx);
        dst[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) dst[base + j * s.inner] /= total;
    }
  }
  if (wants_grad<S>({&x})) {
    auto ix = x.impl();
    std::weak_ptr<Impl<S>> weak_out = out.impl();
    attach(out, "softmax", {ix}, [ix, weak_out, s](std::span<const S> g) {
      auto y = weak_out.lock();
      detail::Buffer<S> gx(g.size());
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          S dot(0);
          for (std::size_t j = 0; j < s.extent; ++j) dot += g[base + j * s.inner] * y->data[base + j * s.inner];
          for (std::size_t j = 0; j < s.extent; ++j) {
            const std::size_t at = base + j * s.inner;
            gx[at] = y->data[at] * (g[at] - dot);
          }
        }
      }
      ix->accumulate_grad(gx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, std::size_t axis,
                     S eps) {
  const AxisSplit s = split_at(x.shape(), axis);
  if (gain.numel() != s.extent || bias.numel() != s.extent) {
    throw DimensionError("layer_norm gain/bias " + to_string(gain.shape()) + "/" + to_string(bias.shape()) +
                         " do not match normalized extent " + std::to_string(s.extent));
  }
  const std::size_t groups = s.outer * s.inner;
  detail::Buffer<S> normalized(x.numel());
  std::vector<S> inv_std(groups);
  std::vector<char> guarded(groups);
  Tensor<S> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  auto gn = gain.data();
  auto bs = bias.data();
  const S n = static_cast<S>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      S mu(0);
      for (std::size_t j = 0; j < s.extent; ++j) mu += src[base + j * s.inner];
      mu /= n;
      S var(0);
      for (std::size_t j = 0; j < s.extent; ++j) {
        const S d = src[base + j * s.inner] - mu;
        var += d * d;
      }
      var /= n;
      const std::size_t gidx = o * s.inner + i;
      guarded[gidx] = var < eps;
      inv_std[gidx] = S(1) / std::sqrt(std::max(var, eps));
      for (std::size_t j = 0; j < s.extent; ++j) {
        const std::size_t at = base + j * s.inner;
        normalized[at] = (src[at] - mu) * inv_std[gidx];
        dst[at] = normalized[at] * gn[j] + bs[j];
      }
    }
  }
  if (wants_grad<S>({&x, &gain, &bias})) {
    auto ix = x.impl();
    auto ig = gain.impl();
    auto ib = bias.impl();
    attach(out, "layer_norm", {ix, ig, ib},
           [ix, ig, ib, s, n, normalized = std::move(normalized), inv_std = std::move(inv_std),
            guarded = std::move(guarded)](std::span<const S> g) {
             detail::Buffer<S> gx;
             if (ix->requires_grad) gx.assign(g.size(), S(0));
             detail::Buffer<S> gg(s.extent, S(0));
             detail::Buffer<S> gb(s.extent, S(0));
             for (std::size_t o = 0; o < s.outer; ++o) {
               for (std::size_t i = 0; i < s.inner; ++i) {
                 const std::size_t base = o * s.extent * s.inner + i;
                 const std::size_t gidx = o * s.inner + i;
                 S mean_g(0);
                 S mean_gx(0);
                 for (std::size_t j = 0; j < s.extent; ++j) {
                   const std::size_t at = base + j * s.inner;
                   const S gh = g[at] * ig->data[j];
                   gg[j] += g[at] * normalized[at];
                   gb[j] += g[at];
                   mean_g += gh;
                   mean_gx += gh * normalized[at];
                 }
                 if (gx.empty()) continue;
                 mean_g /= n;
                 mean_gx /= n;
                 for (std::size_t j = 0; j < s.extent; ++j) {
                   const std::size_t at = base + j * s.inner;
                   const S gh = g[at] * ig->data[j];
                   // Below the variance guard the scale is a constant.
                   const S var_term = guarded[gidx] ? S(0) : normalized[at] * mean_gx;
                   gx[at] = inv_std[gidx] * (gh - mean_g - var_term);
                 }
               }
             }
             if (!gx.empty()) ix->accumulate_grad(gx);
             accumulate<S>(ig, gg);
             accumulate<S>(ib, gb);
           });
  }
  return out;
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy expects logits [B,C] with B labels, got " + to_string(logits.shape()) +
                         " and " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  auto src = logits.data();
  detail::Buffer<S> probs(src.size());
  S loss(0);
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t b = 0; b < batch; ++b) {
    if (lab[b] < 0 || static_cast<std::size_t>(lab[b]) >= classes) {
      throw DimensionError("label " + std::to_string(lab[b]) + " outside [0, " + std::to_string(classes) + ")");
    }
    const S* row = src.data() + b * classes;
    const S mx = *std::max_element(row, row + classes);
    S total(0);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(row[c] - mx);
      total += probs[b * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= total;
    loss -= row[lab[b]] - mx - std::log(total);
  }
  Tensor<S> out = Tensor<S>::scalar(loss / static_cast<S>(batch));
  if (wants_grad<S>({&logits})) {
    auto il = logits.impl();
    attach(out, "cross_entropy", {il},
           [il, probs = std::move(probs), lab = std::move(lab), batch, classes](std::span<const S> g) {
             detail::Buffer<S> gl(probs.size());
             const S w = g[0] / static_cast<S>(batch);
             for (std::size_t b = 0; b < batch; ++b) {
               for (std::size_t c = 0; c < classes; ++c) {
                 const S onehot = static_cast<std::size_t>(lab[b]) == c ? S(1) : S(0);
                 gl[b * classes + c] = w * (probs[b * classes + c] - onehot);
               }
             }
             il->accumulate_grad(gl);
           });
  }
  return out;
}

#define DMX_INSTANTIATE_OPS(S)                                                                        \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                          \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                          \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                          \
  template Tensor<S> scale(const Tensor<S>&, S);                                                       \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                       \
  template Tensor<S> batched_matmul(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                 \
  template Tensor<S> permute_axes(const Tensor<S>&, const std::vector<std::size_t>&);                  \
  template Tensor<S> transpose_axes(const Tensor<S>&, std::size_t, std::size_t);                       \
  template Tensor<S> slice(const Tensor<S>&, std::size_t, std::size_t, std::size_t);                   \
  template Tensor<S> concat(std::span<const Tensor<S>>, std::size_t);                                  \
  template Tensor<S> sum(const Tensor<S>&);                                                            \
  template Tensor<S> mean(const Tensor<S>&);                                                           \
  template Tensor<S> mean_axis(const Tensor<S>&, std::size_t);                                         \
  template Tensor<S> gelu(const Tensor<S>&);                                                           \
  template Tensor<S> softmax(const Tensor<S>&, std::size_t);                                           \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, std::size_t, S); \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>);

DMX_INSTANTIATE_OPS(float)
DMX_INSTANTIATE_OPS(double)

#undef DMX_INSTANTIATE_OPS

}  // namespace dmx
