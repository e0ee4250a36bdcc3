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

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle onto storage plus an optional gradient buffer
// and the graph node that produced it. Operations (ops.hpp) build the graph
// whenever an input requires a gradient and grad mode is enabled; backward()
// walks it once in reverse topological order and then releases it.

#ifndef DMX_TENSOR_HPP
#define DMX_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dmx/error.hpp"

namespace dmx {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Live and peak bytes held by tensor storage (values and gradients).
struct AllocationStats {
  std::int64_t live_bytes = 0;
  std::int64_t peak_bytes = 0;
};
AllocationStats allocation_stats();
/// Resets the peak to the current live value.
void reset_peak_allocation();

namespace detail {
void track_allocation(std::int64_t bytes);

template <typename T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    track_allocation(static_cast<std::int64_t>(n * sizeof(T)));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    track_allocation(-static_cast<std::int64_t>(n * sizeof(T)));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename Scalar>
using Buffer = std::vector<Scalar, TrackingAllocator<Scalar>>;

template <typename Scalar>
struct TensorImpl;

template <typename Scalar>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<Scalar>>> inputs;
  // Receives dLoss/dOutput and accumulates into the inputs' gradients.
  std::function<void(std::span<const Scalar>)> backward;
};

template <typename Scalar>
struct TensorImpl {
  Shape shape;
  Buffer<Scalar> data;
  Buffer<Scalar> grad;
  bool requires_grad = false;
  bool graph_released = false;
  std::shared_ptr<Node<Scalar>> grad_fn;

  void accumulate_grad(std::span<const Scalar> g);
};
}  // namespace detail

/// Thread-local switch for graph construction.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, std::span<const Scalar> values);
  Tensor(Shape shape, std::initializer_list<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<Scalar> data() { return {impl_->data.data(), impl_->data.size()}; }
  std::span<const Scalar> data() const {
    return {impl_->data.data(), impl_->data.size()};
  }
  Scalar item() const;
  Scalar& operator[](std::size_t i) { return impl_->data[i]; }
  Scalar operator[](std::size_t i) const { return impl_->data[i]; }
  /// Element by multi-index (row-major).
  Scalar at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Scalar> grad() const {
    return {impl_->grad.data(), impl_->grad.size()};
  }
  /// Gradient as a standalone tensor (zeros when none has been accumulated).
  Tensor grad_tensor() const;
  void zero_grad() { impl_->grad.clear(); }

  /// Copy of the values without graph history.
  Tensor detach() const;
  bool is_leaf() const { return impl_->grad_fn == nullptr; }

  /// Populates gradients of every requires_grad leaf reachable from this
  /// scalar. The graph is released afterwards; a second call throws.
  void backward() const;

  const std::shared_ptr<detail::TensorImpl<Scalar>>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl<Scalar>> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorImpl<Scalar>> impl_;
};

using Tensord = Tensor<double>;
using Tensorf = Tensor<float>;

/// Value-preserving conversion between precisions (no graph).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  Tensor<To> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
using ParamList = std::vector<NamedTensor<Scalar>>;

/// Raw walk over allocated parameter storage.
template <typename Scalar>
std::size_t count_stored_scalars(const ParamList<Scalar>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.data().size();
  return n;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dmx

#endif  // DMX_TENSOR_HPP
