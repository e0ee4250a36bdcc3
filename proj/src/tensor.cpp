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

#include "dmx/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace dmx {

namespace {
std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};
thread_local bool t_grad_enabled = true;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

AllocationStats allocation_stats() {
  return {g_live_bytes.load(), g_peak_bytes.load()};
}

void reset_peak_allocation() { g_peak_bytes.store(g_live_bytes.load()); }

void detail::track_allocation(std::int64_t bytes) {
  const auto live = g_live_bytes.fetch_add(bytes) + bytes;
  auto peak = g_peak_bytes.load();
  while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live)) {
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename Scalar>
void detail::TensorImpl<Scalar>::accumulate_grad(std::span<const Scalar> g) {
  if (grad.empty()) {
    grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill)
    : impl_(std::make_shared<detail::TensorImpl<Scalar>>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
  impl_->data.assign(dmx::numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::span<const Scalar> values) : Tensor(std::move(shape)) {
  if (values.size() != impl_->data.size()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + to_string(impl_->shape));
  }
  std::copy(values.begin(), values.end(), impl_->data.begin());
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::initializer_list<Scalar> values)
    : Tensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size())) {}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() requires a single element, shape is " + to_string(shape()));
  }
  return impl_->data[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw DimensionError("index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw AutogradError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
  return *this;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::grad_tensor() const {
  Tensor out(shape());
  if (has_grad()) std::copy(impl_->grad.begin(), impl_->grad.end(), out.data().begin());
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(shape(), data());
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  using Impl = detail::TensorImpl<Scalar>;
  if (impl_->graph_released) {
    throw AutogradError("backward called twice on the same graph; double backward is unsupported");
  }
  if (numel() != 1) {
    throw AutogradError("backward requires a scalar loss, got shape " + to_string(shape()));
  }
  if (!impl_->requires_grad) {
    throw AutogradError("loss does not depend on any tensor that requires grad");
  }

  // Iterative post-order DFS gives a topological order (inputs first). The
  // order holds owning references so nodes survive graph release below.
  std::vector<std::shared_ptr<Impl>> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<std::shared_ptr<Impl>, std::size_t>> stack{{impl_, 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->grad_fn && next < node->grad_fn->inputs.size()) {
      auto child = node->grad_fn->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  const Scalar one(1);
  impl_->accumulate_grad(std::span<const Scalar>(&one, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = it->get();
    if (!node->grad_fn) continue;
    if (!node->grad.empty()) node->grad_fn->backward(node->grad);
    node->grad_fn.reset();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->graph_released = true;
  }
}

template struct detail::TensorImpl<float>;
template struct detail::TensorImpl<double>;
template class Tensor<float>;
template class Tensor<double>;

}  // namespace dmx
