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

#ifndef DMX_GRADCHECK_HPP
#define DMX_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "dmx/tensor.hpp"

namespace dmx {

inline constexpr double kGradCheckStep = 1e-5;

/// max_i |analytic_i - central_i| / max(1, |central_i|) for the gradient of
/// the scalar f at x. Runs in double precision.
double grad_check(const std::function<Tensord(const Tensord&)>& f, const Tensord& x,
                  double step = kGradCheckStep);

/// Same measure over parameter tensors that f closes over; each tensor is
/// perturbed in place and restored.
double grad_check_params(const std::function<Tensord()>& f, std::vector<Tensord> params,
                         double step = kGradCheckStep);

}  // namespace dmx

#endif  // DMX_GRADCHECK_HPP
