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

#include "dmx/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dmx {

namespace {

double relative_gap(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

double evaluate(const std::function<Tensord()>& f) {
  NoGradGuard guard;
  return f().item();
}

}  // namespace

double grad_check(const std::function<Tensord(const Tensord&)>& f, const Tensord& x, double step) {
  Tensord leaf = x.detach();
  leaf.set_requires_grad(true);
  f(leaf).backward();
  const Tensord analytic = leaf.grad_tensor();

  Tensord probe = x.detach();
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = evaluate([&] { return f(probe); });
    probe[i] = saved - step;
    const double down = evaluate([&] { return f(probe); });
    probe[i] = saved;
    worst = std::max(worst, relative_gap(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

double grad_check_params(const std::function<Tensord()>& f, std::vector<Tensord> params, double step) {
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  f().backward();
  std::vector<Tensord> analytic;
  for (const auto& p : params) analytic.push_back(p.grad_tensor());

  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      p[i] = saved + step;
      const double up = evaluate(f);
      p[i] = saved - step;
      const double down = evaluate(f);
      p[i] = saved;
      worst = std::max(worst, relative_gap(analytic[t][i], (up - down) / (2.0 * step)));
    }
    p.zero_grad();
  }
  return worst;
}

}  // namespace dmx
