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

#ifndef DMX_COST_HPP
#define DMX_COST_HPP

#include <chrono>
#include <cstdint>
#include <map>
#include <string>

#include "dmx/mac_counter.hpp"
#include "dmx/tensor.hpp"

namespace dmx {

struct CostReport {
  std::size_t params = 0;         // model's own closed-form count
  std::size_t stored_params = 0;  // walk over allocated parameter tensors
  std::map<std::string, std::size_t> params_by_module;
  std::uint64_t macs = 0;  // closed form, one forward at the given batch
  std::uint64_t measured_macs = 0;
  std::map<std::string, std::uint64_t> macs_by_tag;
  std::uint64_t permutation_passes = 0;
  double ms_per_forward = 0;
  std::int64_t peak_bytes = 0;  // above the live bytes before the forward
};

/// Counts and measures one model. `forward(input)` runs the model; the model
/// type provides num_params(), macs(batch) and collect(prefix, list).
template <typename Model, typename Input, typename Forward>
CostReport cost_report(const Model& model, const Input& input, std::size_t batch, Forward forward,
                       std::size_t repeats = 1) {
  using Scalar = typename Input::scalar_type;
  CostReport r;
  r.params = model.num_params();
  ParamList<Scalar> params;
  model.collect("", params);
  r.stored_params = count_stored_scalars(params);
  for (const auto& p : params) r.params_by_module[p.name.substr(0, p.name.find('.'))] += p.tensor.numel();
  r.macs = model.macs(batch);

  NoGradGuard guard;
  {
    MacRecorder rec;
    const auto baseline = allocation_stats().live_bytes;
    reset_peak_allocation();
    forward(input);
    r.peak_bytes = allocation_stats().peak_bytes - baseline;
    r.measured_macs = rec.total();
    r.macs_by_tag = rec.counts();
    r.permutation_passes = rec.permutation_passes();
  }
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < repeats; ++i) forward(input);
  const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
  r.ms_per_forward = elapsed.count() / static_cast<double>(std::max<std::size_t>(repeats, 1));
  return r;
}

}  // namespace dmx

#endif  // DMX_COST_HPP
