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

#include "dmx/mac_counter.hpp"

namespace dmx {

namespace {
thread_local MacRecorder* t_recorder = nullptr;
thread_local const char* t_tag = "other";
}  // namespace

MacRecorder::MacRecorder() : previous_(t_recorder) { t_recorder = this; }
MacRecorder::~MacRecorder() { t_recorder = previous_; }

std::uint64_t MacRecorder::get(const std::string& tag) const {
  auto it = counts_.find(tag);
  return it == counts_.end() ? 0 : it->second;
}

MacTag::MacTag(const char* tag) : previous_(t_tag) { t_tag = tag; }
MacTag::~MacTag() { t_tag = previous_; }

void record_macs(std::uint64_t macs) {
  if (t_recorder == nullptr) return;
  t_recorder->counts_[t_tag] += macs;
  t_recorder->counts_["total"] += macs;
}

void record_permutation_pass() {
  if (t_recorder != nullptr) ++t_recorder->permutation_passes_;
}

}  // namespace dmx
