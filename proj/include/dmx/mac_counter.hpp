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

#ifndef DMX_MAC_COUNTER_HPP
#define DMX_MAC_COUNTER_HPP

#include <cstdint>
#include <map>
#include <string>

namespace dmx {

/// Collects multiply-accumulates of forward matrix products on this thread
/// while alive, keyed by the innermost active MacTag ("other" when none).
/// The "total" key holds the sum over all tags. Data-movement passes of
/// butterfly permutations (stride > 1) are counted alongside.
class MacRecorder {
 public:
  MacRecorder();
  ~MacRecorder();
  MacRecorder(const MacRecorder&) = delete;
  MacRecorder& operator=(const MacRecorder&) = delete;

  std::uint64_t total() const { return get("total"); }
  std::uint64_t get(const std::string& tag) const;
  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }
  std::uint64_t permutation_passes() const { return permutation_passes_; }

 private:
  friend void record_macs(std::uint64_t);
  friend void record_permutation_pass();
  std::map<std::string, std::uint64_t> counts_;
  std::uint64_t permutation_passes_ = 0;
  MacRecorder* previous_;
};

class MacTag {
 public:
  explicit MacTag(const char* tag);
  ~MacTag();
  MacTag(const MacTag&) = delete;
  MacTag& operator=(const MacTag&) = delete;

 private:
  const char* previous_;
};

void record_macs(std::uint64_t macs);
void record_permutation_pass();

}  // namespace dmx

#endif  // DMX_MAC_COUNTER_HPP
