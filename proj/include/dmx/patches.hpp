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

#ifndef DMX_PATCHES_HPP
#define DMX_PATCHES_HPP

#include <string>

#include "dmx/ops.hpp"

namespace dmx {

/// [B, C, H, W] -> [B, (H/K)(W/K), C*K*K]. Patches are row-major over the
/// patch grid; each patch vector is channel-major, then row, then column.
template <typename S>
Tensor<S> extract_patches(const Tensor<S>& image, std::size_t patch) {
  if (image.rank() != 4) throw DimensionError("extract_patches expects [B, C, H, W], got " + to_string(image.shape()));
  const std::size_t b = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("patch size " + std::to_string(patch) + " does not divide image " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const std::size_t th = h / patch, tw = w / patch;
  auto t = reshape(image, {b, c, th, patch, tw, patch});
  t = permute_axes(t, {0, 2, 4, 1, 3, 5});
  return reshape(t, {b, th * tw, c * patch * patch});
}

/// Inverse of extract_patches.
template <typename S>
Tensor<S> combine_patches(const Tensor<S>& patches, std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw DimensionError("patch size " + std::to_string(patch) + " does not divide image " + std::to_string(height) +
                         "x" + std::to_string(width));
  }
  const std::size_t th = height / patch, tw = width / patch;
  if (patches.rank() != 3 || patches.dim(1) != th * tw || patches.dim(2) != channels * patch * patch) {
    throw DimensionError("combine_patches: unexpected shape " + to_string(patches.shape()));
  }
  auto t = reshape(patches, {patches.dim(0), th, tw, channels, patch, patch});
  t = permute_axes(t, {0, 3, 1, 4, 2, 5});
  return reshape(t, {patches.dim(0), channels, height, width});
}

}  // namespace dmx

#endif  // DMX_PATCHES_HPP
