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

// Patch-only mixer and the MLP-Mixer baseline.
//
// The patch-only mixer never mixes across patches explicitly: each layer
// runs one shared MLP over every non-overlapping K x K patch (channels
// included), and successive layers use different K so that patch borders
// move. Spatial mixing is confined to lcm(K_i)-sized blocks per axis.

#ifndef DMX_PATCH_MIXER_HPP
#define DMX_PATCH_MIXER_HPP

#include <numeric>
#include <string>
#include <vector>

#include "dmx/block_mlp.hpp"
#include "dmx/ops.hpp"
#include "dmx/patches.hpp"
#include "dmx/random.hpp"

namespace dmx {

/// Least common multiple of the patch sizes.
inline std::size_t effective_mixing_block(const std::vector<std::size_t>& patch_sizes) {
  if (patch_sizes.empty()) throw ConfigError("effective_mixing_block needs at least one patch size");
  std::size_t l = 1;
  for (auto k : patch_sizes) l = std::lcm(l, k);
  return l;
}

struct PatchSchedule {
  std::size_t image_size = 0;
  std::vector<std::size_t> patch_sizes;  // used round-robin by layer
  std::size_t channels = 0;

  void validate() const {
    if (image_size == 0 || channels == 0 || patch_sizes.empty()) {
      throw ConfigError("patch schedule needs a positive image size, channels and at least one patch size");
    }
    for (auto k : patch_sizes) {
      if (k == 0 || image_size % k != 0) {
        throw DimensionError("patch size " + std::to_string(k) + " does not divide image size " +
                             std::to_string(image_size));
      }
    }
  }
  std::size_t patch_for(std::size_t layer) const { return patch_sizes[layer % patch_sizes.size()]; }
  /// Largest gcd over distinct pairs of patch sizes (1 = pairwise coprime).
  std::size_t max_pairwise_gcd() const {
    std::size_t g = 1;
    for (std::size_t i = 0; i < patch_sizes.size(); ++i)
      for (std::size_t j = i + 1; j < patch_sizes.size(); ++j) g = std::max(g, std::gcd(patch_sizes[i], patch_sizes[j]));
    return g;
  }
  std::size_t effective_block() const { return effective_mixing_block(patch_sizes); }
};

/// One patch-only layer: pre-norm over the K*K*C patch vector, shared MLP,
/// optional residual.
template <typename S>
struct PatchLayer {
  std::size_t patch = 0;
  Tensor<S> ln_gain, ln_bias;
  DenseMlp<S> mlp;
  bool residual = true;

  std::size_t width() const { return ln_gain.numel(); }
  std::size_t num_params() const { return 2 * width() + mlp.num_params(); }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + "ln.gain", ln_gain});
    out.push_back({prefix + "ln.bias", ln_bias});
    mlp.collect(prefix + "mlp.", out);
  }
};

/// patches [B, P, K*K*C] -> same shape.
template <typename S>
Tensor<S> patch_layer_forward(const Tensor<S>& patches, const PatchLayer<S>& p) {
  if (patches.rank() != 3 || patches.dim(2) != p.width()) {
    throw DimensionError("patch layer expects [B, P, " + std::to_string(p.width()) + "], got " +
                         to_string(patches.shape()));
  }
  auto y = dense_mlp_forward(layer_norm(patches, p.ln_gain, p.ln_bias, 2), p.mlp);
  return p.residual ? add(patches, y) : y;
}

template <typename S>
struct PatchOnlyMixer {
  PatchSchedule schedule;
  std::vector<PatchLayer<S>> layers;
  Linear<S> head;  // reads the mean patch vector of the last layer

  static PatchOnlyMixer init(const PatchSchedule& schedule, std::size_t num_layers, std::size_t expansion,
                             std::size_t num_classes, Rng& rng, bool residual = true) {
    schedule.validate();
    if (num_layers == 0) throw ConfigError("patch-only mixer needs at least one layer");
    PatchOnlyMixer p;
    p.schedule = schedule;
    for (std::size_t i = 0; i < num_layers; ++i) {
      const std::size_t k = schedule.patch_for(i);
      const std::size_t w = k * k * schedule.channels;
      PatchLayer<S> layer;
      layer.patch = k;
      layer.ln_gain = Tensor<S>({w}, S(1));
      layer.ln_bias = Tensor<S>({w}, S(0));
      layer.mlp = DenseMlp<S>::init({w, expansion * w, w}, rng);
      layer.residual = residual;
      p.layers.push_back(std::move(layer));
    }
    p.head = Linear<S>::init(p.layers.back().width(), num_classes, rng);
    return p;
  }
  std::size_t num_params() const {
    std::size_t n = head.num_params();
    for (const auto& l : layers) n += l.num_params();
    return n;
  }
  std::uint64_t macs(std::size_t batch) const {
    std::uint64_t n = head.macs(batch);
    for (const auto& l : layers) {
      const std::size_t tiles = (schedule.image_size / l.patch) * (schedule.image_size / l.patch);
      n += l.mlp.macs(batch * tiles);
    }
    return n;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "layer" + std::to_string(i) + ".", out);
    head.collect(prefix + "head.", out);
  }
};

/// Runs the first `num_layers` layers (all by default) and returns the
/// image [B, C, I, I].
template <typename S>
Tensor<S> patch_only_mixer_image(const Tensor<S>& x, const PatchOnlyMixer<S>& p, std::size_t num_layers = SIZE_MAX) {
  const auto& s = p.schedule;
  if (x.rank() != 4 || x.dim(1) != s.channels || x.dim(2) != s.image_size || x.dim(3) != s.image_size) {
    throw DimensionError("patch-only mixer expects [B, " + std::to_string(s.channels) + ", " +
                         std::to_string(s.image_size) + ", " + std::to_string(s.image_size) + "], got " +
                         to_string(x.shape()));
  }
  Tensor<S> h = x;
  for (std::size_t i = 0; i < std::min(num_layers, p.layers.size()); ++i) {
    const std::size_t k = p.layers[i].patch;
    h = combine_patches(patch_layer_forward(extract_patches(h, k), p.layers[i]), s.channels, s.image_size,
                        s.image_size, k);
  }
  return h;
}

/// x [B, C, I, I] -> logits [B, num_classes].
template <typename S>
Tensor<S> patch_only_mixer_forward(const Tensor<S>& x, const PatchOnlyMixer<S>& p) {
  const auto& last = p.layers.back();
  const auto h = patch_only_mixer_image(x, p, p.layers.size() - 1);
  const auto patches = patch_layer_forward(extract_patches(h, last.patch), last);
  return linear_forward(mean_axis(patches, 1), p.head);
}

struct MixerConfig {
  std::size_t image_size = 32;
  std::size_t in_channels = 3;
  std::size_t patch = 4;
  std::size_t hidden = 121;  // channel width after embedding
  std::size_t depth = 7;
  std::size_t token_expansion = 1;
  std::size_t channel_expansion = 1;
  MlpKind token_kind = MlpKind::kDense;
  MlpKind channel_kind = MlpKind::kDense;
  std::size_t token_radix = 8;
  std::size_t channel_radix = 11;
  std::size_t num_classes = 10;

  std::size_t num_tokens() const {
    if (patch == 0 || image_size % patch != 0) {
      throw DimensionError("patch size " + std::to_string(patch) + " does not divide image size " +
                           std::to_string(image_size));
    }
    return (image_size / patch) * (image_size / patch);
  }
};

template <typename S>
struct MixerBlock {
  Tensor<S> ln1_gain, ln1_bias;
  FeatureMlp<S> token_mlp;  // over the token axis
  Tensor<S> ln2_gain, ln2_bias;
  FeatureMlp<S> channel_mlp;  // over the channel axis

  std::size_t num_mixing_params() const { return token_mlp.num_params() + channel_mlp.num_params(); }
  std::size_t num_params() const { return 2 * ln1_gain.numel() + 2 * ln2_gain.numel() + num_mixing_params(); }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + "ln1.gain", ln1_gain});
    out.push_back({prefix + "ln1.bias", ln1_bias});
    token_mlp.collect(prefix + "token.", out);
    out.push_back({prefix + "ln2.gain", ln2_gain});
    out.push_back({prefix + "ln2.bias", ln2_bias});
    channel_mlp.collect(prefix + "channel.", out);
  }
};

/// x [B, T, C] -> [B, T, C]: token mixing then channel mixing, each pre-norm
/// with a residual.
template <typename S>
Tensor<S> mixer_block_forward(const Tensor<S>& x, const MixerBlock<S>& p) {
  auto t = transpose_axes(layer_norm(x, p.ln1_gain, p.ln1_bias, 2), 1, 2);
  auto h = add(x, transpose_axes(feature_mlp_forward(t, p.token_mlp), 1, 2));
  return add(h, feature_mlp_forward(layer_norm(h, p.ln2_gain, p.ln2_bias, 2), p.channel_mlp));
}

template <typename S>
struct MlpMixer {
  MixerConfig config;
  Linear<S> embed;
  std::vector<MixerBlock<S>> blocks;
  Tensor<S> norm_gain, norm_bias;
  Linear<S> head;

  static MlpMixer init(const MixerConfig& c, Rng& rng) {
    MlpMixer p;
    p.config = c;
    const std::size_t tokens = c.num_tokens();
    p.embed = Linear<S>::init(c.in_channels * c.patch * c.patch, c.hidden, rng);
    for (std::size_t i = 0; i < c.depth; ++i) {
      MixerBlock<S> b;
      b.ln1_gain = Tensor<S>({c.hidden}, S(1));
      b.ln1_bias = Tensor<S>({c.hidden}, S(0));
      b.token_mlp = FeatureMlp<S>::init(c.token_kind, tokens, c.token_expansion, c.token_radix, rng);
      b.ln2_gain = Tensor<S>({c.hidden}, S(1));
      b.ln2_bias = Tensor<S>({c.hidden}, S(0));
      b.channel_mlp = FeatureMlp<S>::init(c.channel_kind, c.hidden, c.channel_expansion, c.channel_radix, rng);
      p.blocks.push_back(std::move(b));
    }
    p.norm_gain = Tensor<S>({c.hidden}, S(1));
    p.norm_bias = Tensor<S>({c.hidden}, S(0));
    p.head = Linear<S>::init(c.hidden, c.num_classes, rng);
    return p;
  }
  std::size_t num_params() const {
    std::size_t n = embed.num_params() + 2 * config.hidden + head.num_params();
    for (const auto& b : blocks) n += b.num_params();
    return n;
  }
  std::uint64_t macs(std::size_t batch) const {
    const std::size_t tokens = config.num_tokens();
    std::uint64_t n = embed.macs(batch * tokens) + head.macs(batch);
    for (const auto& b : blocks) n += b.token_mlp.macs(batch * config.hidden) + b.channel_mlp.macs(batch * tokens);
    return n;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    embed.collect(prefix + "embed.", out);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "block" + std::to_string(i) + ".", out);
    out.push_back({prefix + "norm.gain", norm_gain});
    out.push_back({prefix + "norm.bias", norm_bias});
    head.collect(prefix + "head.", out);
  }
};

/// image [B, C, H, W] -> logits [B, num_classes].
template <typename S>
Tensor<S> mlp_mixer_forward(const Tensor<S>& image, const MlpMixer<S>& p) {
  const auto& c = p.config;
  if (image.rank() != 4 || image.dim(1) != c.in_channels || image.dim(2) != c.image_size ||
      image.dim(3) != c.image_size) {
    throw DimensionError("mixer expects [B, " + std::to_string(c.in_channels) + ", " + std::to_string(c.image_size) +
                         ", " + std::to_string(c.image_size) + "], got " + to_string(image.shape()));
  }
  auto h = linear_forward(extract_patches(image, c.patch), p.embed);
  for (const auto& b : p.blocks) h = mixer_block_forward(h, b);
  h = layer_norm(h, p.norm_gain, p.norm_bias, 2);
  return linear_forward(mean_axis(h, 1), p.head);
}

}  // namespace dmx

#endif  // DMX_PATCH_MIXER_HPP
