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

// Model families behind one interface, built from an ExperimentConfig.

#ifndef DMX_MODEL_HPP
#define DMX_MODEL_HPP

#include <variant>

#include "dmx/attention.hpp"
#include "dmx/block_mlp.hpp"
#include "dmx/config.hpp"
#include "dmx/mixing.hpp"
#include "dmx/patch_mixer.hpp"

namespace dmx {

inline MlpKind parse_mlp_kind(const std::string& s) {
  if (s == "dense") return MlpKind::kDense;
  if (s == "butterfly") return MlpKind::kButterflyMlp;
  if (s == "butterfly_linear") return MlpKind::kButterflyLinear;
  throw ConfigError("unknown MLP kind '" + s + "'");
}

/// Flattened input -> feature MLP -> linear head.
template <typename S>
struct MlpClassifier {
  std::size_t width = 0;
  FeatureMlp<S> body;
  Linear<S> head;

  static MlpClassifier init(MlpKind kind, std::size_t width, std::size_t expansion, std::size_t radix,
                            std::size_t layers, std::size_t num_classes, Rng& rng) {
    MlpClassifier p;
    p.width = width;
    p.body = FeatureMlp<S>::init(kind, width, expansion, radix, rng,
                                 layers == 0 ? std::nullopt : std::optional<std::size_t>(layers));
    p.head = Linear<S>::init(width, num_classes, rng);
    return p;
  }
  std::size_t num_params() const { return body.num_params() + head.num_params(); }
  std::uint64_t macs(std::size_t batch) const { return body.macs(batch) + head.macs(batch); }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    body.collect(prefix + "body.", out);
    head.collect(prefix + "head.", out);
  }
};

template <typename S>
Tensor<S> mlp_classifier_forward(const Tensor<S>& x, const MlpClassifier<S>& p) {
  if (x.numel() % p.width != 0 || x.numel() / std::max<std::size_t>(x.dim(0), 1) != p.width) {
    throw DimensionError("mlp classifier expects " + std::to_string(p.width) + " features per sample, got " +
                         to_string(x.shape()));
  }
  return linear_forward(feature_mlp_forward(reshape(x, {x.dim(0), p.width}), p.body), p.head);
}

template <typename S>
struct Model {
  std::variant<MlpClassifier<S>, MlpMixer<S>, PatchOnlyMixer<S>, Vit<S>> impl;

  /// images [B, C, H, W] -> logits [B, classes].
  Tensor<S> forward(const Tensor<S>& images) const {
    return std::visit(
        [&](const auto& m) -> Tensor<S> {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, MlpClassifier<S>>) return mlp_classifier_forward(images, m);
          else if constexpr (std::is_same_v<M, MlpMixer<S>>) return mlp_mixer_forward(images, m);
          else if constexpr (std::is_same_v<M, PatchOnlyMixer<S>>) return patch_only_mixer_forward(images, m);
          else return vit_forward(images, m);
        },
        impl);
  }
  std::size_t num_params() const {
    return std::visit([](const auto& m) { return m.num_params(); }, impl);
  }
  std::uint64_t macs(std::size_t batch) const {
    return std::visit([batch](const auto& m) { return m.macs(batch); }, impl);
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    std::visit([&](const auto& m) { m.collect(prefix, out); }, impl);
  }
  ParamList<S> params() const {
    ParamList<S> out;
    collect("", out);
    return out;
  }
};

/// Validates the config and initializes the model it describes.
template <typename S>
Model<S> build_model(const ExperimentConfig& c, Rng& rng) {
  validate(c);
  const auto in = input_shape(c);
  const std::size_t classes = num_classes(c);
  if (c.family == "mlp") {
    return {MlpClassifier<S>::init(parse_mlp_kind(c.mlp), in[0] * in[1] * in[2], c.expansion, c.radix, c.depth,
                                   classes, rng)};
  }
  if (c.family == "patch_only") {
    const PatchSchedule s{in[1], c.patch_sizes, in[0]};
    return {PatchOnlyMixer<S>::init(s, c.depth, c.expansion, classes, rng, c.residual)};
  }
  if (c.family == "mixer") {
    MixerConfig m;
    m.image_size = in[1];
    m.in_channels = in[0];
    m.patch = c.patch;
    m.hidden = c.dim;
    m.depth = c.depth;
    m.token_expansion = m.channel_expansion = c.expansion;
    m.token_kind = parse_mlp_kind(c.token_mlp);
    m.channel_kind = parse_mlp_kind(c.channel_mlp);
    m.token_radix = c.token_radix;
    m.channel_radix = c.channel_radix;
    m.num_classes = classes;
    return {MlpMixer<S>::init(m, rng)};
  }
  VitConfig v;
  v.image_size = in[1];
  v.channels = in[0];
  v.patch = c.patch;
  v.dim = c.dim;
  v.depth = c.depth;
  v.heads = c.heads;
  v.expansion = c.expansion;
  v.num_classes = classes;
  v.attention = c.family == "butterfly_vit" ? AttentionKind::kButterfly : AttentionKind::kDense;
  v.radix = c.radix;
  v.groups = c.groups;
  v.use_wout = c.use_wout;
  return {Vit<S>::init(v, rng)};
}

/// Structural mixing schedule of the configured model's mixing core:
/// flattened features (mlp), [T, C] grid (mixer), pixels x channels
/// (patch_only) or tokens (vit / butterfly_vit).
MixingSchedule model_mixing_schedule(const ExperimentConfig& c);

}  // namespace dmx

#endif  // DMX_MODEL_HPP
