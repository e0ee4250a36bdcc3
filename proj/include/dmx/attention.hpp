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

// Transformer blocks and butterfly attention.
//
// Butterfly attention runs an ordinary transformer block on blocks of `a`
// tokens, regrouping tokens between layers with the butterfly stride. With
// a = sqrt(S) two layers connect every token pair while each layer only
// forms (S/a) attention matrices of size a x a.

#ifndef DMX_ATTENTION_HPP
#define DMX_ATTENTION_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dmx/block_mlp.hpp"
#include "dmx/butterfly.hpp"
#include "dmx/mac_counter.hpp"
#include "dmx/ops.hpp"
#include "dmx/patches.hpp"
#include "dmx/random.hpp"

namespace dmx {

namespace detail {

// Binary keep-mask -> additive bias (0 or -inf) broadcastable to [B, h, n, n].
template <typename S>
Tensor<S> mask_bias(const Tensor<S>& mask, std::size_t batch, std::size_t heads, std::size_t n) {
  Tensor<S> bias;
  if (mask.rank() == 2 && mask.dim(0) == batch && mask.dim(1) == n) {
    bias = Tensor<S>({batch, 1, 1, n});
  } else if (mask.rank() == 4 && mask.dim(0) == batch && (mask.dim(1) == heads || mask.dim(1) == 1) &&
             mask.dim(2) == n && mask.dim(3) == n) {
    bias = Tensor<S>(mask.shape());
  } else {
    throw DimensionError("attention mask " + to_string(mask.shape()) + " is incompatible with scores [" +
                         std::to_string(batch) + ", " + std::to_string(heads) + ", " + std::to_string(n) + ", " +
                         std::to_string(n) + "]");
  }
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (mask[i] != S(0) && mask[i] != S(1)) throw DimensionError("attention mask must be binary");
    bias[i] = mask[i] == S(1) ? S(0) : -std::numeric_limits<S>::infinity();
  }
  return bias;
}

}  // namespace detail

/// softmax(q k^T / sqrt(d) + bias) v for q, k, v [B, h, n, d].
///
/// `mask` is a keep-mask (1 = attend): either per key [B, n] or per score
/// [B, h or 1, n, n]. Masked scores get a -inf bias; a query whose keys are
/// all masked outputs zeros.
template <typename S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               const std::optional<Tensor<S>>& mask = std::nullopt) {
  if (q.rank() != 4 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention expects matching [B, h, n, d] q/k/v, got " + to_string(q.shape()) + ", " +
                         to_string(k.shape()) + ", " + to_string(v.shape()));
  }
  const std::size_t b = q.dim(0), h = q.dim(1), n = q.dim(2), d = q.dim(3);
  Tensor<S> scores;
  {
    MacTag tag("attention_scores");
    scores = batched_matmul(reshape(q, {b * h, n, d}), reshape(transpose_axes(k, 2, 3), {b * h, d, n}));
  }
  scores = reshape(scale(scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)))), {b, h, n, n});
  if (mask) scores = add(scores, detail::mask_bias(*mask, b, h, n));
  const auto weights = softmax(scores, 3);
  MacTag tag("attention_values");
  return reshape(batched_matmul(reshape(weights, {b * h, n, n}), reshape(v, {b * h, n, d})), {b, h, n, d});
}

/// Query/key/value projections of one channel group. No biases.
template <typename S>
struct AttentionGroup {
  Tensor<S> wq, wk, wv;
  std::optional<Tensor<S>> wout;
  std::size_t heads = 1;

  std::size_t dim() const { return wq.dim(0); }
};

/// Channels split into independent attention groups (one group is ordinary
/// multi-head self-attention). Without W_out the group's value projection
/// also plays the role of the output projection.
template <typename S>
struct TokenParallelAttention {
  std::vector<AttentionGroup<S>> groups;

  static TokenParallelAttention init(std::size_t dim, std::size_t num_groups, std::size_t heads_per_group,
                                     bool use_wout, Rng& rng) {
    if (num_groups == 0 || heads_per_group == 0 || dim % num_groups != 0 ||
        (dim / num_groups) % heads_per_group != 0) {
      throw DimensionError("attention: dim " + std::to_string(dim) + " does not split into " +
                           std::to_string(num_groups) + " groups of " + std::to_string(heads_per_group) + " heads");
    }
    const std::size_t gd = dim / num_groups;
    const double bound = 1.0 / std::sqrt(static_cast<double>(gd));
    TokenParallelAttention p;
    for (std::size_t g = 0; g < num_groups; ++g) {
      AttentionGroup<S> grp;
      grp.wq = uniform_tensor<S>({gd, gd}, bound, rng);
      grp.wk = uniform_tensor<S>({gd, gd}, bound, rng);
      grp.wv = uniform_tensor<S>({gd, gd}, bound, rng);
      if (use_wout) grp.wout = uniform_tensor<S>({gd, gd}, bound, rng);
      grp.heads = heads_per_group;
      p.groups.push_back(std::move(grp));
    }
    return p;
  }

  std::size_t dim() const {
    std::size_t d = 0;
    for (const auto& g : groups) d += g.dim();
    return d;
  }
  std::size_t num_heads() const {
    std::size_t h = 0;
    for (const auto& g : groups) h += g.heads;
    return h;
  }
  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += (g.wout ? 4 : 3) * g.dim() * g.dim();
    return n;
  }
  /// Forward MACs for `batch` sequences of length n.
  std::uint64_t macs(std::size_t batch, std::size_t n) const {
    std::uint64_t total = 0;
    for (const auto& g : groups) {
      const std::uint64_t rows = static_cast<std::uint64_t>(batch) * n;
      total += (g.wout ? 4 : 3) * rows * g.dim() * g.dim();
      total += 2 * rows * n * g.dim();  // scores and weighted values
    }
    return total;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const std::string p = prefix + "group" + std::to_string(i) + ".";
      out.push_back({p + "wq", groups[i].wq});
      out.push_back({p + "wk", groups[i].wk});
      out.push_back({p + "wv", groups[i].wv});
      if (groups[i].wout) out.push_back({p + "wout", *groups[i].wout});
    }
  }
};

/// Standard multi-head self-attention: one group with W_out.
template <typename S>
TokenParallelAttention<S> init_multi_head_attention(std::size_t dim, std::size_t heads, Rng& rng) {
  return TokenParallelAttention<S>::init(dim, 1, heads, true, rng);
}

/// Folds each group's W_out into W_v. Exact only with one head per group,
/// where attention weights are shared by every channel of the group.
template <typename S>
TokenParallelAttention<S> absorb_wout(const TokenParallelAttention<S>& p) {
  TokenParallelAttention<S> out;
  NoGradGuard guard;
  for (const auto& g : p.groups) {
    if (g.wout && g.heads != 1) throw ConfigError("W_out can only be absorbed with one head per group");
    AttentionGroup<S> folded{g.wq.detach(), g.wk.detach(), g.wout ? matmul(g.wv, *g.wout) : g.wv.detach(),
                             std::nullopt, g.heads};
    out.groups.push_back(std::move(folded));
  }
  return out;
}

namespace detail {

template <typename S>
Tensor<S> attention_group_forward(const Tensor<S>& x, const AttentionGroup<S>& g,
                                  const std::optional<Tensor<S>>& mask) {
  const std::size_t b = x.dim(0), n = x.dim(1), d = g.dim(), h = g.heads;
  const auto rows = reshape(x, {b * n, d});
  const auto split = [&](const Tensor<S>& w) { return permute_axes(reshape(matmul(rows, w), {b, n, h, d / h}), {0, 2, 1, 3}); };
  Tensor<S> q, k, v;
  {
    MacTag tag("attention_projections");
    q = split(g.wq);
    k = split(g.wk);
    v = split(g.wv);
  }
  auto o = reshape(permute_axes(scaled_dot_attention(q, k, v, mask), {0, 2, 1, 3}), {b * n, d});
  if (g.wout) {
    MacTag tag("attention_projections");
    o = matmul(o, *g.wout);
  }
  return reshape(o, {b, n, d});
}

}  // namespace detail

/// x [B, n, D] -> [B, n, D].
template <typename S>
Tensor<S> token_parallel_attention_forward(const Tensor<S>& x, const TokenParallelAttention<S>& p,
                                           const std::optional<Tensor<S>>& mask = std::nullopt) {
  if (x.rank() != 3 || x.dim(2) != p.dim()) {
    throw DimensionError("attention expects [B, n, " + std::to_string(p.dim()) + "], got " + to_string(x.shape()));
  }
  if (p.groups.size() == 1) return detail::attention_group_forward(x, p.groups[0], mask);
  std::vector<Tensor<S>> parts;
  std::size_t offset = 0;
  for (const auto& g : p.groups) {
    parts.push_back(detail::attention_group_forward(slice(x, 2, offset, g.dim()), g, mask));
    offset += g.dim();
  }
  return concat(std::span<const Tensor<S>>(parts), 2);
}

/// Pre-norm transformer layer: x + attn(LN(x)), then + MLP(LN(.)).
template <typename S>
struct TransformerBlock {
  Tensor<S> ln1_gain, ln1_bias;
  TokenParallelAttention<S> attention;
  Tensor<S> ln2_gain, ln2_bias;
  DenseMlp<S> mlp;

  static TransformerBlock init(std::size_t dim, std::size_t heads, std::size_t expansion, Rng& rng,
                               std::size_t groups = 1, bool use_wout = true) {
    if (heads == 0 || dim % heads != 0) {
      throw DimensionError("dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (groups == 0 || heads % groups != 0) {
      throw DimensionError(std::to_string(heads) + " heads do not split into " + std::to_string(groups) + " groups");
    }
    TransformerBlock p;
    p.ln1_gain = Tensor<S>({dim}, S(1));
    p.ln1_bias = Tensor<S>({dim}, S(0));
    p.attention = TokenParallelAttention<S>::init(dim, groups, heads / groups, use_wout, rng);
    p.ln2_gain = Tensor<S>({dim}, S(1));
    p.ln2_bias = Tensor<S>({dim}, S(0));
    p.mlp = DenseMlp<S>::init({dim, expansion * dim, dim}, rng);
    return p;
  }
  std::size_t dim() const { return ln1_gain.numel(); }
  std::size_t num_params() const { return 4 * dim() + attention.num_params() + mlp.num_params(); }
  std::uint64_t macs(std::size_t batch, std::size_t n) const {
    return attention.macs(batch, n) + mlp.macs(batch * n);
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + "ln1.gain", ln1_gain});
    out.push_back({prefix + "ln1.bias", ln1_bias});
    attention.collect(prefix + "attn.", out);
    out.push_back({prefix + "ln2.gain", ln2_gain});
    out.push_back({prefix + "ln2.bias", ln2_bias});
    mlp.collect(prefix + "mlp.", out);
  }
};

template <typename S>
Tensor<S> transformer_block_forward(const Tensor<S>& x, const TransformerBlock<S>& p,
                                    const std::optional<Tensor<S>>& mask = std::nullopt) {
  auto h = add(x, token_parallel_attention_forward(layer_norm(x, p.ln1_gain, p.ln1_bias, 2), p.attention, mask));
  return add(h, dense_mlp_forward(layer_norm(h, p.ln2_gain, p.ln2_bias, 2), p.mlp));
}

/// Transformer blocks over butterfly-regrouped token blocks. Layer i uses
/// stride schedule.stride_for(i), so models deeper than the schedule cycle
/// through its strides.
template <typename S>
struct ButterflyTransformer {
  ButterflySchedule schedule;
  std::vector<TransformerBlock<S>> layers;
  /// Token-wise masks follow their tokens when true. When false the mask is
  /// chunked contiguously each layer, ignoring the token permutation.
  bool permute_mask = true;

  /// radix 0 selects sqrt(seq_len), which must then be a perfect square;
  /// depth 0 selects the schedule's own layer count.
  static ButterflyTransformer init(std::size_t seq_len, std::size_t dim, std::size_t heads, std::size_t expansion,
                                   Rng& rng, std::size_t radix = 0, std::size_t depth = 0, std::size_t groups = 1,
                                   bool use_wout = true) {
    if (radix == 0) {
      radix = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(seq_len))));
      if (radix * radix != seq_len) {
        throw ConfigError("sequence length " + std::to_string(seq_len) +
                          " is not a perfect square; give the butterfly radix explicitly");
      }
    }
    ButterflyTransformer p;
    p.schedule = make_butterfly_schedule(seq_len, radix);
    if (depth == 0) depth = p.schedule.num_layers;
    for (std::size_t i = 0; i < depth; ++i) {
      p.layers.push_back(TransformerBlock<S>::init(dim, heads, expansion, rng, groups, use_wout));
    }
    return p;
  }
  std::size_t seq_len() const { return schedule.input_dim; }
  std::size_t radix() const { return schedule.block_size; }
  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.num_params();
    return n;
  }
  std::uint64_t macs(std::size_t batch) const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.macs(batch * seq_len() / radix(), radix());
    return n;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "layer" + std::to_string(i) + ".", out);
  }
};

/// x [B, S, D]. `mask` is either token-wise [B, S] or per block
/// [B, S/a, h, a, a] (the latter indexed in the permuted token order).
template <typename S>
Tensor<S> butterfly_attention_forward(const Tensor<S>& x, const ButterflyTransformer<S>& p,
                                      const std::optional<Tensor<S>>& mask = std::nullopt) {
  const std::size_t seq = p.seq_len(), a = p.radix();
  if (x.rank() != 3 || x.dim(1) != seq) {
    throw DimensionError("butterfly attention expects [B, " + std::to_string(seq) + ", D], got " +
                         to_string(x.shape()));
  }
  const std::size_t b = x.dim(0), d = x.dim(2), blocks = seq / a;
  if (mask && !(mask->rank() == 2 && mask->dim(0) == b && mask->dim(1) == seq) &&
      !(mask->rank() == 5 && mask->dim(0) == b && mask->dim(1) == blocks && mask->dim(3) == a && mask->dim(4) == a)) {
    throw DimensionError("butterfly attention mask " + to_string(mask->shape()) + " is neither [B, S] nor [B, " +
                         std::to_string(blocks) + ", h, " + std::to_string(a) + ", " + std::to_string(a) + "]");
  }
  Tensor<S> h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::size_t stride = p.schedule.stride_for(i);
    const std::size_t chunks = seq / (a * stride);
    if (stride > 1) record_permutation_pass();  // regroup in, ungroup out
    auto t = reshape(transpose_axes(reshape(h, {b, chunks, a, stride, d}), 2, 3), {b * blocks, a, d});
    std::optional<Tensor<S>> m;
    if (mask && mask->rank() == 2) {
      NoGradGuard guard;
      m = p.permute_mask ? reshape(transpose_axes(reshape(*mask, {b, chunks, a, stride}), 2, 3), {b * blocks, a})
                         : reshape(*mask, {b * blocks, a});
    } else if (mask) {
      m = reshape(*mask, {b * blocks, mask->dim(2), a, a});
    }
    t = transformer_block_forward(t, p.layers[i], m);
    h = reshape(transpose_axes(reshape(t, {b, chunks, stride, a, d}), 2, 3), {b, seq, d});
    if (stride > 1) record_permutation_pass();
  }
  return h;
}

enum class AttentionKind { kDense, kButterfly };

struct VitConfig {
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch = 4;
  std::size_t dim = 128;
  std::size_t depth = 4;
  std::size_t heads = 8;
  std::size_t expansion = 2;
  std::size_t num_classes = 10;
  AttentionKind attention = AttentionKind::kDense;
  std::size_t radix = 0;  // butterfly only; 0 = sqrt(S)
  std::size_t groups = 1;
  bool use_wout = true;

  std::size_t seq_len() const {
    if (patch == 0 || image_size % patch != 0) {
      throw DimensionError("patch size " + std::to_string(patch) + " does not divide image size " +
                           std::to_string(image_size));
    }
    return (image_size / patch) * (image_size / patch);
  }
};

/// Patch embedding, transformer layers, final norm, mean pool, linear head.
/// No positional encoding.
template <typename S>
struct Vit {
  VitConfig config;
  Linear<S> embed;
  std::vector<TransformerBlock<S>> blocks;  // dense attention
  ButterflyTransformer<S> butterfly;        // butterfly attention
  Tensor<S> norm_gain, norm_bias;
  Linear<S> head;

  static Vit init(const VitConfig& c, Rng& rng) {
    Vit p;
    p.config = c;
    const std::size_t seq = c.seq_len();
    p.embed = Linear<S>::init(c.channels * c.patch * c.patch, c.dim, rng);
    if (c.attention == AttentionKind::kDense) {
      for (std::size_t i = 0; i < c.depth; ++i) {
        p.blocks.push_back(TransformerBlock<S>::init(c.dim, c.heads, c.expansion, rng, c.groups, c.use_wout));
      }
    } else {
      p.butterfly = ButterflyTransformer<S>::init(seq, c.dim, c.heads, c.expansion, rng, c.radix, c.depth, c.groups,
                                                  c.use_wout);
    }
    p.norm_gain = Tensor<S>({c.dim}, S(1));
    p.norm_bias = Tensor<S>({c.dim}, S(0));
    p.head = Linear<S>::init(c.dim, c.num_classes, rng);
    return p;
  }
  std::size_t num_params() const {
    std::size_t n = embed.num_params() + butterfly.num_params() + 2 * config.dim + head.num_params();
    for (const auto& b : blocks) n += b.num_params();
    return n;
  }
  std::uint64_t macs(std::size_t batch) const {
    const std::size_t seq = config.seq_len();
    std::uint64_t n = embed.macs(batch * seq) + head.macs(batch);
    if (config.attention == AttentionKind::kDense) {
      for (const auto& b : blocks) n += b.macs(batch, seq);
    } else {
      n += butterfly.macs(batch);
    }
    return n;
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    embed.collect(prefix + "embed.", out);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "block" + std::to_string(i) + ".", out);
    butterfly.collect(prefix + "butterfly.", out);
    out.push_back({prefix + "norm.gain", norm_gain});
    out.push_back({prefix + "norm.bias", norm_bias});
    head.collect(prefix + "head.", out);
  }
};

/// Token features before pooling: [B, S, D].
template <typename S>
Tensor<S> vit_tokens(const Tensor<S>& image, const Vit<S>& p) {
  const auto& c = p.config;
  if (image.rank() != 4 || image.dim(1) != c.channels || image.dim(2) != c.image_size || image.dim(3) != c.image_size) {
    throw DimensionError("vit expects [B, " + std::to_string(c.channels) + ", " + std::to_string(c.image_size) + ", " +
                         std::to_string(c.image_size) + "], got " + to_string(image.shape()));
  }
  auto h = linear_forward(extract_patches(image, c.patch), p.embed);
  if (c.attention == AttentionKind::kDense) {
    for (const auto& b : p.blocks) h = transformer_block_forward(h, b);
  } else {
    h = butterfly_attention_forward(h, p.butterfly);
  }
  return h;
}

/// image [B, C, H, W] -> logits [B, num_classes].
template <typename S>
Tensor<S> vit_forward(const Tensor<S>& image, const Vit<S>& p) {
  auto h = layer_norm(vit_tokens(image, p), p.norm_gain, p.norm_bias, 2);
  return linear_forward(mean_axis(h, 1), p.head);
}

}  // namespace dmx

#endif  // DMX_ATTENTION_HPP
