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

#include "dmx/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "dmx/random.hpp"

namespace dmx {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset concat_datasets(std::vector<Dataset> parts, const std::string& split) {
  Dataset out;
  out.split = split;
  out.num_classes = parts.empty() ? 0 : parts.front().num_classes;
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  out.images = Tensorf({n, 3, kCifarSide, kCifarSide});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(), out.images.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.images.numel();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

// Relevant position of each block, drawn from the seed.
std::vector<std::size_t> relevant_positions(std::size_t dims, std::size_t blocks, Rng& rng) {
  if (blocks == 0 || dims % blocks != 0) {
    throw ConfigError("synthetic task: " + std::to_string(blocks) + " blocks do not divide " + std::to_string(dims) +
                      " dims");
  }
  const std::size_t width = dims / blocks;
  std::vector<std::size_t> pos(blocks);
  for (std::size_t k = 0; k < blocks; ++k) pos[k] = k * width + rng.below(width);
  return pos;
}

template <typename Label>
Dataset bit_task(std::size_t n, std::size_t dims, std::uint64_t seed, std::size_t blocks, int classes, Label label,
                 const std::string& name) {
  Rng rng(seed);
  const auto pos = relevant_positions(dims, blocks, rng);
  Dataset d;
  d.split = name;
  d.num_classes = classes;
  d.labels.resize(n);
  if (n == 0) return d;
  d.images = Tensorf({n, 1, 1, dims});
  std::vector<int> bits(blocks);
  for (std::size_t i = 0; i < n; ++i) {
    float* row = d.images.data().data() + i * dims;
    for (std::size_t j = 0; j < dims; ++j) row[j] = rng.coin() ? 1.0f : 0.0f;
    for (std::size_t k = 0; k < blocks; ++k) bits[k] = row[pos[k]] > 0.5f ? 1 : 0;
    d.labels[i] = label(bits);
  }
  return d;
}

}  // namespace

Dataset parse_cifar_file(const std::filesystem::path& file, std::size_t label_bytes, int num_classes) {
  const auto bytes = read_file(file);
  const std::size_t record = label_bytes + kCifarPixels;
  if (bytes.empty() || bytes.size() % record != 0) {
    const std::size_t whole = bytes.size() / record;
    throw FormatError(file.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of the " +
                      std::to_string(record) + "-byte record; expected " + std::to_string((whole + 1) * record) +
                      " bytes for " + std::to_string(whole + 1) + " records, truncated record starts at byte offset " +
                      std::to_string(whole * record));
  }
  const std::size_t n = bytes.size() / record;
  Dataset d;
  d.num_classes = num_classes;
  d.images = Tensorf({n, 3, kCifarSide, kCifarSide});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t offset = i * record;
    const int label = bytes[offset + label_bytes - 1];
    if (label >= num_classes) {
      throw FormatError(file.string() + ": label " + std::to_string(label) + " at byte offset " +
                        std::to_string(offset + label_bytes - 1) + " is outside [0, " + std::to_string(num_classes) +
                        ")");
    }
    d.labels[i] = label;
    float* dst = d.images.data().data() + i * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(bytes[offset + label_bytes + p]) / 255.0f;
  }
  return d;
}

Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int b = 1; b <= 5; ++b) files.push_back("data_batch_" + std::to_string(b) + ".bin");
  } else if (split == "test") {
    files.push_back("test_batch.bin");
  } else {
    throw ConfigError("unknown CIFAR split '" + split + "'");
  }
  std::vector<Dataset> parts;
  for (const auto& f : files) {
    if (!std::filesystem::exists(dir / f)) throw IoError("missing CIFAR-10 file " + (dir / f).string());
    parts.push_back(parse_cifar_file(dir / f, 1, 10));
  }
  return concat_datasets(std::move(parts), split);
}

Dataset load_cifar100(const std::filesystem::path& dir, const std::string& split) {
  if (split != "train" && split != "test") throw ConfigError("unknown CIFAR split '" + split + "'");
  const auto file = dir / (split + ".bin");
  if (!std::filesystem::exists(file)) throw IoError("missing CIFAR-100 file " + file.string());
  auto d = parse_cifar_file(file, 2, 100);
  d.split = split;
  return d;
}

Dataset permuted_parity(std::size_t n, std::size_t dims, std::uint64_t seed, std::size_t blocks) {
  return bit_task(n, dims, seed, blocks, 2,
                  [](const std::vector<int>& bits) { return std::accumulate(bits.begin(), bits.end(), 0) % 2; },
                  "permuted_parity");
}

Dataset block_sum(std::size_t n, std::size_t dims, std::uint64_t seed, std::size_t blocks) {
  if (blocks > 20) throw ConfigError("block_sum enumerates 2^blocks patterns; at most 20 blocks");
  Rng rng(seed);
  const auto pos = relevant_positions(dims, blocks, rng);
  // Seeded pair weights; the label threshold is the median of the form over
  // all 2^blocks sign patterns. q(s) = q(-s), so the classes stay balanced.
  std::vector<double> weight(blocks * blocks, 0.0);
  for (std::size_t i = 0; i < blocks; ++i)
    for (std::size_t j = i + 1; j < blocks; ++j) weight[i * blocks + j] = rng.normal();
  const auto form = [&](std::uint32_t pattern) {
    double q = 0;
    for (std::size_t i = 0; i < blocks; ++i)
      for (std::size_t j = i + 1; j < blocks; ++j) {
        const int si = (pattern >> i) & 1U ? 1 : -1, sj = (pattern >> j) & 1U ? 1 : -1;
        q += weight[i * blocks + j] * si * sj;
      }
    return q;
  };
  std::vector<double> values(std::size_t{1} << blocks);
  for (std::uint32_t m = 0; m < values.size(); ++m) values[m] = form(m);
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double threshold = blocks == 0 ? 0.0 : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);

  Dataset d;
  d.split = "block_sum";
  d.num_classes = 2;
  d.labels.resize(n);
  if (n == 0) return d;
  d.images = Tensorf({n, 1, 1, dims});
  for (std::size_t i = 0; i < n; ++i) {
    float* row = d.images.data().data() + i * dims;
    for (std::size_t j = 0; j < dims; ++j) row[j] = rng.coin() ? 1.0f : 0.0f;
    std::uint32_t pattern = 0;
    for (std::size_t k = 0; k < blocks; ++k) pattern |= (row[pos[k]] > 0.5f ? 1U : 0U) << k;
    d.labels[i] = values[pattern] > threshold ? 1 : 0;
  }
  return d;
}

Dataset tile_class(std::size_t n, std::size_t side, std::uint64_t seed) {
  if (side < 2) throw ConfigError("tile_class needs images of side >= 2");
  Rng rng(seed);
  Dataset d;
  d.split = "tile_class";
  d.num_classes = 2;
  d.labels.resize(n);
  if (n == 0) return d;
  d.images = Tensorf({n, 1, side, side});
  for (std::size_t i = 0; i < n; ++i) {
    float* img = d.images.data().data() + i * side * side;
    for (std::size_t p = 0; p < side * side; ++p) img[p] = rng.coin() ? 1.0f : 0.0f;
    const int corners = static_cast<int>(img[0] + img[side - 1] + img[(side - 1) * side] + img[side * side - 1]);
    d.labels[i] = corners % 2;
  }
  return d;
}

Dataset take(const Dataset& d, const std::vector<std::size_t>& indices) {
  if (d.size() == 0) {
    if (!indices.empty()) throw DimensionError("cannot take samples from an empty dataset");
    return d;
  }
  Shape shape = d.images.shape();
  const std::size_t per = d.images.numel() / std::max<std::size_t>(shape[0], 1);
  shape[0] = indices.size();
  Dataset out;
  out.split = d.split;
  out.num_classes = d.num_classes;
  if (indices.empty()) return out;
  out.images = Tensorf(shape);
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = d.images.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * per);
    std::copy(src, src + static_cast<std::ptrdiff_t>(per), out.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    out.labels.push_back(d.labels[indices[i]]);
  }
  return out;
}

Dataset first_per_class(const Dataset& d, std::size_t per_class) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(d.num_classes), 0);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto& c = counts[static_cast<std::size_t>(d.labels[i])];
    if (c < per_class) {
      keep.push_back(i);
      ++c;
    }
  }
  return take(d, keep);
}

std::pair<Dataset, Dataset> split_tail(const Dataset& d, double test_fraction) {
  if (test_fraction < 0 || test_fraction > 1) throw ConfigError("test fraction must lie in [0, 1]");
  const auto test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(d.size())));
  std::vector<std::size_t> a(d.size() - test), b(test);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), d.size() - test);
  auto train = take(d, a);
  auto held = take(d, b);
  train.split = "train";
  held.split = "test";
  return {std::move(train), std::move(held)};
}

Tensorf resize_bilinear(const Tensorf& images, std::size_t side) {
  if (images.rank() != 4) throw DimensionError("resize expects [N, C, H, W], got " + to_string(images.shape()));
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensorf out({n, c, side, side});
  const auto src_coord = [](std::size_t dst, std::size_t in, std::size_t outn) {
    const double x = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    return std::clamp(x, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t p = 0; p < n * c; ++p) {
    const float* src = images.data().data() + p * h * w;
    float* dst = out.data().data() + p * side * side;
    for (std::size_t y = 0; y < side; ++y) {
      const double sy = src_coord(y, h, side);
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < side; ++x) {
        const double sx = src_coord(x, w, side);
        const auto x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
        const double bottom = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
        dst[y * side + x] = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

}  // namespace dmx
