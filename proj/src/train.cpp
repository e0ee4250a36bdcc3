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

#include "dmx/train.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>

namespace dmx {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::size_t argmax_row(std::span<const float> logits, std::size_t row, std::size_t classes) {
  const auto begin = logits.begin() + static_cast<std::ptrdiff_t>(row * classes);
  return static_cast<std::size_t>(std::max_element(begin, begin + static_cast<std::ptrdiff_t>(classes)) - begin);
}

Dataset cifar_split(const ExperimentConfig& c, const std::string& split, std::size_t subset) {
  if (c.data_path.empty()) throw ConfigError("data.path must name the CIFAR directory for source " + c.source);
  auto d = c.source == "cifar10" ? load_cifar10(c.data_path, split) : load_cifar100(c.data_path, split);
  if (subset > 0) d = first_per_class(d, std::max<std::size_t>(subset / static_cast<std::size_t>(d.num_classes), 1));
  return d;
}

}  // namespace

std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& c) {
  validate(c);
  Dataset train, test;
  if (c.source == "cifar10" || c.source == "cifar100") {
    train = cifar_split(c, "train", c.train_size);
    test = cifar_split(c, "test", c.test_size);
  } else {
    Dataset all;
    if (c.source == "permuted_parity") all = permuted_parity(c.n, c.dims, c.seed, c.blocks);
    else if (c.source == "block_sum") all = block_sum(c.n, c.dims, c.seed, c.blocks);
    else all = tile_class(c.n, c.dims, c.seed);
    std::tie(train, test) = split_tail(all, c.test_fraction);
  }
  for (Dataset* d : {&train, &test}) {
    if (c.image_size != 0 && d->size() > 0 && d->height() != c.image_size) {
      d->images = resize_bilinear(d->images, c.image_size);
    }
  }
  return {std::move(train), std::move(test)};
}

Tensorf gather_images(const Dataset& d, const std::vector<std::size_t>& indices, std::size_t begin, std::size_t end) {
  Shape shape = d.images.shape();
  const std::size_t per = d.images.numel() / shape[0];
  shape[0] = end - begin;
  Tensorf out(shape);
  auto dst = out.data();
  const auto src = d.images.data();
  for (std::size_t i = begin; i < end; ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>((i - begin) * per));
  }
  return out;
}

double evaluate_accuracy(const Model<float>& model, const Dataset& d, std::size_t batch_size) {
  if (d.size() == 0) return 0;
  NoGradGuard guard;
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < d.size(); b += batch_size) {
    const std::size_t e = std::min(b + batch_size, d.size());
    const auto logits = model.forward(gather_images(d, order, b, e));
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = b; i < e; ++i) {
      if (argmax_row(logits.data(), i - b, classes) == static_cast<std::size_t>(d.labels[i])) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

TrainResult train_experiment(const ExperimentConfig& c, const Dataset& train, const Dataset& test,
                             const TrainOptions& options) {
  validate(c);
  if (train.size() == 0) throw DataError("training set is empty");
  const auto in = input_shape(c);
  if (train.images.shape() != Shape{train.size(), in[0], in[1], in[2]}) {
    throw DataError("training images " + to_string(train.images.shape()) + " do not match the configured input " +
                    to_string(Shape{in[0], in[1], in[2]}));
  }
  Rng root(c.seed);
  Rng init_rng = root.split();
  Rng order_rng = root.split();

  const auto model = build_model<float>(c, init_rng);
  auto params = model.params();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  Adam<float> opt(params);

  std::optional<MetricsWriter> metrics;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    std::ofstream(*options.out_dir / "config.txt") << to_text(c);
    metrics.emplace(*options.out_dir / "metrics.csv");
  }

  TrainResult result;
  result.num_params = model.num_params();
  result.best_test_acc = -1;
  const std::size_t steps_per_epoch = (train.size() + c.batch_size - 1) / c.batch_size;
  const std::size_t total_steps = steps_per_epoch * c.epochs;
  std::size_t step = 0;
  std::optional<double> loss_ema;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    const auto start = Clock::now();
    order_rng.shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < train.size(); b += c.batch_size) {
      const std::size_t e = std::min(b + c.batch_size, train.size());
      std::vector<int> labels(e - b);
      for (std::size_t i = b; i < e; ++i) labels[i - b] = train.labels[order[i]];
      const auto logits = model.forward(gather_images(train, order, b, e));
      const auto loss = cross_entropy(logits, std::span<const int>(labels));
      const double value = loss.item();
      loss_ema = loss_ema ? 0.9 * *loss_ema + 0.1 * value : value;
      if (!std::isfinite(value) || !std::isfinite(*loss_ema)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           " (loss " + std::to_string(value) + ", loss EMA " + std::to_string(*loss_ema) +
                           "); lower optim.lr");
      }
      const std::size_t classes = logits.dim(1);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (argmax_row(logits.data(), i, classes) == static_cast<std::size_t>(labels[i])) ++correct;
      }
      loss_sum += value * static_cast<double>(labels.size());
      opt.zero_grad();
      loss.backward();
      opt.step(c.cosine ? cosine_lr(c.lr, step, total_steps) : c.lr);
      ++step;
    }
    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(train.size());
    row.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    row.test_acc = evaluate_accuracy(model, test, c.batch_size);
    row.wall_ms = elapsed_ms(start);
    result.rows.push_back(row);
    if (metrics) metrics->append(row);
    if (row.test_acc > result.best_test_acc) {
      result.best_test_acc = row.test_acc;
      result.best_epoch = epoch;
      if (options.out_dir) save_checkpoint(*options.out_dir / "best.ckpt", params);
    }
    if (options.log) {
      *options.log << "epoch " << epoch << "/" << c.epochs << "  loss " << row.train_loss << "  train_acc "
                   << row.train_acc << "  test_acc " << row.test_acc << "  (" << static_cast<long>(row.wall_ms)
                   << " ms)\n";
    }
  }
  if (options.out_dir) save_checkpoint(*options.out_dir / "final.ckpt", params);
  return result;
}

double eval_checkpoint(const ExperimentConfig& c, const std::filesystem::path& checkpoint, const Dataset& test) {
  Rng root(c.seed);
  Rng init_rng = root.split();
  const auto model = build_model<float>(c, init_rng);
  load_checkpoint(checkpoint, model.params());
  return evaluate_accuracy(model, test, c.batch_size);
}

std::vector<BenchRow> run_bench(const ExperimentConfig& c) {
  std::vector<BenchRow> rows;
  for (const std::size_t patch : c.bench_patches) {
    for (const char* kind : {"dense", "butterfly"}) {
      ExperimentConfig bc = c;
      bc.family = std::string(kind) == "dense" ? "vit" : "butterfly_vit";
      bc.source = "cifar10";
      bc.image_size = 0;
      bc.patch = patch;
      bc.radix = 0;
      Rng rng(c.seed);
      const auto model = build_model<float>(bc, rng);
      auto params = model.params();
      for (auto& p : params) p.tensor.set_requires_grad(true);
      Adam<float> opt(params);
      const auto images = uniform_tensor<float>({c.bench_batch, 3, kCifarSide, kCifarSide}, 1.0, rng);
      std::vector<int> labels(c.bench_batch);
      for (auto& l : labels) l = static_cast<int>(rng.below(10));

      BenchRow row;
      row.patch = patch;
      row.seq_len = (kCifarSide / patch) * (kCifarSide / patch);
      row.attention = kind;
      row.params = model.num_params();
      const auto baseline = allocation_stats().live_bytes;
      reset_peak_allocation();
      const auto start = Clock::now();
      for (std::size_t s = 0; s < c.bench_steps; ++s) {
        opt.zero_grad();
        cross_entropy(model.forward(images), std::span<const int>(labels)).backward();
        opt.step(c.lr);
      }
      row.ms_per_step = elapsed_ms(start) / static_cast<double>(c.bench_steps);
      row.peak_bytes = allocation_stats().peak_bytes - baseline;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace dmx
