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

// Training, evaluation and benchmarking. Experiments run at float precision.

#ifndef DMX_TRAIN_HPP
#define DMX_TRAIN_HPP

#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "dmx/checkpoint.hpp"
#include "dmx/config.hpp"
#include "dmx/data.hpp"
#include "dmx/model.hpp"

namespace dmx {

/// Adam with bias correction; the learning rate is supplied per step.
template <typename S>
class Adam {
 public:
  explicit Adam(ParamList<S> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].tensor;
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto w = p.data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
        w[i] = static_cast<S>(w[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
      }
    }
  }

 private:
  ParamList<S> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// base * (1 + cos(pi * step / total)) / 2.
inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

/// Train and test sets for the configured source (subset and resize applied).
std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& c);

/// Images of the given samples, [indices.size(), C, H, W].
Tensorf gather_images(const Dataset& d, const std::vector<std::size_t>& indices, std::size_t begin, std::size_t end);

/// Fraction of correctly classified samples, evaluated in batches.
double evaluate_accuracy(const Model<float>& model, const Dataset& d, std::size_t batch_size);

struct TrainResult {
  std::vector<MetricsRow> rows;
  double best_test_acc = 0;
  std::size_t best_epoch = 0;
  std::size_t num_params = 0;
};

struct TrainOptions {
  /// When set: metrics.csv, config.txt, final.ckpt and best.ckpt go here.
  std::optional<std::filesystem::path> out_dir;
  std::ostream* log = nullptr;  // per-epoch human summary
};

/// Adam with optional cosine decay over all steps; a non-finite loss (or a
/// loss EMA that becomes non-finite) raises NumericError.
TrainResult train_experiment(const ExperimentConfig& c, const Dataset& train, const Dataset& test,
                             const TrainOptions& options = {});

/// Evaluates `checkpoint` with the model described by `c`.
double eval_checkpoint(const ExperimentConfig& c, const std::filesystem::path& checkpoint, const Dataset& test);

struct BenchRow {
  std::size_t patch = 0;
  std::size_t seq_len = 0;
  std::string attention;  // dense | butterfly
  std::size_t params = 0;
  double ms_per_step = 0;
  std::int64_t peak_bytes = 0;
};

/// For each bench patch size: a dense and a butterfly ViT (32x32x3 inputs,
/// the config's width/depth/heads) trained for bench.steps steps on random
/// data. Peak bytes are live tensor storage above the pre-step baseline.
std::vector<BenchRow> run_bench(const ExperimentConfig& c);

}  // namespace dmx

#endif  // DMX_TRAIN_HPP
