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

// Experiment configuration: line-based `key = value` text.
//
//   # comment
//   model.family = butterfly_vit
//   model.radix  = 8
//
// Every key is listed in config_keys(); anything else is rejected. Lists are
// comma separated. validate() checks every divisibility constraint the
// models impose and names the one that fails.

#ifndef DMX_CONFIG_HPP
#define DMX_CONFIG_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

namespace dmx {

struct ExperimentConfig {
  // model
  std::string family = "vit";  // mlp | mixer | patch_only | vit | butterfly_vit
  std::size_t depth = 4;       // mlp: butterfly layers (0 = complete depth)
  std::size_t dim = 128;
  std::size_t heads = 8;
  std::size_t expansion = 2;
  std::size_t patch = 4;
  std::vector<std::size_t> patch_sizes{5, 7};
  std::size_t radix = 0;       // mlp: butterfly radix; butterfly_vit: block size (0 = sqrt S)
  std::string mlp = "butterfly";  // mlp family body: dense | butterfly | butterfly_linear
  std::string token_mlp = "dense";
  std::string channel_mlp = "dense";
  std::size_t token_radix = 8;
  std::size_t channel_radix = 8;
  std::size_t groups = 1;
  bool use_wout = true;
  bool residual = true;  // patch_only

  // data
  std::string source = "cifar10";  // cifar10 | cifar100 | permuted_parity | block_sum | tile_class
  std::string data_path;
  std::size_t train_size = 0;  // cifar subset: first train_size/classes per class (0 = all)
  std::size_t test_size = 0;
  std::size_t image_size = 0;  // bilinear resize target (0 = native)
  std::size_t n = 20000;       // synthetic samples, train + test
  std::size_t dims = 64;       // synthetic bits (tile_class: image side)
  std::size_t blocks = 8;
  double test_fraction = 0.2;

  // optimization
  double lr = 1e-3;
  bool cosine = true;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  // bench
  std::size_t bench_steps = 50;
  std::size_t bench_batch = 2;
  std::vector<std::size_t> bench_patches{4, 2, 1};
};

/// Documented keys with a one-line description each.
const std::vector<std::pair<std::string, std::string>>& config_keys();

/// Sets one key from its text value. Throws ConfigError for unknown keys or
/// unparsable values.
void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value);
/// Applies a `key=value` override.
void apply_override(ExperimentConfig& c, const std::string& assignment);

ExperimentConfig parse_config(std::istream& in, const std::string& source_name = "<config>");
/// Parses and validates.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(to_text(c)) == c.
std::string to_text(const ExperimentConfig& c);

/// Throws ConfigError naming the violated constraint.
void validate(const ExperimentConfig& c);

/// [C, H, W] of the model input after loading (and resizing).
std::array<std::size_t, 3> input_shape(const ExperimentConfig& c);
std::size_t num_classes(const ExperimentConfig& c);

}  // namespace dmx

#endif  // DMX_CONFIG_HPP
