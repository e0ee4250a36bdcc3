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

#include "dmx/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dmx/butterfly.hpp"
#include "dmx/error.hpp"

namespace dmx {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) bad_value(key, v, "a finite number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a finite number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

std::string parse_choice(const std::string& key, const std::string& v, std::initializer_list<const char*> choices) {
  std::string all;
  for (const char* c : choices) {
    if (v == c) return v;
    all += all.empty() ? c : std::string(" | ") + c;
  }
  bad_value(key, v, all);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

struct Field {
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define DMX_SIZE(member) \
  [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_size(k, v); }, \
      [](const ExperimentConfig& c) { return std::to_string(c.member); }
#define DMX_DOUBLE(member) \
  [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }, \
      [](const ExperimentConfig& c) { return fmt_double(c.member); }
#define DMX_BOOL(member) \
  [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }, \
      [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }
#define DMX_LIST(member) \
  [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_list(k, v); }, \
      [](const ExperimentConfig& c) { return join(c.member); }
#define DMX_CHOICE(member, ...) \
  [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_choice(k, v, {__VA_ARGS__}); }, \
      [](const ExperimentConfig& c) { return c.member; }
#define DMX_MLP_KIND(member) DMX_CHOICE(member, "dense", "butterfly", "butterfly_linear")

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"model.family", {"mlp | mixer | patch_only | vit | butterfly_vit",
                        DMX_CHOICE(family, "mlp", "mixer", "patch_only", "vit", "butterfly_vit")}},
      {"model.depth", {"layers; for mlp the butterfly layer count (0 = complete depth)", DMX_SIZE(depth)}},
      {"model.dim", {"hidden width (vit token dim, mixer channels)", DMX_SIZE(dim)}},
      {"model.heads", {"attention heads", DMX_SIZE(heads)}},
      {"model.expansion", {"MLP hidden expansion factor", DMX_SIZE(expansion)}},
      {"model.patch", {"patch size for vit / butterfly_vit / mixer", DMX_SIZE(patch)}},
      {"model.patch_sizes", {"patch_only tile sizes, used round-robin by layer", DMX_LIST(patch_sizes)}},
      {"model.radix", {"mlp: butterfly radix; butterfly_vit: block size (0 = sqrt of seq len)", DMX_SIZE(radix)}},
      {"model.mlp", {"mlp family body: dense | butterfly | butterfly_linear", DMX_MLP_KIND(mlp)}},
      {"model.token_mlp", {"mixer token MLP: dense | butterfly | butterfly_linear", DMX_MLP_KIND(token_mlp)}},
      {"model.channel_mlp", {"mixer channel MLP: dense | butterfly | butterfly_linear", DMX_MLP_KIND(channel_mlp)}},
      {"model.token_radix", {"mixer token butterfly radix", DMX_SIZE(token_radix)}},
      {"model.channel_radix", {"mixer channel butterfly radix", DMX_SIZE(channel_radix)}},
      {"model.groups", {"token-parallel attention groups", DMX_SIZE(groups)}},
      {"model.use_wout", {"attention output projection", DMX_BOOL(use_wout)}},
      {"model.residual", {"patch_only residual connections", DMX_BOOL(residual)}},
      {"data.source", {"cifar10 | cifar100 | permuted_parity | block_sum | tile_class",
                       DMX_CHOICE(source, "cifar10", "cifar100", "permuted_parity", "block_sum", "tile_class")}},
      {"data.path", {"CIFAR binary directory",
                     [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data_path = v; },
                     [](const ExperimentConfig& c) { return c.data_path; }}},
      {"data.train_size", {"CIFAR train subset, first train_size/classes per class (0 = all)", DMX_SIZE(train_size)}},
      {"data.test_size", {"CIFAR test subset, first test_size/classes per class (0 = all)", DMX_SIZE(test_size)}},
      {"data.image_size", {"bilinear resize side (0 = native)", DMX_SIZE(image_size)}},
      {"data.n", {"synthetic samples (train + test)", DMX_SIZE(n)}},
      {"data.dims", {"synthetic bit count (tile_class: image side)", DMX_SIZE(dims)}},
      {"data.blocks", {"synthetic block count (one relevant bit per block)", DMX_SIZE(blocks)}},
      {"data.test_fraction", {"synthetic held-out fraction", DMX_DOUBLE(test_fraction)}},
      {"optim.lr", {"Adam learning rate", DMX_DOUBLE(lr)}},
      {"optim.cosine", {"cosine learning-rate decay over all steps", DMX_BOOL(cosine)}},
      {"train.epochs", {"training epochs", DMX_SIZE(epochs)}},
      {"train.batch_size", {"minibatch size", DMX_SIZE(batch_size)}},
      {"seed", {"seed for initialization, data order and synthetic data",
                [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_size(k, v); },
                [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
      {"bench.steps", {"training steps averaged per benchmark row", DMX_SIZE(bench_steps)}},
      {"bench.batch_size", {"benchmark minibatch size", DMX_SIZE(bench_batch)}},
      {"bench.patches", {"patch sizes benchmarked (32x32 images)", DMX_LIST(bench_patches)}},
  };
  return table;
}

#undef DMX_SIZE
#undef DMX_DOUBLE
#undef DMX_BOOL
#undef DMX_LIST
#undef DMX_CHOICE
#undef DMX_MLP_KIND

[[noreturn]] void violated(const std::string& constraint, const std::string& detail) {
  throw ConfigError("constraint violated: " + constraint + " (" + detail + ")");
}

void check_butterfly(const std::string& what, std::size_t n, std::size_t radix) {
  if (radix < 2) violated(what + " radix must be at least 2", "radix = " + std::to_string(radix));
  if (n % radix != 0) {
    violated(what + " radix must divide " + what + " width",
             std::to_string(radix) + " does not divide " + std::to_string(n));
  }
  try {
    make_butterfly_schedule(n, radix);
  } catch (const ScheduleError& e) {
    violated(what + " butterfly schedule must tile its width", e.what());
  }
}

void check_square(const std::array<std::size_t, 3>& in) {
  if (in[1] != in[2]) {
    violated("image models need square inputs", std::to_string(in[1]) + "x" + std::to_string(in[2]));
  }
}

void check_patch(std::size_t side, std::size_t patch) {
  if (patch == 0 || side % patch != 0) {
    violated("model.patch must divide the image side",
             std::to_string(patch) + " does not divide " + std::to_string(side));
  }
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const auto keys = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, f] : fields()) out.emplace_back(k, f.doc);
    return out;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [k, f] : fields()) {
    if (k == key) {
      f.set(c, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_config_value(c, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig parse_config(std::istream& in, const std::string& source_name) {
  ExperimentConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source_name + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source_name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  auto c = parse_config(in, path.string());
  validate(c);
  return c;
}

std::string to_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

std::array<std::size_t, 3> input_shape(const ExperimentConfig& c) {
  if (c.source == "cifar10" || c.source == "cifar100") {
    const std::size_t side = c.image_size ? c.image_size : 32;
    return {3, side, side};
  }
  if (c.source == "tile_class") {
    const std::size_t side = c.image_size ? c.image_size : c.dims;
    return {1, side, side};
  }
  return {1, 1, c.dims};
}

std::size_t num_classes(const ExperimentConfig& c) {
  if (c.source == "cifar10") return 10;
  if (c.source == "cifar100") return 100;
  return 2;
}

void validate(const ExperimentConfig& c) {
  if (c.batch_size == 0) violated("train.batch_size must be positive", "0");
  if (c.lr < 0) violated("optim.lr must be non-negative", fmt_double(c.lr));
  if (c.test_fraction < 0 || c.test_fraction >= 1) {
    violated("data.test_fraction must lie in [0, 1)", fmt_double(c.test_fraction));
  }
  if (c.bench_steps == 0 || c.bench_batch == 0) violated("bench.steps and bench.batch_size must be positive", "0");

  if (c.source == "permuted_parity" || c.source == "block_sum") {
    if (c.dims == 0 || c.blocks == 0 || c.dims % c.blocks != 0) {
      violated("data.blocks must divide data.dims", std::to_string(c.blocks) + " vs " + std::to_string(c.dims));
    }
    if (c.image_size != 0) violated("data.image_size applies to image sources only", std::to_string(c.image_size));
  }
  if (c.source == "tile_class" && c.dims < 2) violated("tile_class side (data.dims) must be at least 2", "");

  const auto in = input_shape(c);
  if (c.family == "mlp") {
    const std::size_t width = in[0] * in[1] * in[2];
    if (c.mlp != "dense") {
      check_butterfly("input", width, c.radix);
      if (c.mlp == "butterfly_linear" && c.expansion != 1) {
        violated("butterfly_linear MLPs need model.expansion = 1", std::to_string(c.expansion));
      }
    }
    if (c.expansion == 0) violated("model.expansion must be positive", "0");
    return;
  }

  check_square(in);
  if (c.depth == 0) violated("model.depth must be positive for " + c.family, "0");
  if (c.expansion == 0) violated("model.expansion must be positive", "0");

  if (c.family == "patch_only") {
    if (c.patch_sizes.empty()) violated("model.patch_sizes must be non-empty", "");
    for (auto k : c.patch_sizes) {
      if (k == 0 || in[1] % k != 0) {
        violated("every model.patch_sizes entry must divide the image side",
                 std::to_string(k) + " does not divide " + std::to_string(in[1]));
      }
    }
    return;
  }

  check_patch(in[1], c.patch);
  const std::size_t tokens = (in[1] / c.patch) * (in[1] / c.patch);
  if (c.dim == 0) violated("model.dim must be positive", "0");

  if (c.family == "mixer") {
    if (c.token_mlp != "dense") check_butterfly("token", tokens, c.token_radix);
    if (c.channel_mlp != "dense") check_butterfly("channel", c.dim, c.channel_radix);
    if ((c.token_mlp == "butterfly_linear" || c.channel_mlp == "butterfly_linear") && c.expansion != 1) {
      violated("butterfly_linear MLPs need model.expansion = 1", std::to_string(c.expansion));
    }
    return;
  }

  // vit / butterfly_vit
  if (c.heads == 0 || c.dim % c.heads != 0) {
    violated("model.heads must divide model.dim", std::to_string(c.heads) + " vs " + std::to_string(c.dim));
  }
  if (c.groups == 0 || c.heads % c.groups != 0) {
    violated("model.groups must divide model.heads", std::to_string(c.groups) + " vs " + std::to_string(c.heads));
  }
  if (!c.use_wout && c.heads / c.groups != 1) {
    violated("model.use_wout = false needs one head per group", std::to_string(c.heads / c.groups) + " heads");
  }
  if (c.family == "butterfly_vit") {
    std::size_t a = c.radix;
    if (a == 0) {
      a = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
      if (a * a != tokens) {
        violated("sequence length must be a perfect square when model.radix = 0", std::to_string(tokens));
      }
    }
    check_butterfly("sequence", tokens, a);
  }
}

}  // namespace dmx
