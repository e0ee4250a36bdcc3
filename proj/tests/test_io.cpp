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

// Config, checkpoint, metrics and the training loop.

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "dmx/train.hpp"
#include "test_util.hpp"

using namespace dmx;
using dmx::testing::TempDir;

namespace {

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> file_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

std::string strip_wall(const std::string& line) { return line.substr(0, line.rfind(',')); }

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

ExperimentConfig tiny_parity() {
  ExperimentConfig c;
  c.family = "mlp";
  c.mlp = "butterfly";
  c.radix = 4;
  c.expansion = 2;
  c.depth = 0;
  c.source = "block_sum";
  c.n = 300;
  c.dims = 16;
  c.blocks = 4;
  c.epochs = 3;
  c.batch_size = 32;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config text parses, round-trips and rejects unknown keys") {
  std::istringstream text(R"(# comment
model.family = butterfly_vit   # trailing comment
model.radix=8
model.patch_sizes = 6, 8
optim.cosine = false
optim.lr = 0.0005

seed = 42
)");
  const auto c = parse_config(text);
  CHECK(c.family == "butterfly_vit");
  CHECK(c.radix == 8);
  CHECK(c.patch_sizes == std::vector<std::size_t>{6, 8});
  CHECK_FALSE(c.cosine);
  CHECK(c.lr == 0.0005);
  CHECK(c.seed == 42);

  std::istringstream again(to_text(c));
  CHECK(to_text(parse_config(again)) == to_text(c));
  CHECK(to_text(ExperimentConfig{}).find("model.family = vit") != std::string::npos);
  const auto text_form = to_text(c);
  CHECK(config_keys().size() == static_cast<std::size_t>(std::count(text_form.begin(), text_form.end(), '\n')));

  std::istringstream unknown("model.famly = vit\n");
  const auto msg = message_of([&] { parse_config(unknown, "x.cfg"); });
  CHECK(msg.find("unknown config key 'model.famly'") != std::string::npos);
  CHECK(msg.find("x.cfg:1") != std::string::npos);
  std::istringstream malformed("model.depth 4\n");
  CHECK_THROWS_AS(parse_config(malformed), ConfigError);
  std::istringstream bad_int("model.depth = four\n");
  CHECK_THROWS_AS(parse_config(bad_int), ConfigError);
  std::istringstream bad_choice("model.family = cnn\n");
  CHECK_THROWS_AS(parse_config(bad_choice), ConfigError);

  ExperimentConfig o;
  apply_override(o, "train.epochs=7");
  apply_override(o, " model.use_wout = false ");
  CHECK(o.epochs == 7);
  CHECK_FALSE(o.use_wout);
  CHECK_THROWS_AS(apply_override(o, "train.epochs"), ConfigError);
  CHECK_THROWS_AS(apply_override(o, "nope=1"), ConfigError);
}

TEST_CASE("validation names the violated constraint") {
  ExperimentConfig c = tiny_parity();
  c.radix = 3;  // 16 inputs
  const auto msg = message_of([&] { validate(c); });
  CHECK(msg.find("radix must divide input width") != std::string::npos);

  ExperimentConfig v;
  v.family = "butterfly_vit";
  v.radix = 3;  // 64 tokens
  CHECK(message_of([&] { validate(v); }).find("radix must divide sequence width") != std::string::npos);
  v.radix = 0;
  v.patch = 2;  // 256 tokens: sqrt = 16, fine
  CHECK_NOTHROW(validate(v));
  v.patch = 8;  // 16 tokens
  CHECK_NOTHROW(validate(v));
  v.heads = 3;
  CHECK(message_of([&] { validate(v); }).find("model.heads must divide model.dim") != std::string::npos);

  ExperimentConfig p;
  p.family = "patch_only";
  p.patch_sizes = {5, 7};
  CHECK(message_of([&] { validate(p); }).find("patch_sizes entry must divide") != std::string::npos);
  p.image_size = 35;
  CHECK_NOTHROW(validate(p));

  ExperimentConfig m;
  m.family = "mixer";
  m.dim = 121;
  m.channel_mlp = "butterfly";
  m.channel_radix = 8;
  CHECK(message_of([&] { validate(m); }).find("channel radix must divide channel width") != std::string::npos);
  m.channel_radix = 11;
  CHECK_NOTHROW(validate(m));

  ExperimentConfig g;
  g.groups = 3;
  CHECK(message_of([&] { validate(g); }).find("model.groups must divide model.heads") != std::string::npos);
  g.groups = 2;
  g.use_wout = false;
  CHECK(message_of([&] { validate(g); }).find("one head per group") != std::string::npos);
}

TEST_CASE("checkpoint byte layout matches the documented example") {
  TempDir dir;
  ParamList<float> params{{"w", Tensorf({2}, {1.0f, 2.0f})}};
  save_checkpoint(dir / "w.ckpt", params);
  const std::vector<unsigned char> expect = {
      'D', 'M', 'X', 'C', 'K', 'P', 'T', 0,  // magic
      1, 0, 0, 0,                            // version
      4, 0, 0, 0,                            // scalar bytes
      1, 0, 0, 0,                            // count
      1, 0, 0, 0, 'w',                       // name
      1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0,    // rank, extents
      0, 0, 0x80, 0x3f, 0, 0, 0, 0x40};      // 1.0f, 2.0f
  const auto got = file_bytes(dir / "w.ckpt");
  REQUIRE(got.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(static_cast<unsigned char>(got[i]) == expect[i]);
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
  TempDir dir;
  Rng rng(1);
  auto c = tiny_parity();
  const auto model = build_model<float>(c, rng);
  auto params = model.params();
  // Awkward values survive too.
  Tensorf probe = params[0].tensor;
  probe[0] = std::numeric_limits<float>::denorm_min();
  probe[1] = -0.0f;
  probe[2] = std::numeric_limits<float>::quiet_NaN();
  save_checkpoint(dir / "a.ckpt", params);

  Rng other(99);
  const auto fresh = build_model<float>(c, other);
  load_checkpoint(dir / "a.ckpt", fresh.params());
  save_checkpoint(dir / "b.ckpt", fresh.params());
  CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));
  const auto back = read_checkpoint<float>(dir / "a.ckpt");
  REQUIRE(back.size() == params.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK(back[k].name == params[k].name);
    CHECK(std::memcmp(back[k].tensor.data().data(), params[k].tensor.data().data(),
                      params[k].tensor.numel() * sizeof(float)) == 0);
  }

  ParamList<double> wide{{"x", Tensord({1}, {0.1})}};
  save_checkpoint(dir / "d.ckpt", wide);
  CHECK(read_checkpoint<double>(dir / "d.ckpt")[0].tensor[0] == 0.1);
  CHECK_THROWS_AS(read_checkpoint<float>(dir / "d.ckpt"), FormatError);  // scalar width
}

TEST_CASE("corrupt and mismatched checkpoints") {
  TempDir dir;
  ParamList<float> params{{"w", Tensorf({3}, 1.0f)}};
  save_checkpoint(dir / "ok.ckpt", params);
  auto bytes = file_bytes(dir / "ok.ckpt");

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  std::ofstream(dir / "magic.ckpt", std::ios::binary).write(bad_magic.data(), static_cast<std::streamsize>(bad_magic.size()));
  CHECK(message_of([&] { read_checkpoint<float>(dir / "magic.ckpt"); }).find("bad magic") != std::string::npos);

  auto bad_version = bytes;
  bad_version[8] = 2;
  std::ofstream(dir / "version.ckpt", std::ios::binary)
      .write(bad_version.data(), static_cast<std::streamsize>(bad_version.size()));
  CHECK(message_of([&] { read_checkpoint<float>(dir / "version.ckpt"); }).find("version 2") != std::string::npos);

  std::ofstream(dir / "short.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 2));
  CHECK_THROWS_AS(read_checkpoint<float>(dir / "short.ckpt"), FormatError);
  CHECK_THROWS_AS(read_checkpoint<float>(dir / "absent.ckpt"), IoError);

  ParamList<float> wrong_shape{{"w", Tensorf({4}, 0.0f)}};
  CHECK(message_of([&] { load_checkpoint(dir / "ok.ckpt", wrong_shape); }).find("tensor 'w' has shape") !=
        std::string::npos);
  ParamList<float> wrong_name{{"v", Tensorf({3}, 0.0f)}};
  CHECK(message_of([&] { load_checkpoint(dir / "ok.ckpt", wrong_name); }).find("'v' is not in checkpoint") !=
        std::string::npos);
  ParamList<float> extra{{"w", Tensorf({3}, 0.0f)}, {"b", Tensorf({1}, 0.0f)}};
  CHECK_THROWS_AS(load_checkpoint(dir / "ok.ckpt", extra), ConfigError);
}

TEST_CASE("Adam and cosine schedule follow their closed forms") {
  CHECK(cosine_lr(1.0, 0, 10) == 1.0);
  CHECK(cosine_lr(1.0, 5, 10) == doctest::Approx(0.5));
  CHECK(cosine_lr(1.0, 10, 10) == doctest::Approx(0.0));

  // f(w) = sum(w^2)/2: grad = w. After one step every coordinate moves by
  // -lr * sign(w) (bias-corrected m/sqrt(v) = g/|g|).
  Tensord w({3}, {1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  Adam<double> opt({{"w", w}});
  sum(mul(w, w)).backward();
  opt.step(0.1);
  CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(w[2] == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("training writes metrics and checkpoints, deterministically") {
  TempDir a, b;
  const auto c = tiny_parity();
  const auto [train, test] = load_experiment_data(c);
  TrainOptions oa;
  oa.out_dir = a.path();
  const auto ra = train_experiment(c, train, test, oa);
  TrainOptions ob;
  ob.out_dir = b.path();
  train_experiment(c, train, test, ob);

  const auto la = file_lines(a / "metrics.csv"), lb = file_lines(b / "metrics.csv");
  REQUIRE(la.size() == 4);  // header + 3 epochs
  CHECK(la[0] == kMetricsHeader);
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(strip_wall(la[i]) == strip_wall(lb[i]));
  CHECK(file_bytes(a / "final.ckpt") == file_bytes(b / "final.ckpt"));
  CHECK(std::filesystem::exists(a / "best.ckpt"));
  CHECK(std::filesystem::exists(a / "config.txt"));

  // eval runs the same code path as the end-of-epoch evaluation.
  CHECK(eval_checkpoint(c, a / "final.ckpt", test) == ra.rows.back().test_acc);

  auto other = c;
  other.seed = 6;
  const auto [t2, s2] = load_experiment_data(other);
  const auto rc = train_experiment(other, t2, s2);
  CHECK(rc.rows.back().train_loss != ra.rows.back().train_loss);
}

TEST_CASE("lr = 0 leaves the parameters and the loss unchanged") {
  TempDir dir;
  auto c = tiny_parity();
  c.lr = 0;
  const auto [train, test] = load_experiment_data(c);
  TrainOptions o;
  o.out_dir = dir.path();
  const auto r = train_experiment(c, train, test, o);
  for (const auto& row : r.rows) CHECK(row.train_loss == doctest::Approx(r.rows.front().train_loss).epsilon(1e-5));
  // Initial parameters come from the same seed split as training.
  Rng root(c.seed);
  Rng init = root.split();
  const auto initial = build_model<float>(c, init);
  const auto stored = read_checkpoint<float>(dir / "final.ckpt");
  const auto p0 = initial.params();
  for (std::size_t k = 0; k < p0.size(); ++k)
    CHECK(std::equal(p0[k].tensor.data().begin(), p0[k].tensor.data().end(), stored[k].tensor.data().begin()));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto c = tiny_parity();
  auto [train, test] = load_experiment_data(c);
  train.images[5] = std::numeric_limits<float>::quiet_NaN();
  const auto msg = message_of([&] { train_experiment(c, train, test); });
  CHECK(msg.find("non-finite loss at epoch 1") != std::string::npos);
  CHECK_THROWS_AS(train_experiment(c, train, test), NumericError);

  auto mismatched = c;
  mismatched.dims = 32;
  CHECK_THROWS_AS(train_experiment(mismatched, load_experiment_data(c).first, test), DataError);
}

TEST_CASE("random-init model on a 10-class task is at chance") {
  TempDir dir;
  Rng rng(12);
  std::vector<unsigned char> bytes;
  for (int i = 0; i < 3000; ++i) {
    bytes.push_back(static_cast<unsigned char>(rng.below(10)));
    for (int p = 0; p < 3072; ++p) bytes.push_back(static_cast<unsigned char>(rng.below(256)));
  }
  std::ofstream(dir / "test_batch.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  Dataset test = parse_cifar_file(dir / "test_batch.bin", 1, 10);

  ExperimentConfig c;
  c.family = "vit";
  c.dim = 32;
  c.heads = 4;
  c.depth = 1;
  c.batch_size = 256;
  Rng init(3);
  const auto model = build_model<float>(c, init);
  const double acc = evaluate_accuracy(model, test, c.batch_size);
  CHECK(acc == doctest::Approx(0.10).epsilon(0.3));  // 0.10 +- 0.03
}
