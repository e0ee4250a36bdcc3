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

// dmx: train / eval / analyze / bench.
//
// Machine-readable results go to stdout (JSON, or CSV for bench) and, with
// --out, to files in that directory. Human summaries go to stderr.
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dmx/config.hpp"
#include "dmx/cost.hpp"
#include "dmx/model.hpp"
#include "dmx/patch_mixer.hpp"
#include "dmx/train.hpp"

namespace {

using json = nlohmann::ordered_json;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "config file (key = value lines)");
  cmd->add_option("--set", c.overrides, "override a config key: --set key=value (repeatable)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "seed override");
}

dmx::ExperimentConfig resolve(const Common& c) {
  dmx::ExperimentConfig cfg;
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw dmx::ConfigError("cannot open config " + c.config);
    cfg = dmx::parse_config(in, c.config);
  }
  for (const auto& o : c.overrides) dmx::apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  dmx::validate(cfg);
  return cfg;
}

void emit(const Common& c, const std::string& file, const std::string& text) {
  std::cout << text;
  if (!c.out.empty()) {
    std::filesystem::create_directories(c.out);
    std::ofstream(std::filesystem::path(c.out) / file) << text;
  }
}

int cmd_train(const Common& c) {
  const auto cfg = resolve(c);
  const auto [train, test] = dmx::load_experiment_data(cfg);
  std::cerr << "train: " << cfg.family << " on " << cfg.source << " (" << train.size() << " train / " << test.size()
            << " test)\n";
  dmx::TrainOptions options;
  if (!c.out.empty()) options.out_dir = c.out;
  options.log = &std::cerr;
  const auto r = dmx::train_experiment(cfg, train, test, options);
  json j;
  j["family"] = cfg.family;
  j["params"] = r.num_params;
  j["epochs"] = cfg.epochs;
  j["final_train_loss"] = r.rows.empty() ? 0.0 : r.rows.back().train_loss;
  j["final_test_acc"] = r.rows.empty() ? 0.0 : r.rows.back().test_acc;
  j["best_test_acc"] = r.best_test_acc;
  j["best_epoch"] = r.best_epoch;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  const auto cfg = resolve(c);
  const auto test = dmx::load_experiment_data(cfg).second;
  const double acc = dmx::eval_checkpoint(cfg, checkpoint, test);
  std::cerr << "eval: accuracy " << acc << " on " << test.size() << " samples\n";
  json j;
  j["checkpoint"] = checkpoint;
  j["samples"] = test.size();
  j["accuracy"] = acc;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_analyze(const Common& c) {
  const auto cfg = resolve(c);
  const auto schedule = dmx::model_mixing_schedule(cfg);
  const auto graph = dmx::build_mixing_graph(schedule);
  const auto report = dmx::check_complete_mixing(graph);

  dmx::Rng rng(cfg.seed);
  const auto model = dmx::build_model<float>(cfg, rng);
  const auto in = dmx::input_shape(cfg);
  const auto input = dmx::uniform_tensor<float>({1, in[0], in[1], in[2]}, 1.0, rng);
  const auto cost = dmx::cost_report(model, input, 1, [&](const dmx::Tensorf& x) { return model.forward(x); });

  json j;
  j["family"] = cfg.family;
  j["num_dims"] = schedule.num_dims;
  j["stages"] = schedule.stages.size();
  j["complete"] = report.complete;
  j["missing_pairs"] = json::array();
  for (const auto& [i, o] : report.missing_pairs) j["missing_pairs"].push_back({i, o});
  const auto [lo, hi] = std::minmax_element(report.reach_counts.begin(), report.reach_counts.end());
  j["reach_min"] = lo == report.reach_counts.end() ? 0 : *lo;
  j["reach_max"] = hi == report.reach_counts.end() ? 0 : *hi;
  if (report.reach_counts.size() <= 4096) j["reach_counts"] = report.reach_counts;
  if (cfg.family == "patch_only") {
    const dmx::PatchSchedule ps{in[1], cfg.patch_sizes, in[0]};
    j["effective_block"] = ps.effective_block();
    j["max_pairwise_gcd"] = ps.max_pairwise_gcd();
  }
  j["params"] = cost.params;
  j["stored_params"] = cost.stored_params;
  j["params_by_module"] = cost.params_by_module;
  j["macs_per_sample"] = cost.macs;
  j["measured_macs_per_sample"] = cost.measured_macs;
  j["macs_by_tag"] = cost.macs_by_tag;
  j["permutation_passes"] = cost.permutation_passes;

  std::cerr << "analyze: " << cfg.family << ", " << schedule.num_dims << " dims, " << schedule.stages.size()
            << " stages\ncomplete: " << (report.complete ? "true" : "false") << "\nreach per input: " << j["reach_min"]
            << ".." << j["reach_max"] << "\nparams: " << cost.params << "  MACs/sample: " << cost.macs
            << "  permutation passes: " << cost.permutation_passes << "\n";
  if (j.contains("effective_block")) std::cerr << "effective block: " << j["effective_block"] << "\n";
  emit(c, "analyze.json", j.dump(2) + "\n");
  return 0;
}

int cmd_bench(const Common& c) {
  const auto cfg = resolve(c);
  const auto rows = dmx::run_bench(cfg);
  std::ostringstream csv;
  csv << "patch,seq_len,attention,params,ms_per_step,peak_bytes\n";
  for (const auto& r : rows) {
    csv << r.patch << ',' << r.seq_len << ',' << r.attention << ',' << r.params << ',' << r.ms_per_step << ','
        << r.peak_bytes << '\n';
    std::cerr << "bench: S=" << r.seq_len << " " << r.attention << " " << r.ms_per_step << " ms/step\n";
  }
  emit(c, "bench.csv", csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmx: dimension-mixer models, mixing analysis and experiments"};
  app.require_subcommand(1);

  Common train, eval, analyze, bench;
  std::string checkpoint;
  add_common(app.add_subcommand("train", "train a model; writes metrics.csv, final.ckpt, best.ckpt"), train);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  add_common(app.add_subcommand("analyze", "mixing completeness and cost report"), analyze);
  add_common(app.add_subcommand("bench", "dense vs butterfly attention step time and peak memory"), bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(train);
    if (app.got_subcommand("eval")) return cmd_eval(eval, checkpoint);
    if (app.got_subcommand("analyze")) return cmd_analyze(analyze);
    return cmd_bench(bench);
  } catch (const dmx::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dmx::ScheduleError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dmx::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const dmx::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
