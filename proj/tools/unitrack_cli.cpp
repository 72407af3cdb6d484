/* Copyright 2026 The UniTrack Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// unitrack command-line tool: simulate, track, eval, train-toy, selftest.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unitrack/harness/config.hpp"
#include "unitrack/harness/pipeline.hpp"
#include "unitrack/harness/selftest.hpp"
#include "unitrack/harness/sequence.hpp"
#include "unitrack/harness/trainer.hpp"
#include "unitrack/model.hpp"

namespace {

namespace fs = std::filesystem;
using namespace unitrack;

harness::KeyValues load_config(const std::string& path) {
  return path.empty() ? harness::KeyValues{} : harness::KeyValues::load(path);
}

void write_trace(const std::string& path, const std::vector<harness::TraceEntry>& trace) {
  std::string out = "stage,step,loss,corr,det\n";
  char buf[160];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g,%.17g\n", e.stage, e.step, e.loss, e.corr, e.det);
    out += buf;
  }
  harness::detail::write_file(path, out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unitrack: unified SOT/MOT/VOS/MOTS tracking toolkit"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "Suppress timestamps in output files");

  std::string spec_path, out_dir;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic sequence directory from a spec file");
  simulate->add_option("--spec", spec_path, "Sequence spec (key=value)")->required();
  simulate->add_option("--out", out_dir, "Output sequence directory")->required();

  std::string task_name, seq_dir, weights_path, config_path;
  std::optional<long> target;
  auto* track = app.add_subcommand("track", "Run a tracker over a sequence directory");
  track->add_option("--task", task_name, "sot, mot, vos or mots")->required()->check(CLI::IsMember({"sot", "mot", "vos", "mots"}));
  track->add_option("--seq", seq_dir, "Sequence directory")->required();
  track->add_option("--weights", weights_path, "Weight file")->required();
  track->add_option("--out", out_dir, "Result directory")->required();
  track->add_option("--config", config_path, "Tracker config (key=value)");
  track->add_option("--target", target, "Ground-truth id to follow (sot/vos); default lowest id on frame 1");

  std::string results_dir;
  auto* evalc = app.add_subcommand("eval", "Score tracker results against ground truth");
  evalc->add_option("--task", task_name, "sot, mot, vos or mots")->required()->check(CLI::IsMember({"sot", "mot", "vos", "mots"}));
  evalc->add_option("--results", results_dir, "Result directory written by track")->required();
  evalc->add_option("--seq", seq_dir, "Sequence directory with ground truth")->required();
  evalc->add_option("--out", out_dir, "Report directory (metrics.txt, metrics.json)")->required();

  std::vector<std::string> train_specs;
  std::string trace_path;
  std::optional<std::size_t> steps1, steps2;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  auto* train = app.add_subcommand("train-toy", "Train toy weights on synthetic sequences");
  train->add_option("--spec", train_specs, "Training sequence spec files; defaults to a seeded set");
  train->add_option("--config", config_path, "Training config (key=value)");
  train->add_option("--out", weights_path, "Output weight file")->required();
  train->add_option("--trace", trace_path, "Loss trace CSV");
  train->add_option("--stage1-steps", steps1, "Override stage-1 steps");
  train->add_option("--stage2-steps", steps2, "Override stage-2 steps");
  train->add_option("--seed", seed, "Override seed");
  train->add_option("--lr", lr, "Override stage-1 learning rate");

  auto* selftest = app.add_subcommand("selftest", "Run the built-in invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*simulate) {
      const auto spec = harness::load_sequence_spec(spec_path);
      harness::write_sequence(out_dir, harness::generate_sequence(spec));
      std::cout << "wrote " << spec.frames << " frames to " << out_dir << "\n";
    } else if (*track) {
      const auto task = corr::task_from_string(task_name);
      const auto cfg = harness::tracker_config(load_config(config_path));
      auto model = std::make_shared<const Model>(load_model(weights_path));
      harness::run_track(task, harness::read_sequence(seq_dir), model, cfg, out_dir, target);
      std::cout << "wrote results to " << out_dir << "\n";
    } else if (*evalc) {
      const auto task = corr::task_from_string(task_name);
      const auto report = harness::run_eval(task, results_dir, harness::read_sequence(seq_dir));
      harness::write_report(report, out_dir, deterministic);
      std::cout << report.to_text();
    } else if (*train) {
      auto cfg = harness::train_config(load_config(config_path));
      if (steps1) cfg.stage1_steps = *steps1;
      if (steps2) cfg.stage2_steps = *steps2;
      if (seed) cfg.seed = *seed;
      if (lr) cfg.lr = *lr;
      std::vector<harness::SequenceSpec> specs;
      for (const auto& p : train_specs) specs.push_back(harness::load_sequence_spec(p));
      if (specs.empty()) specs = harness::default_training_specs(cfg.seed);
      std::vector<harness::SyntheticSequence> seqs;
      for (const auto& s : specs) seqs.push_back(harness::generate_sequence(s));
      harness::TrainResult result;
      try {
        result = harness::train_toy(seqs, cfg);
      } catch (const harness::TrainingDiverged& e) {
        if (!trace_path.empty()) write_trace(trace_path, e.trace());
        throw;
      }
      nlohmann::json meta{{"seed", cfg.seed},
                          {"stage1_steps", cfg.stage1_steps},
                          {"stage2_steps", cfg.stage2_steps},
                          {"lr", cfg.lr},
                          {"mask_lr", cfg.mask_lr},
                          {"mask_loss_before", result.mask_loss_before},
                          {"mask_loss_after", result.mask_loss_after}};
      if (!deterministic) meta["created"] = harness::utc_timestamp();
      save_model(weights_path, result.model, meta);
      if (!trace_path.empty()) write_trace(trace_path, result.trace);
      std::printf("stage1 loss %.6f -> %.6f\n", result.first_loss(1), result.last_loss(1));
      if (cfg.stage2_steps > 0)
        std::printf("stage2 loss %.6f -> %.6f (whole pool %.6f -> %.6f)\n", result.first_loss(2), result.last_loss(2),
                    result.mask_loss_before, result.mask_loss_after);
    } else if (*selftest) {
      bool ok = true;
      for (const auto& r : harness::run_selftest()) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << (r.detail.empty() ? "" : ": " + r.detail) << "\n";
        ok = ok && r.pass;
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
