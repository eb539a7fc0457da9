// Copyright 2026 The fusiondet Authors
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

// fusiondet command line: data generation, training, evaluation, ablation and
// the built-in check suites. Exit codes: 0 ok, 1 invalid input, 2 non-finite
// numerics, 3 a check failed.

#include <CLI11.hpp>

#include "suites.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/harness/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace fusiondet;
using namespace fusiondet::harness;

namespace
{

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitCheckFailed = 3;

void write_text(const fs::path & path, const std::string & text)
{
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot write " + path.string());
  }
  out << text;
}

RunConfig config_from(const std::string & path)
{
  return path.empty() ? default_config() : load_config(path);
}

std::vector<Scene> load_scenes(const std::string & dir)
{
  std::vector<Scene> scenes = read_dataset(dir);
  if (scenes.empty()) {
    throw ValidationError("no scene files in " + dir);
  }
  return scenes;
}

// Variant names like "k=3" become file-name-safe stems like "k_3".
std::string file_stem(const std::string & name)
{
  std::string out;
  for (char c : name) {
    const bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    out.push_back(safe ? c : '_');
  }
  return out;
}

double mean_top_score(const std::vector<eval::SceneDetections> & dets)
{
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto & d : dets) {
    for (const auto & p : d.predictions) {
      sum += p.score;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

struct TrainOutcome
{
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::size_t steps = 0;
};

TrainOutcome train_model(
  Model & model, const std::vector<Scene> & scenes, std::size_t steps, const std::string & resume,
  const fs::path & ckpt, const std::string & curve_path)
{
  Trainer trainer(model, scenes);
  if (!resume.empty()) {
    trainer.restore(nn::read_checkpoint(resume));
  }
  trainer.run(steps);
  if (ckpt.has_parent_path()) {
    fs::create_directories(ckpt.parent_path());
  }
  save_checkpoint(ckpt, trainer);
  if (!curve_path.empty()) {
    write_text(curve_path, curve_csv(trainer.curve()));
  }
  TrainOutcome o;
  o.steps = trainer.steps_done();
  if (!trainer.curve().empty()) {
    o.first_loss = trainer.curve().front().total;
    o.last_loss = trainer.curve().back().total;
  }
  return o;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"fusiondet: LiDAR-camera fusion detector at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  std::string data_dir;
  std::string out_path;
  std::string ckpt_path;
  std::string report_path;
  std::string resume_path;
  std::string curve_path;
  std::string ckpt_dir;
  std::string op_name;
  std::optional<std::size_t> steps;
  int seeds = suites::kGradSeeds;
  bool oracle = false;
  bool train_variants = false;

  auto * gen = app.add_subcommand("gen", "Generate the synthetic dataset");
  gen->add_option("--config", config_path, "Config file (defaults when omitted)");
  gen->add_option("--out", out_path, "Output directory")->required();

  auto * train = app.add_subcommand("train", "Train on a generated dataset");
  train->add_option("--config", config_path, "Config file");
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", out_path, "Checkpoint to write")->required();
  train->add_option("--steps", steps, "Total steps (overrides train.steps)");
  train->add_option("--resume", resume_path, "Checkpoint to continue from");
  train->add_option("--curve", curve_path, "Write the per-step loss curve as CSV");

  auto * evaluate = app.add_subcommand("eval", "Evaluate a checkpoint");
  evaluate->add_option("--config", config_path, "Config file");
  evaluate->add_option("--data", data_dir, "Dataset directory")->required();
  auto * ckpt_opt = evaluate->add_option("--ckpt", ckpt_path, "Checkpoint");
  evaluate->add_flag("--oracle", oracle, "Score ground truth as predictions")->excludes(ckpt_opt);
  evaluate->add_option("--report", report_path, "Report file (JSON)")->required();

  auto * ablate = app.add_subcommand("ablate", "Evaluate every ablation variant");
  ablate->add_option("--config", config_path, "Config file");
  ablate->add_option("--data", data_dir, "Dataset directory")->required();
  ablate->add_option("--ckpt-dir", ckpt_dir, "Directory of per-variant checkpoints")->required();
  ablate->add_flag("--train", train_variants, "Train each variant first (same seed and steps)");
  ablate->add_option("--steps", steps, "Training steps per variant with --train");
  ablate->add_option("--out", out_path, "Write rows as JSON");

  auto * gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--op", op_name, "Single op to check");
  gradcheck->add_option("--seeds", seeds, "Random instances per op")->check(CLI::PositiveNumber);

  auto * selftest = app.add_subcommand("selftest", "Run every oracle and property suite");
  selftest->add_option("--out", out_path, "Also write the result lines to a file");

  auto * defaults = app.add_subcommand("defaults", "Print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp & e) {
    return app.exit(e);
  } catch (const CLI::ParseError & e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*defaults) {
      std::cout << serialize_config(default_config());
      return kExitOk;
    }
    if (*gen) {
      const RunConfig cfg = config_from(config_path);
      std::vector<Scene> scenes;
      for (std::size_t i = 0; i < cfg.dataset.num_scenes; ++i) {
        scenes.push_back(dataset_scene(cfg, i));
      }
      fs::create_directories(out_path);
      write_dataset(out_path, scenes);
      std::size_t boxes = 0;
      for (const auto & s : scenes) {
        boxes += s.boxes.size();
      }
      std::cout << "wrote " << scenes.size() << " scenes (" << boxes << " boxes) to " << out_path << "\n";
      return kExitOk;
    }
    if (*train) {
      const RunConfig cfg = config_from(config_path);
      const std::vector<Scene> scenes = load_scenes(data_dir);
      Model model(cfg);
      const TrainOutcome o =
        train_model(model, scenes, steps.value_or(cfg.train.steps), resume_path, out_path, curve_path);
      char line[160];
      std::snprintf(
        line, sizeof(line), "trained %zu steps: loss %.6f -> %.6f\n", o.steps, o.first_loss, o.last_loss);
      std::cout << line;
      return kExitOk;
    }
    if (*evaluate) {
      const RunConfig cfg = config_from(config_path);
      const std::vector<Scene> scenes = load_scenes(data_dir);
      std::vector<eval::SceneDetections> dets;
      if (oracle) {
        dets = oracle_detections(scenes);
      } else {
        if (ckpt_path.empty()) {
          throw ValidationError("eval needs --ckpt or --oracle");
        }
        Model model(cfg);
        load_model_checkpoint(ckpt_path, model);
        dets = detect(model, scenes);
      }
      const eval::MetricsReport report = evaluate_scenes(cfg, dets);
      write_text(report_path, report_json(cfg, report));
      char line[64];
      std::snprintf(line, sizeof(line), "mAP %.6f\n", report.map);
      std::cout << line;
      return kExitOk;
    }
    if (*ablate) {
      const RunConfig cfg = config_from(config_path);
      const std::vector<Scene> scenes = load_scenes(data_dir);
      std::vector<AblationRow> rows;
      for (const auto & variant : ablation_variants(cfg)) {
        const fs::path ckpt = fs::path(ckpt_dir) / (file_stem(variant.name) + ".ckpt");
        Model model(variant.config);
        if (train_variants) {
          train_model(model, scenes, steps.value_or(variant.config.train.steps), "", ckpt, "");
        } else if (!fs::exists(ckpt)) {
          throw ValidationError("missing checkpoint for variant " + variant.name + ": " + ckpt.string());
        } else {
          load_model_checkpoint(ckpt, model);
        }
        const auto dets = detect(model, scenes);
        rows.push_back({variant.name, variant.config.fusion, evaluate_scenes(variant.config, dets).map,
                        mean_top_score(dets)});
      }
      std::cout << ablation_table(rows);
      if (!out_path.empty()) {
        write_text(out_path, ablation_json(rows));
      }
      return kExitOk;
    }
    if (*gradcheck) {
      const auto results = suites::grad_suite(op_name, seeds);
      std::cout << suites::format_results(results);
      return suites::all_passed(results) ? kExitOk : kExitCheckFailed;
    }
    if (*selftest) {
      const auto results = suites::all_suites();
      const std::string text = suites::format_results(results);
      std::cout << text;
      if (!out_path.empty()) {
        write_text(out_path, text);
      }
      return suites::all_passed(results) ? kExitOk : kExitCheckFailed;
    }
  } catch (const NumericalError & e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ValidationError & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
