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

#ifndef FUSIONDET__HARNESS__TRAIN_HPP_
#define FUSIONDET__HARNESS__TRAIN_HPP_

#include "fusiondet/eval.hpp"
#include "fusiondet/harness/model.hpp"
#include "fusiondet/nn/params.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fusiondet::harness
{

struct StepLoss
{
  double total = 0.0;
  double focal = 0.0;
  double l1 = 0.0;
};

/// Scene visiting order of one epoch, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t num_scenes);

head::LossTerms scene_loss(const Model & model, const Scene & scene);

/// Adam over all parameters, one minibatch of train.batch_size scenes per step.
/// Parameters, optimizer moments and the loss curve round-trip through
/// checkpoint records, so a resumed run continues bit for bit.
class Trainer
{
public:
  Trainer(Model & model, const std::vector<Scene> & scenes);

  /// Throws NumericalError naming the first parameter whose gradient is not finite.
  StepLoss step();
  void run(std::size_t total_steps);

  std::size_t steps_done() const { return curve_.size(); }
  const std::vector<StepLoss> & curve() const { return curve_; }

  std::vector<nn::CheckpointRecord> checkpoint() const;
  void restore(const std::vector<nn::CheckpointRecord> & records);

private:
  Model & model_;
  const std::vector<Scene> & scenes_;
  nn::Adam adam_;
  std::vector<StepLoss> curve_;
};

/// step,total,focal,l1 with one row per step.
std::string curve_csv(const std::vector<StepLoss> & curve);

void save_checkpoint(const std::filesystem::path & path, const Trainer & trainer);
/// Loads parameters only; shape or name mismatches list every offender.
void load_model_checkpoint(const std::filesystem::path & path, Model & model);

std::vector<eval::SceneDetections> detect(const Model & model, const std::vector<Scene> & scenes);
/// Ground truth echoed back as score-1 predictions.
std::vector<eval::SceneDetections> oracle_detections(const std::vector<Scene> & scenes);

eval::MetricsReport evaluate_scenes(
  const RunConfig & cfg, const std::vector<eval::SceneDetections> & dets);
std::string report_json(const RunConfig & cfg, const eval::MetricsReport & report);

struct AblationVariant
{
  std::string name;
  RunConfig config;
};

/// Baseline, each K of ablation.k_values, then the flag toggles that are enabled.
std::vector<AblationVariant> ablation_variants(const RunConfig & cfg);

struct AblationRow
{
  std::string name;
  fusion::FusionConfig fusion;
  double map = 0.0;
  double mean_score = 0.0;
};

std::string ablation_json(const std::vector<AblationRow> & rows);
std::string ablation_table(const std::vector<AblationRow> & rows);

}  // namespace fusiondet::harness

#endif  // FUSIONDET__HARNESS__TRAIN_HPP_
