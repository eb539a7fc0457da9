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

#ifndef FUSIONDET__EVAL_HPP_
#define FUSIONDET__EVAL_HPP_

#include "fusiondet/box.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fusiondet::eval
{

inline constexpr std::array<double, 4> kThresholds = {0.5, 1.0, 2.0, 4.0};

/// Predictions and ground truth of one scene, all classes mixed.
struct SceneDetections
{
  std::vector<Box3D> predictions;
  std::vector<Box3D> ground_truth;
};

/// Outcome of each prediction of one class after greedy matching, in rank order.
struct RankedMatch
{
  std::size_t scene = 0;
  std::size_t index = 0;  // position in SceneDetections::predictions
  double score = 0.0;
  bool true_positive = false;
};

/// Sorts the class's predictions by descending score (ties by scene, then by
/// index) and greedily matches each to the nearest unmatched gt of the same
/// scene whose BEV center distance is <= threshold.
std::vector<RankedMatch> rank_and_match(
  std::span<const SceneDetections> scenes, int class_id, double threshold);

/// nullopt when the class has no ground truth.
std::optional<double> ap_at_threshold(
  std::span<const SceneDetections> scenes, int class_id, double threshold);

/// Area under the precision/recall points with precision made non-increasing
/// from the right; the curve starts at recall 0 with the first precision.
double average_precision(std::span<const RankedMatch> ranked, std::size_t num_gt);

struct ClassMetrics
{
  int class_id = 0;
  std::size_t num_gt = 0;
  std::size_t num_predictions = 0;
  std::array<std::optional<double>, kThresholds.size()> ap{};
  std::optional<double> mean_ap;
};

struct MetricsReport
{
  std::vector<ClassMetrics> classes;
  double map = 0.0;
};

/// Per-class, per-threshold AP and their mean over classes with ground truth.
/// Throws ValidationError when no listed class has ground truth.
MetricsReport evaluate(std::span<const SceneDetections> scenes, std::span<const int> class_ids);

double map_score(std::span<const SceneDetections> scenes, std::span<const int> class_ids);

}  // namespace fusiondet::eval

#endif  // FUSIONDET__EVAL_HPP_
