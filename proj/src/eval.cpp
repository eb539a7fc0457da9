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

#include "fusiondet/eval.hpp"

#include "fusiondet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fusiondet::eval
{

namespace
{

double bev_distance(const Box3D & a, const Box3D & b)
{
  return std::hypot(a.center.x() - b.center.x(), a.center.y() - b.center.y());
}

void check_box(const Box3D & b)
{
  if (!b.center.allFinite() || !std::isfinite(b.score)) {
    throw ValidationError("eval: non-finite box center or score");
  }
}

}  // namespace

std::vector<RankedMatch> rank_and_match(
  std::span<const SceneDetections> scenes, int class_id, double threshold)
{
  if (!(threshold >= 0.0)) {
    throw ValidationError("eval: distance threshold must be non-negative");
  }
  std::vector<RankedMatch> ranked;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto & preds = scenes[s].predictions;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      check_box(preds[i]);
      if (preds[i].class_id == class_id) {
        ranked.push_back({s, i, preds[i].score, false});
      }
    }
  }
  // Candidates are generated in (scene, index) order, so a stable sort keeps
  // that order among equal scores.
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedMatch & a, const RankedMatch & b) {
    return a.score > b.score;
  });

  std::vector<std::vector<bool>> taken(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    taken[s].assign(scenes[s].ground_truth.size(), false);
  }
  for (auto & r : ranked) {
    const auto & gts = scenes[r.scene].ground_truth;
    const Box3D & pred = scenes[r.scene].predictions[r.index];
    std::size_t best = gts.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != class_id || taken[r.scene][g]) {
        continue;
      }
      const double d = bev_distance(pred, gts[g]);
      if (d <= threshold && d < best_d) {
        best = g;
        best_d = d;
      }
    }
    if (best < gts.size()) {
      taken[r.scene][best] = true;
      r.true_positive = true;
    }
  }
  return ranked;
}

double average_precision(std::span<const RankedMatch> ranked, std::size_t num_gt)
{
  if (num_gt == 0) {
    throw ValidationError("average_precision: no ground truth");
  }
  if (ranked.empty()) {
    return 0.0;
  }
  std::vector<double> precision(ranked.size());
  std::vector<double> recall(ranked.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    tp += ranked[i].true_positive ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = ranked.size() - 1; i-- > 0;) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double area = 0.0;
  double prev_r = 0.0;
  double prev_p = precision[0];
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    area += 0.5 * (recall[i] - prev_r) * (precision[i] + prev_p);
    prev_r = recall[i];
    prev_p = precision[i];
  }
  return area;
}

std::optional<double> ap_at_threshold(
  std::span<const SceneDetections> scenes, int class_id, double threshold)
{
  std::size_t num_gt = 0;
  for (const auto & s : scenes) {
    for (const auto & g : s.ground_truth) {
      check_box(g);
      num_gt += g.class_id == class_id ? 1 : 0;
    }
  }
  if (num_gt == 0) {
    return std::nullopt;
  }
  const auto ranked = rank_and_match(scenes, class_id, threshold);
  return average_precision(ranked, num_gt);
}

MetricsReport evaluate(std::span<const SceneDetections> scenes, std::span<const int> class_ids)
{
  MetricsReport report;
  double total = 0.0;
  std::size_t counted = 0;
  for (int cls : class_ids) {
    ClassMetrics m;
    m.class_id = cls;
    for (const auto & s : scenes) {
      m.num_gt += static_cast<std::size_t>(
        std::count_if(s.ground_truth.begin(), s.ground_truth.end(), [cls](const Box3D & b) {
          return b.class_id == cls;
        }));
      m.num_predictions += static_cast<std::size_t>(
        std::count_if(s.predictions.begin(), s.predictions.end(), [cls](const Box3D & b) {
          return b.class_id == cls;
        }));
    }
    if (m.num_gt > 0) {
      double sum = 0.0;
      for (std::size_t t = 0; t < kThresholds.size(); ++t) {
        m.ap[t] = ap_at_threshold(scenes, cls, kThresholds[t]);
        sum += *m.ap[t];
      }
      m.mean_ap = sum / static_cast<double>(kThresholds.size());
      total += *m.mean_ap;
      ++counted;
    }
    report.classes.push_back(m);
  }
  if (counted == 0) {
    throw ValidationError("map_score: no class has ground truth");
  }
  report.map = total / static_cast<double>(counted);
  return report;
}

double map_score(std::span<const SceneDetections> scenes, std::span<const int> class_ids)
{
  return evaluate(scenes, class_ids).map;
}

}  // namespace fusiondet::eval
