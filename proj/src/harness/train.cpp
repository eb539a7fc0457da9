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

#include "fusiondet/harness/train.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/nn/ops.hpp"
#include "fusiondet/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace fusiondet::harness
{

using Json = nlohmann::ordered_json;

namespace
{

constexpr const char * kCurveRecord = "train/curve";

std::string format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t num_scenes)
{
  std::vector<std::size_t> order(num_scenes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::named(seed, "epoch/" + std::to_string(epoch));
  for (std::size_t i = num_scenes; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

head::LossTerms scene_loss(const Model & model, const Scene & scene)
{
  const PipelineOutput out = forward_pipeline(scene, model);
  return head::detection_loss(out.predictions, scene.boxes, model.config().head);
}

Trainer::Trainer(Model & model, const std::vector<Scene> & scenes)
: model_(model),
  scenes_(scenes),
  adam_({model.config().train.lr, model.config().train.beta1, model.config().train.beta2,
         model.config().train.eps})
{
  if (scenes_.empty()) {
    throw ValidationError("train: dataset is empty");
  }
}

StepLoss Trainer::step()
{
  const TrainConfig & tc = model_.config().train;
  const std::size_t n = scenes_.size();
  nn::ParameterStore & store = model_.store();
  store.zero_grad();

  StepLoss loss;
  nn::Tensor batch_total;
  for (std::size_t b = 0; b < tc.batch_size; ++b) {
    const std::size_t sample = curve_.size() * tc.batch_size + b;
    const std::size_t scene = epoch_order(tc.seed, sample / n, n)[sample % n];
    const head::LossTerms terms = scene_loss(model_, scenes_[scene]);
    batch_total = batch_total.defined() ? nn::add(batch_total, terms.total) : terms.total;
    loss.focal += terms.focal;
    loss.l1 += terms.l1;
  }
  const double inv = 1.0 / static_cast<double>(tc.batch_size);
  const nn::Tensor total = nn::scale(batch_total, inv);
  loss.total = total.item();
  loss.focal *= inv;
  loss.l1 *= inv;
  if (!std::isfinite(loss.total)) {
    throw NumericalError("train: non-finite loss at step " + std::to_string(curve_.size()));
  }
  total.backward();
  for (const auto & p : store.all()) {
    if (!p.tensor.has_grad()) {
      continue;
    }
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericalError(
          "train: non-finite gradient in " + p.name + " at step " + std::to_string(curve_.size()));
      }
    }
  }
  adam_.step(store);
  curve_.push_back(loss);
  return loss;
}

void Trainer::run(std::size_t total_steps)
{
  while (curve_.size() < total_steps) {
    step();
  }
}

std::vector<nn::CheckpointRecord> Trainer::checkpoint() const
{
  auto records = nn::parameter_records(model_.store());
  for (auto & r : adam_.state_records()) {
    records.push_back(std::move(r));
  }
  nn::CheckpointRecord curve{kCurveRecord, {curve_.size(), 3}, {}};
  for (const auto & s : curve_) {
    curve.data.insert(curve.data.end(), {s.total, s.focal, s.l1});
  }
  records.push_back(std::move(curve));
  return records;
}

void Trainer::restore(const std::vector<nn::CheckpointRecord> & records)
{
  nn::load_parameters(model_.store(), records);
  adam_.load_state(records);
  curve_.clear();
  for (const auto & r : records) {
    if (r.name != kCurveRecord) {
      continue;
    }
    if (r.shape.size() != 2 || r.shape[1] != 3) {
      throw ValidationError("checkpoint: malformed loss curve record");
    }
    for (std::size_t i = 0; i < r.shape[0]; ++i) {
      curve_.push_back({r.data[3 * i], r.data[3 * i + 1], r.data[3 * i + 2]});
    }
  }
  if (static_cast<std::int64_t>(curve_.size()) != adam_.steps_taken()) {
    throw ValidationError("checkpoint: loss curve length does not match optimizer step count");
  }
}

std::string curve_csv(const std::vector<StepLoss> & curve)
{
  std::string out = "step,total,focal,l1\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out += std::to_string(i) + "," + format_double(curve[i].total) + "," +
           format_double(curve[i].focal) + "," + format_double(curve[i].l1) + "\n";
  }
  return out;
}

void save_checkpoint(const std::filesystem::path & path, const Trainer & trainer)
{
  nn::write_checkpoint(path, trainer.checkpoint());
}

void load_model_checkpoint(const std::filesystem::path & path, Model & model)
{
  nn::load_parameters(model.store(), nn::read_checkpoint(path));
}

std::vector<eval::SceneDetections> detect(const Model & model, const std::vector<Scene> & scenes)
{
  std::vector<eval::SceneDetections> out;
  out.reserve(scenes.size());
  for (const auto & s : scenes) {
    const PipelineOutput result = forward_pipeline(s, model);
    out.push_back({head::to_detections(result.predictions), s.boxes});
  }
  return out;
}

std::vector<eval::SceneDetections> oracle_detections(const std::vector<Scene> & scenes)
{
  std::vector<eval::SceneDetections> out;
  for (const auto & s : scenes) {
    eval::SceneDetections d{s.boxes, s.boxes};
    for (auto & b : d.predictions) {
      b.score = 1.0;
    }
    out.push_back(std::move(d));
  }
  return out;
}

eval::MetricsReport evaluate_scenes(
  const RunConfig & cfg, const std::vector<eval::SceneDetections> & dets)
{
  std::vector<int> classes(cfg.dataset.classes.size());
  std::iota(classes.begin(), classes.end(), 0);
  return eval::evaluate(dets, classes);
}

std::string report_json(const RunConfig & cfg, const eval::MetricsReport & report)
{
  Json j = Json::object();
  j["map"] = report.map;
  j["thresholds"] = eval::kThresholds;
  Json classes = Json::array();
  for (const auto & c : report.classes) {
    Json e = Json::object();
    e["class_id"] = c.class_id;
    e["name"] = cfg.dataset.classes.at(static_cast<std::size_t>(c.class_id)).name;
    e["num_gt"] = c.num_gt;
    e["num_predictions"] = c.num_predictions;
    Json ap = Json::object();
    for (std::size_t t = 0; t < eval::kThresholds.size(); ++t) {
      const std::string key = format_double(eval::kThresholds[t]);
      ap[key] = c.ap[t] ? Json(*c.ap[t]) : Json(nullptr);
    }
    e["ap"] = ap;
    e["mean_ap"] = c.mean_ap ? Json(*c.mean_ap) : Json(nullptr);
    classes.push_back(e);
  }
  j["classes"] = classes;
  return j.dump(2) + "\n";
}

std::vector<AblationVariant> ablation_variants(const RunConfig & cfg)
{
  std::vector<AblationVariant> out;
  out.push_back({"baseline", cfg});
  for (int k : cfg.ablation.k_values) {
    RunConfig c = cfg;
    c.fusion.k_neighbors = k;
    out.push_back({"k=" + std::to_string(k), c});
  }
  auto toggle = [&](const std::string & name, bool fusion::FusionConfig::*flag) {
    RunConfig c = cfg;
    c.fusion.*flag = !(cfg.fusion.*flag);
    out.push_back({name + (c.fusion.*flag ? "=on" : "=off"), c});
  };
  if (cfg.ablation.distance_prior) {
    toggle("distance_prior", &fusion::FusionConfig::distance_prior);
  }
  if (cfg.ablation.adaptive_weighting) {
    toggle("adaptive_weighting", &fusion::FusionConfig::adaptive_weighting);
  }
  if (cfg.ablation.components) {
    toggle("vem", &fusion::FusionConfig::use_vem);
    toggle("iem", &fusion::FusionConfig::use_iem);
    toggle("ufusion", &fusion::FusionConfig::use_ufusion);
  }
  for (const auto & v : out) {
    v.config.validate();
  }
  return out;
}

std::string ablation_json(const std::vector<AblationRow> & rows)
{
  Json arr = Json::array();
  for (const auto & r : rows) {
    arr.push_back({
      {"variant", r.name},
      {"k_neighbors", r.fusion.k_neighbors},
      {"distance_prior", r.fusion.distance_prior},
      {"adaptive_weighting", r.fusion.adaptive_weighting},
      {"use_vem", r.fusion.use_vem},
      {"use_iem", r.fusion.use_iem},
      {"use_ufusion", r.fusion.use_ufusion},
      {"map", r.map},
      {"mean_score", r.mean_score},
    });
  }
  return Json{{"rows", arr}}.dump(2) + "\n";
}

std::string ablation_table(const std::vector<AblationRow> & rows)
{
  std::ostringstream os;
  os << "| variant | K | dist-prior | adaptive | VEM | IEM | U-Fusion | mAP | mean score |\n"
     << "|---|---|---|---|---|---|---|---|---|\n";
  auto yn = [](bool b) { return b ? "on" : "off"; };
  for (const auto & r : rows) {
    char map[32];
    char score[32];
    std::snprintf(map, sizeof(map), "%.4f", r.map);
    std::snprintf(score, sizeof(score), "%.6f", r.mean_score);
    os << "| " << r.name << " | " << r.fusion.k_neighbors << " | " << yn(r.fusion.distance_prior)
       << " | " << yn(r.fusion.adaptive_weighting) << " | " << yn(r.fusion.use_vem) << " | "
       << yn(r.fusion.use_iem) << " | " << yn(r.fusion.use_ufusion) << " | " << map << " | "
       << score << " |\n";
  }
  return os.str();
}

}  // namespace fusiondet::harness
