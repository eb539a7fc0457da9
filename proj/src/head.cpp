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

#include "fusiondet/head.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fusiondet::head
{

void HeadConfig::validate() const
{
  if (num_queries == 0 || num_classes == 0) {
    throw ValidationError("head: num_queries and num_classes must be positive");
  }
  if (d_model == 0 || d_model % 4 != 0) {
    throw ValidationError("head: d_model must be a positive multiple of 4");
  }
  if (cost_class < 0.0 || cost_box < 0.0 || loss_box_weight < 0.0 || focal_alpha <= 0.0 ||
      focal_gamma < 0.0) {
    throw ValidationError("head: loss and cost weights must be non-negative");
  }
}

namespace
{

AttentionParams make_attention(nn::ParameterStore & s, const std::string & prefix, std::size_t d)
{
  AttentionParams p;
  p.wq = s.add_glorot(prefix + ".q.weight", {d, d}, d, d);
  p.bq = s.add_constant(prefix + ".q.bias", {d});
  p.wk = s.add_glorot(prefix + ".k.weight", {d, d}, d, d);
  p.bk = s.add_constant(prefix + ".k.bias", {d});
  p.wv = s.add_glorot(prefix + ".v.weight", {d, d}, d, d);
  p.bv = s.add_constant(prefix + ".v.bias", {d});
  // Zero output projection: each residual block starts as the identity.
  p.wo = s.add_constant(prefix + ".out.weight", {d, d});
  p.bo = s.add_constant(prefix + ".out.bias", {d});
  return p;
}

MlpParams make_mlp(
  nn::ParameterStore & s, const std::string & prefix, std::size_t in, std::size_t hidden,
  std::size_t out, bool zero_output = false)
{
  return {
    s.add_glorot(prefix + ".fc1.weight", {in, hidden}, in, hidden),
    s.add_constant(prefix + ".fc1.bias", {hidden}),
    zero_output ? s.add_constant(prefix + ".fc2.weight", {hidden, out})
                : s.add_glorot(prefix + ".fc2.weight", {hidden, out}, hidden, out),
    s.add_constant(prefix + ".fc2.bias", {out}),
  };
}

nn::Tensor mlp(const MlpParams & p, const nn::Tensor & x)
{
  return nn::linear(nn::relu(nn::linear(x, p.w1, p.b1)), p.w2, p.b2);
}

nn::Tensor attend(const AttentionParams & p, const nn::Tensor & queries, const nn::Tensor & keys)
{
  const nn::Tensor q = nn::linear(queries, p.wq, p.bq);
  const nn::Tensor k = nn::linear(keys, p.wk, p.bk);
  const nn::Tensor v = nn::linear(keys, p.wv, p.bv);
  return nn::linear(nn::attention(q, k, v), p.wo, p.bo);
}

}  // namespace

HeadParams make_head_params(
  nn::ParameterStore & store, const HeadConfig & cfg, std::size_t bev_channels)
{
  cfg.validate();
  const std::size_t d = cfg.d_model;
  HeadParams p;
  p.queries = store.add_glorot("head.queries", {cfg.num_queries, d}, cfg.num_queries, d);
  p.input_proj_weight = store.add_glorot("head.input_proj.weight", {d, bev_channels, 1, 1}, bev_channels, d);
  p.input_proj_bias = store.add_constant("head.input_proj.bias", {d});
  p.self_attn = make_attention(store, "head.self_attn", d);
  p.cross_attn = make_attention(store, "head.cross_attn", d);
  p.ffn = make_mlp(store, "head.ffn", d, d, d, true);
  p.class_head = make_mlp(store, "head.cls", d, d, cfg.num_classes + 1);
  p.box_head = make_mlp(store, "head.box", d, d, kBoxParams);
  return p;
}

nn::Tensor bev_positional_encoding(std::size_t x_extent, std::size_t y_extent, std::size_t d)
{
  if (d % 4 != 0) {
    throw ValidationError("positional encoding width must be a multiple of 4");
  }
  const std::size_t half = d / 2;
  std::vector<double> pe(x_extent * y_extent * d);
  for (std::size_t x = 0; x < x_extent; ++x) {
    for (std::size_t y = 0; y < y_extent; ++y) {
      double * row = pe.data() + (x * y_extent + y) * d;
      for (std::size_t k = 0; k < half / 2; ++k) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(half));
        row[2 * k] = std::sin(static_cast<double>(x) * freq);
        row[2 * k + 1] = std::cos(static_cast<double>(x) * freq);
        row[half + 2 * k] = std::sin(static_cast<double>(y) * freq);
        row[half + 2 * k + 1] = std::cos(static_cast<double>(y) * freq);
      }
    }
  }
  return nn::Tensor({x_extent * y_extent, d}, std::move(pe));
}

nn::Tensor decode(const HeadParams & params, const nn::Tensor & bev)
{
  if (bev.rank() != 3) {
    throw ValidationError("decode expects BEV features [Cb, X, Y]");
  }
  const std::size_t d = params.queries.dim(1);
  if (params.input_proj_weight.dim(0) != d) {
    throw ValidationError("decode: input projection width does not match query width");
  }
  const std::size_t x = bev.dim(1);
  const std::size_t y = bev.dim(2);
  const nn::Tensor projected =
    nn::conv2d(bev, params.input_proj_weight, params.input_proj_bias, 1, 0);
  const nn::Tensor keys = nn::add(
    nn::transpose(nn::reshape(projected, {d, x * y})), bev_positional_encoding(x, y, d));

  nn::Tensor q = params.queries;
  q = nn::add(q, attend(params.self_attn, q, q));
  q = nn::add(q, attend(params.cross_attn, q, keys));
  return nn::add(q, mlp(params.ffn, q));
}

Predictions predict(
  const HeadParams & params, const nn::Tensor & decoded, const geom::GridSpec & grid)
{
  Predictions out;
  out.logits = mlp(params.class_head, decoded);
  out.probs = nn::softmax(out.logits, 1);
  const nn::Tensor raw = mlp(params.box_head, decoded);
  const geom::Vec3 lo = grid.range_min();
  const geom::Vec3 extent = grid.range_max() - grid.range_min();
  const nn::Tensor x = nn::affine(nn::sigmoid(nn::slice(raw, 1, 0, 1)), extent.x(), lo.x());
  const nn::Tensor y = nn::affine(nn::sigmoid(nn::slice(raw, 1, 1, 2)), extent.y(), lo.y());
  const nn::Tensor z = nn::slice(raw, 1, 2, 3);
  const nn::Tensor sizes = nn::exp(nn::slice(raw, 1, 3, 6));
  const nn::Tensor yaw = nn::slice(raw, 1, 6, 8);
  out.boxes = nn::concat({x, y, z, sizes, yaw}, 1);
  return out;
}

std::vector<Box3D> to_detections(const Predictions & preds)
{
  const std::size_t nq = preds.probs.dim(0);
  const std::size_t ncls = preds.probs.dim(1) - 1;
  auto p = preds.probs.data();
  auto b = preds.boxes.data();
  std::vector<Box3D> out;
  out.reserve(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < ncls; ++c) {
      if (p[q * (ncls + 1) + c] > p[q * (ncls + 1) + best]) {
        best = c;
      }
    }
    std::array<double, kBoxParams> params;
    std::copy_n(b.begin() + q * kBoxParams, kBoxParams, params.begin());
    out.push_back(Box3D::decode(params, static_cast<int>(best), p[q * (ncls + 1) + best]));
  }
  return out;
}

std::vector<double> match_cost(
  const Predictions & preds, std::span<const Box3D> gts, const HeadConfig & cfg)
{
  const std::size_t nq = preds.probs.dim(0);
  const std::size_t ncls1 = preds.probs.dim(1);
  auto p = preds.probs.data();
  auto b = preds.boxes.data();
  std::vector<double> cost(gts.size() * nq);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto cls = static_cast<std::size_t>(gts[g].class_id);
    if (cls + 1 >= ncls1) {
      throw ValidationError("match_cost: ground-truth class id out of range");
    }
    const auto target = gts[g].encode();
    for (std::size_t q = 0; q < nq; ++q) {
      double l1 = 0.0;
      for (std::size_t k = 0; k < kBoxParams; ++k) {
        l1 += std::abs(b[q * kBoxParams + k] - target[k]);
      }
      cost[g * nq + q] =
        cfg.cost_class * (1.0 - p[q * ncls1 + cls]) + cfg.cost_box * (l1 / kBoxParams);
    }
  }
  return cost;
}

nn::Tensor focal_loss(
  const nn::Tensor & probs, std::span<const std::size_t> targets, double alpha, double gamma,
  double normalizer)
{
  static constexpr double kFloor = 1e-12;
  if (probs.rank() != 2 || targets.size() != probs.dim(0)) {
    throw ValidationError("focal_loss: need one target per row of probs");
  }
  if (!(normalizer > 0.0)) {
    throw ValidationError("focal_loss: normalizer must be positive");
  }
  const std::size_t ncls = probs.dim(1);
  auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  auto p = probs.data();
  double total = 0.0;
  for (std::size_t q = 0; q < tgt->size(); ++q) {
    if ((*tgt)[q] >= ncls) {
      throw ValidationError("focal_loss: target class out of range");
    }
    const double pt = p[q * ncls + (*tgt)[q]];
    total += -alpha * std::pow(1.0 - pt, gamma) * std::log(std::max(pt, kFloor));
  }
  return nn::Tensor::make_result(
    "focal_loss", {1}, {total / normalizer}, {probs},
    [tgt, ncls, alpha, gamma, normalizer](const nn::detail::Node & self) {
      double * g = nn::grad_sink(self.parents[0]);
      auto p = self.parents[0].data();
      const double upstream = self.grad[0] / normalizer;
      for (std::size_t q = 0; q < tgt->size(); ++q) {
        const std::size_t i = q * ncls + (*tgt)[q];
        const double pt = p[i];
        const double one_minus = 1.0 - pt;
        double d = 0.0;
        if (gamma != 0.0 && one_minus > 0.0) {
          d += alpha * gamma * std::pow(one_minus, gamma - 1.0) * std::log(std::max(pt, kFloor));
        }
        if (pt >= kFloor) {
          d -= alpha * std::pow(one_minus, gamma) / pt;
        }
        g[i] += upstream * d;
      }
    });
}

nn::Tensor l1_box_loss(
  const nn::Tensor & boxes, std::span<const std::size_t> queries,
  std::span<const std::array<double, kBoxParams>> targets)
{
  if (queries.size() != targets.size()) {
    throw ValidationError("l1_box_loss: one target per matched query required");
  }
  if (queries.empty()) {
    return nn::Tensor::scalar(0.0);
  }
  const nn::Tensor matched = nn::gather_rows(boxes, queries);
  auto t = std::make_shared<std::vector<double>>();
  for (const auto & row : targets) {
    t->insert(t->end(), row.begin(), row.end());
  }
  const double denom = static_cast<double>(t->size());
  auto m = matched.data();
  double total = 0.0;
  for (std::size_t i = 0; i < t->size(); ++i) {
    total += std::abs(m[i] - (*t)[i]);
  }
  return nn::Tensor::make_result(
    "l1_box_loss", {1}, {total / denom}, {matched}, [t, denom](const nn::detail::Node & self) {
      double * g = nn::grad_sink(self.parents[0]);
      auto m = self.parents[0].data();
      for (std::size_t i = 0; i < t->size(); ++i) {
        const double diff = m[i] - (*t)[i];
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        g[i] += self.grad[0] * sign / denom;
      }
    });
}

LossTerms detection_loss(
  const Predictions & preds, std::span<const Box3D> gts, const HeadConfig & cfg)
{
  const std::size_t nq = preds.probs.dim(0);
  const std::size_t no_object = preds.probs.dim(1) - 1;
  if (gts.size() > nq) {
    throw ValidationError(
      "detection_loss: " + std::to_string(gts.size()) + " ground-truth boxes exceed " +
      std::to_string(nq) + " queries");
  }
  LossTerms out;
  std::vector<std::size_t> targets(nq, no_object);
  std::vector<std::array<double, kBoxParams>> box_targets;
  if (!gts.empty()) {
    const auto cost = match_cost(preds, gts, cfg);
    out.assignment = hungarian(cost, gts.size(), nq);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      targets[out.assignment[g]] = static_cast<std::size_t>(gts[g].class_id);
      box_targets.push_back(gts[g].encode());
    }
  }
  const double normalizer = std::max<double>(1.0, static_cast<double>(gts.size()));
  const nn::Tensor focal =
    focal_loss(preds.probs, targets, cfg.focal_alpha, cfg.focal_gamma, normalizer);
  out.focal = focal.item();
  if (gts.empty()) {
    out.total = focal;
    return out;
  }
  const nn::Tensor l1 = l1_box_loss(preds.boxes, out.assignment, box_targets);
  out.l1 = l1.item();
  out.total = nn::add(focal, nn::scale(l1, cfg.loss_box_weight));
  return out;
}

}  // namespace fusiondet::head
