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

#ifndef FUSIONDET__HEAD_HPP_
#define FUSIONDET__HEAD_HPP_

#include "fusiondet/box.hpp"
#include "fusiondet/geom.hpp"
#include "fusiondet/hungarian.hpp"
#include "fusiondet/nn/params.hpp"
#include "fusiondet/nn/tensor.hpp"

#include <array>
#include <span>
#include <vector>

namespace fusiondet::head
{

inline constexpr std::size_t kBoxParams = 8;

struct HeadConfig
{
  std::size_t num_queries = 20;
  std::size_t d_model = 64;
  std::size_t num_classes = 3;
  double cost_class = 1.0;
  double cost_box = 0.25;
  double loss_box_weight = 0.25;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const;
};

struct AttentionParams
{
  nn::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct MlpParams
{
  nn::Tensor w1, b1, w2, b2;
};

struct HeadParams
{
  nn::Tensor queries;           // [Nq, d]
  nn::Tensor input_proj_weight;  // [d, Cb, 1, 1]
  nn::Tensor input_proj_bias;    // [d]
  AttentionParams self_attn;
  AttentionParams cross_attn;
  MlpParams ffn;        // d -> d -> d
  MlpParams class_head;  // d -> d -> n_cls + 1
  MlpParams box_head;    // d -> d -> 8
};

HeadParams make_head_params(
  nn::ParameterStore & store, const HeadConfig & cfg, std::size_t bev_channels);

/// 2D sinusoidal encoding [X*Y, d] of the BEV cell grid: the first d/2
/// channels encode the x index, the rest the y index.
nn::Tensor bev_positional_encoding(std::size_t x_extent, std::size_t y_extent, std::size_t d);

/// Query self-attention, cross-attention to the BEV keys, then an FFN, each with
/// a residual connection. bev: [Cb, X, Y]; returns [Nq, d].
nn::Tensor decode(const HeadParams & params, const nn::Tensor & bev);

struct Predictions
{
  nn::Tensor logits;  // [Nq, n_cls + 1], last column is "no object"
  nn::Tensor probs;   // softmax of logits
  nn::Tensor boxes;   // [Nq, 8] decoded (x, y, z, w, l, h, sin, cos)
};

/// x, y = range_min + sigmoid(raw) * extent; z raw; sizes exp(raw); sin, cos raw.
Predictions predict(const HeadParams & params, const nn::Tensor & decoded, const geom::GridSpec & grid);

/// One detection per query: the most probable object class and its probability.
std::vector<Box3D> to_detections(const Predictions & preds);

/// cost[g, q] = cost_class * (1 - p_q(class_g)) + cost_box * mean|box_q - encode(gt_g)|.
std::vector<double> match_cost(
  const Predictions & preds, std::span<const Box3D> gts, const HeadConfig & cfg);

/// sum over queries of -alpha (1 - p_t)^gamma log(max(p_t, 1e-12)), divided by
/// `normalizer`. probs: [Nq, n_cls + 1]; targets: class per query.
nn::Tensor focal_loss(
  const nn::Tensor & probs, std::span<const std::size_t> targets, double alpha, double gamma,
  double normalizer);

/// Mean absolute error over the 8 box parameters of the matched queries; zero
/// (with no graph) when nothing is matched.
nn::Tensor l1_box_loss(
  const nn::Tensor & boxes, std::span<const std::size_t> queries,
  std::span<const std::array<double, kBoxParams>> targets);

struct LossTerms
{
  nn::Tensor total;
  double focal = 0.0;
  double l1 = 0.0;
  std::vector<std::size_t> assignment;  // query per gt
};

/// Hungarian matching on match_cost, then focal + loss_box_weight * L1.
LossTerms detection_loss(
  const Predictions & preds, std::span<const Box3D> gts, const HeadConfig & cfg);

}  // namespace fusiondet::head

#endif  // FUSIONDET__HEAD_HPP_
