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

#ifndef FUSIONDET__HARNESS__MODEL_HPP_
#define FUSIONDET__HARNESS__MODEL_HPP_

#include "fusiondet/fusion.hpp"
#include "fusiondet/harness/config.hpp"
#include "fusiondet/harness/scene.hpp"
#include "fusiondet/head.hpp"
#include "fusiondet/lidar.hpp"
#include "fusiondet/nn/params.hpp"

#include <string>
#include <utility>
#include <vector>

namespace fusiondet::harness
{

struct CameraStemParams
{
  nn::Tensor conv1_weight;  // [C_2D, 3 * stride^2, 3, 3]
  nn::Tensor conv1_bias;
  nn::Tensor conv2_weight;  // [C_2D, C_2D, 3, 3]
  nn::Tensor conv2_bias;
};

/// Every learnable tensor of the pipeline. All of them exist whatever the
/// ablation flags say, so one checkpoint layout serves every variant.
struct ModelParams
{
  lidar::VoxelEmbedding embedding;
  CameraStemParams stem;
  fusion::VemParams vem;
  fusion::IemParams iem;
  fusion::LiftSplatParams lift_splat;
  fusion::UnifiedFusionParams ufusion;
  fusion::BevEncoderParams bev;
  head::HeadParams head;
};

class Model
{
public:
  explicit Model(const RunConfig & cfg);

  const RunConfig & config() const { return cfg_; }
  const ModelParams & params() const { return params_; }
  nn::ParameterStore & store() { return store_; }
  const nn::ParameterStore & store() const { return store_; }
  const geom::GridSpec & grid() const { return grid_; }

private:
  RunConfig cfg_;
  geom::GridSpec grid_;
  nn::ParameterStore store_;
  ModelParams params_;
};

/// [3, H, W] -> [3 * s * s, H / s, W / s]; channel (c * s + dy) * s + dx holds
/// pixel (i * s + dy, j * s + dx) of channel c.
nn::Tensor space_to_depth(const nn::Tensor & image, int stride);

/// Camera stem: space_to_depth, then conv 3x3 -> relu -> conv 3x3.
fusion::CameraFeatures camera_stem(
  const std::vector<double> & image, int height, int width, int stride,
  const CameraStemParams & params);

struct PipelineOutput
{
  head::Predictions predictions;
  /// Named intermediates in execution order (debug mode only).
  std::vector<std::pair<std::string, nn::Tensor>> intermediates;
  /// Stage names in execution order, always recorded.
  std::vector<std::string> stages;

  const nn::Tensor & intermediate(const std::string & name) const;
};

/// Whole forward pass for one scene under the model's configuration.
PipelineOutput forward_pipeline(const Scene & scene, const Model & model, bool debug = false);

/// Depth map as a [1, H, W] tensor of its values.
nn::Tensor depth_tensor(const lidar::DepthMap & d);

}  // namespace fusiondet::harness

#endif  // FUSIONDET__HARNESS__MODEL_HPP_
