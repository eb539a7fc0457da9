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

#include "fusiondet/harness/model.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/nn/ops.hpp"

namespace fusiondet::harness
{

namespace
{

CameraStemParams make_stem_params(nn::ParameterStore & s, const RunConfig & cfg)
{
  const std::size_t c = cfg.fusion.c2d;
  const std::size_t in = 3 * static_cast<std::size_t>(cfg.camera.stride * cfg.camera.stride);
  return {
    s.add_glorot("stem.conv1.weight", {c, in, 3, 3}, in * 9, c * 9),
    s.add_constant("stem.conv1.bias", {c}),
    s.add_glorot("stem.conv2.weight", {c, c, 3, 3}, c * 9, c * 9),
    s.add_constant("stem.conv2.bias", {c}),
  };
}

}  // namespace

Model::Model(const RunConfig & cfg) : cfg_(cfg), grid_(cfg.grid()), store_(cfg.train.seed)
{
  cfg_.validate();
  const auto & f = cfg_.fusion;
  params_.embedding = {
    store_.add_glorot("voxel.embed.weight", {4, f.c3d}, 4, f.c3d),
    store_.add_constant("voxel.embed.bias", {f.c3d}, 1.0),
  };
  params_.stem = make_stem_params(store_, cfg_);
  params_.vem = fusion::make_vem_params(store_, f);
  params_.iem = fusion::make_iem_params(store_, f);
  params_.lift_splat = fusion::make_lift_splat_params(store_, f);
  params_.ufusion = fusion::make_unified_fusion_params(store_, f);
  const std::size_t bev_channels = f.c3d * static_cast<std::size_t>(grid_.dims()[2]);
  params_.bev = fusion::make_bev_encoder_params(store_, f, bev_channels);
  params_.head = head::make_head_params(store_, cfg_.head, bev_channels);
}

nn::Tensor space_to_depth(const nn::Tensor & image, int stride)
{
  if (image.rank() != 3 || stride < 1) {
    throw ValidationError("space_to_depth expects [C, H, W] and a positive stride");
  }
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (h % s != 0 || w % s != 0) {
    throw ValidationError("space_to_depth: stride must divide the image size");
  }
  const nn::Tensor split = nn::reshape(image, {c, h / s, s, w / s, s});
  return nn::reshape(nn::permute(split, {0, 2, 4, 1, 3}), {c * s * s, h / s, w / s});
}

fusion::CameraFeatures camera_stem(
  const std::vector<double> & image, int height, int width, int stride,
  const CameraStemParams & params)
{
  const nn::Tensor img(
    {3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)}, image);
  const nn::Tensor folded = space_to_depth(img, stride);
  const nn::Tensor hidden = nn::relu(nn::conv2d(folded, params.conv1_weight, params.conv1_bias, 1, 1));
  return {nn::conv2d(hidden, params.conv2_weight, params.conv2_bias, 1, 1), stride};
}

nn::Tensor depth_tensor(const lidar::DepthMap & d)
{
  return nn::Tensor(
    {1, static_cast<std::size_t>(d.height), static_cast<std::size_t>(d.width)}, d.values);
}

const nn::Tensor & PipelineOutput::intermediate(const std::string & name) const
{
  for (const auto & [n, t] : intermediates) {
    if (n == name) {
      return t;
    }
  }
  throw ValidationError("no intermediate named " + name + " (debug mode off?)");
}

PipelineOutput forward_pipeline(const Scene & scene, const Model & model, bool debug)
{
  const RunConfig & cfg = model.config();
  const fusion::FusionConfig & fc = cfg.fusion;
  const ModelParams & p = model.params();
  const geom::GridSpec & grid = model.grid();
  const int stride = cfg.camera.stride;
  PipelineOutput out;
  auto record = [&](const char * stage, const char * name, const nn::Tensor & t) {
    out.stages.emplace_back(stage);
    if (debug && name) {
      out.intermediates.emplace_back(name, t);
    }
  };
  if (scene.camera.height() != cfg.camera.height || scene.camera.width() != cfg.camera.width) {
    throw ValidationError("scene image size does not match the configured camera");
  }

  const lidar::SparseVoxelGrid f_l = lidar::voxelize(scene.points, grid, p.embedding);
  record("voxelize", "F_L", f_l.features);

  const fusion::CameraFeatures f_c =
    camera_stem(scene.image, scene.camera.height(), scene.camera.width(), stride, p.stem);
  record("camera_stem", "F_C", f_c.features);

  const geom::CameraModel feature_cam = scene.camera.downscaled(stride);
  const lidar::DepthMap d_sparse = lidar::sparse_depth(scene.points, feature_cam);
  record("sparse_depth", "D_sparse", depth_tensor(d_sparse));

  lidar::DepthMap d_dense;
  if (d_sparse.valid_count() > 0) {
    d_dense = lidar::complete_depth(d_sparse);
  } else {
    // No LiDAR return lands in the image: treat every cell as far background.
    d_dense = lidar::DepthMap(d_sparse.height, d_sparse.width);
    std::fill(d_dense.values.begin(), d_dense.values.end(), fc.d_max);
    std::fill(d_dense.mask.begin(), d_dense.mask.end(), std::uint8_t{1});
  }
  record("complete_depth", "D_dense", depth_tensor(d_dense));

  const fusion::CameraFeatures f_spc =
    fc.use_iem ? fusion::iem_enhance(f_c, d_dense, fc, p.iem) : f_c;
  record("iem_enhance", "F_SpC", f_spc.features);

  const lidar::SparseVoxelGrid f_sel =
    fc.use_vem ? fusion::vem_enhance(f_l, f_c, scene.camera, fc, p.vem) : f_l;
  record("vem_enhance", "F_SeL", f_sel.features);

  const nn::Tensor lidar_volume = f_sel.densify();
  nn::Tensor f_f;
  if (fc.use_ufusion) {
    const fusion::SplatResult lifted = fusion::lift_splat(f_spc, scene.camera, grid, fc, p.lift_splat);
    record("lift_splat", "F̂_SpC", lifted.volume);
    f_f = fusion::unified_fuse(lidar_volume, lifted.volume, fc, p.ufusion).fused;
    record("unified_fuse", "F_f", f_f);
  } else {
    f_f = lidar_volume;
    record("unified_fuse", "F_f", f_f);
  }

  const nn::Tensor bev = fusion::bev_collapse(f_f);
  record("bev_collapse", nullptr, bev);
  const nn::Tensor f_b = fusion::bev_encode(bev, p.bev);
  record("bev_encode", "F_B", f_b);

  const nn::Tensor decoded = head::decode(p.head, f_b);
  record("decode", nullptr, decoded);
  out.predictions = head::predict(p.head, decoded, grid);
  record("predict", nullptr, out.predictions.boxes);
  return out;
}

}  // namespace fusiondet::harness
