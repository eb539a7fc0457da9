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

#ifndef FUSIONDET__FUSION_HPP_
#define FUSIONDET__FUSION_HPP_

#include "fusiondet/geom.hpp"
#include "fusiondet/lidar.hpp"
#include "fusiondet/nn/params.hpp"
#include "fusiondet/nn/tensor.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace fusiondet::fusion
{

/// Camera feature map [C_2D, Hf, Wf]; `stride` image pixels per feature cell.
struct CameraFeatures
{
  nn::Tensor features;
  int stride = 1;

  std::size_t channels() const { return features.dim(0); }
  int height() const { return static_cast<int>(features.dim(1)); }
  int width() const { return static_cast<int>(features.dim(2)); }
};

struct FusionConfig
{
  int k_neighbors = 9;
  bool distance_prior = true;
  bool adaptive_weighting = true;
  // Component switches for the component-wise ablation.
  bool use_vem = true;
  bool use_iem = true;
  bool use_ufusion = true;
  int depth_bins = 16;
  double d_min = 1.0;
  double d_max = 30.0;
  std::size_t c2d = 32;
  std::size_t c3d = 32;
  std::size_t c_depth = 8;
  double knn_epsilon = 1e-3;
  std::size_t gate_channels = 8;
  std::size_t bev_hidden = 16;

  /// Throws ValidationError on K < 1, D < 1, bad depth range or zero widths.
  void validate() const;
  std::vector<double> bin_centers() const;
};

// ---------------------------------------------------------------------------
// Voxel enhancement (camera -> LiDAR)

struct FeatureCell
{
  int row = 0;
  int col = 0;
  bool operator==(const FeatureCell &) const = default;
};

struct Neighbors
{
  std::vector<FeatureCell> cells;
  std::vector<double> distances;  // ascending, same order as cells
};

/// The K feature cells whose centres (col, row) are nearest to (u, v), ties in
/// row-major order. Throws ValidationError when K exceeds the grid.
Neighbors knn_pixels(double u, double v, int k, int height, int width);

/// softmax(1 / (d + epsilon)) over the K distances, or uniform 1/K when the
/// distance prior is disabled.
std::vector<double> distance_prior_weights(
  std::span<const double> distances, bool distance_prior, double epsilon = 1e-3);

struct VemParams
{
  nn::Tensor weight;  // [C_2D, C_3D]
  nn::Tensor bias;    // [C_3D]
};

/// relu(Linear(sum_k w_k table[index_k])) per row, with w from the K distances of
/// that row (distance prior or uniform). index, distances: rows * K entries.
nn::Tensor vem_delta(
  const nn::Tensor & table, std::span<const std::size_t> index, std::span<const double> distances,
  const FusionConfig & cfg, const VemParams & params);

/// lidar_rows + vem_delta(...): the per-voxel update with neighbors given explicitly.
nn::Tensor vem_enhance_rows(
  const nn::Tensor & lidar_rows, const nn::Tensor & table, std::span<const std::size_t> index,
  std::span<const double> distances, const FusionConfig & cfg, const VemParams & params);

struct CameraView
{
  CameraFeatures features;
  geom::CameraModel camera;
};

/// F_SeL = relu(linear(sum_k w_k F_nearest,k)) + F_L for voxels whose centre
/// projects into a camera; other voxels pass through unchanged. With several
/// views the first one containing the projection is used.
lidar::SparseVoxelGrid vem_enhance(
  const lidar::SparseVoxelGrid & voxels, std::span<const CameraView> views,
  const FusionConfig & cfg, const VemParams & params);

lidar::SparseVoxelGrid vem_enhance(
  const lidar::SparseVoxelGrid & voxels, const CameraFeatures & camf,
  const geom::CameraModel & cam, const FusionConfig & cfg, const VemParams & params);

// ---------------------------------------------------------------------------
// Image enhancement (LiDAR -> camera)

struct IemParams
{
  lidar::DepthFeatureParams depth;
  nn::Tensor conv_weight;  // [C_2D, C_2D + C_depth, 3, 3]
  nn::Tensor conv_bias;    // [C_2D]
};

/// F_SpC = conv(concat(F_C, depth_features(D_dense))). The depth map must be at
/// feature-grid resolution.
CameraFeatures iem_enhance(
  const CameraFeatures & camf, const lidar::DepthMap & dense_depth, const FusionConfig & cfg,
  const IemParams & params);

// ---------------------------------------------------------------------------
// View transformation

struct LiftSplatParams
{
  nn::Tensor depth_weight;  // [D, C_2D, 1, 1]
  nn::Tensor depth_bias;    // [D]
};

struct SplatResult
{
  nn::Tensor volume;       // [C, Nx, Ny, Nz]
  nn::Tensor depth_probs;  // [D, Hf, Wf]
  double total_mass = 0.0;    // sum over (cell, bin) of prob * |feature|_1
  double dropped_mass = 0.0;  // part of total_mass that fell outside the grid
};

/// Scatter-adds prob[b, cell] * feature[:, cell] into the voxel containing the
/// unprojection of the cell centre at bin depth b.
SplatResult splat(
  const nn::Tensor & features, const nn::Tensor & depth_probs, int stride,
  const geom::CameraModel & cam, const geom::GridSpec & grid, const FusionConfig & cfg);

/// Depth head (pointwise conv + softmax over bins) followed by splat.
SplatResult lift_splat(
  const CameraFeatures & camf, const geom::CameraModel & cam, const geom::GridSpec & grid,
  const FusionConfig & cfg, const LiftSplatParams & params);

// ---------------------------------------------------------------------------
// Unified fusion and BEV

struct UnifiedFusionParams
{
  nn::Tensor proj_weight;  // [C_3D, C_2D, 1, 1, 1]
  nn::Tensor proj_bias;
  nn::Tensor gate_lidar_weight;  // [G, C_3D, 1, 1, 1]
  nn::Tensor gate_lidar_bias;
  nn::Tensor gate_camera_weight;  // [G, C_3D, 1, 1, 1]
  nn::Tensor gate_camera_bias;
  nn::Tensor gate_out_weight;  // [1, 2G, 3, 3, 3]
  nn::Tensor gate_out_bias;    // [1]
  nn::Tensor concat_weight;    // [C_3D, C_3D + C_2D, 1, 1, 1]
  nn::Tensor concat_bias;
};

struct FusedVolume
{
  nn::Tensor fused;             // F_f [C_3D, X, Y, Z]
  nn::Tensor projected_camera;  // camera volume at C_3D (adaptive mode only)
  nn::Tensor gate_logits;       // alpha [1, X, Y, Z] (adaptive mode only)
};

FusedVolume unified_fuse(
  const nn::Tensor & lidar_volume, const nn::Tensor & camera_volume, const FusionConfig & cfg,
  const UnifiedFusionParams & params);

/// [C, X, Y, Z] -> [Z*C, X, Y], output channel z*C + c.
nn::Tensor bev_collapse(const nn::Tensor & volume);
/// Inverse of bev_collapse.
nn::Tensor bev_uncollapse(const nn::Tensor & bev, std::size_t z_extent);

struct BevEncoderParams
{
  nn::Tensor conv1_weight;  // [hidden, Cb, 3, 3]
  nn::Tensor conv1_bias;
  nn::Tensor conv2_weight;  // [Cb, hidden, 3, 3]
  nn::Tensor conv2_bias;
};

/// x + conv2(relu(conv1(x))), both 3x3 with zero padding.
nn::Tensor bev_encode(const nn::Tensor & bev, const BevEncoderParams & params);

// ---------------------------------------------------------------------------
// Parameter registration

VemParams make_vem_params(nn::ParameterStore & store, const FusionConfig & cfg);
IemParams make_iem_params(nn::ParameterStore & store, const FusionConfig & cfg);
LiftSplatParams make_lift_splat_params(nn::ParameterStore & store, const FusionConfig & cfg);
UnifiedFusionParams make_unified_fusion_params(
  nn::ParameterStore & store, const FusionConfig & cfg);
BevEncoderParams make_bev_encoder_params(
  nn::ParameterStore & store, const FusionConfig & cfg, std::size_t bev_channels);

}  // namespace fusiondet::fusion

#endif  // FUSIONDET__FUSION_HPP_
