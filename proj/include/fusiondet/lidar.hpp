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

#ifndef FUSIONDET__LIDAR_HPP_
#define FUSIONDET__LIDAR_HPP_

#include "fusiondet/geom.hpp"
#include "fusiondet/nn/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fusiondet::lidar
{

struct LidarPoint
{
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  geom::Vec3 position() const { return {x, y, z}; }
  bool operator==(const LidarPoint &) const = default;
};

struct PointCloud
{
  std::vector<LidarPoint> points;
};

/// Non-empty voxels only, keyed by voxel index and ordered by GridSpec::linear.
struct SparseVoxelGrid
{
  geom::GridSpec grid;
  std::vector<geom::VoxelIndex> keys;
  nn::Tensor features;  // [keys.size(), channels]
  std::vector<std::size_t> point_counts;

  std::size_t size() const { return keys.size(); }
  std::size_t channels() const { return features.defined() ? features.dim(1) : 0; }
  std::vector<std::size_t> linear_keys() const;
  /// Zero-filled dense volume [C, Nx, Ny, Nz].
  nn::Tensor densify() const;
};

/// Mean point statistics per occupied voxel: (dx, dy, dz, intensity), where the
/// offsets are measured from the voxel centre.
struct VoxelStatistics
{
  std::vector<geom::VoxelIndex> keys;
  std::vector<double> base;  // keys.size() * 4
  std::vector<std::size_t> point_counts;
};

VoxelStatistics voxel_statistics(const PointCloud & pc, const geom::GridSpec & grid);

/// Learnable 4 -> C_3D embedding applied to the mean statistics.
struct VoxelEmbedding
{
  nn::Tensor weight;  // [4, C_3D]
  nn::Tensor bias;    // [C_3D]
};

/// Throws ValidationError when the embedding width is below 4.
SparseVoxelGrid voxelize(
  const PointCloud & pc, const geom::GridSpec & grid, const VoxelEmbedding & embedding);

/// Row-major H x W depth image in metres with per-pixel validity.
struct DepthMap
{
  int height = 0;
  int width = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  DepthMap() = default;
  DepthMap(int h, int w);

  std::size_t index(int row, int col) const
  {
    return static_cast<std::size_t>(row) * width + col;
  }
  std::size_t valid_count() const;
  bool dense() const { return valid_count() == values.size(); }
  bool operator==(const DepthMap &) const = default;
};

/// Projects every point; each valid projection writes its depth at the rounded
/// pixel, keeping the minimum depth on collisions.
DepthMap sparse_depth(const PointCloud & pc, const geom::CameraModel & cam);

/// Nearest-valid-pixel fill under Euclidean pixel distance, ties to the earliest
/// valid pixel in row-major order. Throws ValidationError("empty depth map").
DepthMap complete_depth(const DepthMap & sparse);

/// 3x3 conv (1 -> C_depth), relu, then pointwise conv (C_depth -> C_depth).
struct DepthFeatureParams
{
  nn::Tensor conv1_weight;  // [C_depth, 1, 3, 3]
  nn::Tensor conv1_bias;    // [C_depth]
  nn::Tensor conv2_weight;  // [C_depth, C_depth, 1, 1]
  nn::Tensor conv2_bias;    // [C_depth]
};

/// Embeds log-depth of a dense map as [C_depth, H, W]. Throws on invalid pixels.
nn::Tensor depth_features(const DepthMap & dense, const DepthFeatureParams & params);

}  // namespace fusiondet::lidar

#endif  // FUSIONDET__LIDAR_HPP_
