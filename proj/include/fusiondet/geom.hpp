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

#ifndef FUSIONDET__GEOM_HPP_
#define FUSIONDET__GEOM_HPP_

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstddef>
#include <optional>
#include <span>

namespace fusiondet::geom
{

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Pinhole camera. Pixel coordinates are continuous with (0,0) at the centre of
/// the top-left pixel; extrinsics map LiDAR/world points into the camera frame
/// (x right, y down, z forward).
class CameraModel
{
public:
  CameraModel(const Mat3 & intrinsics, const Mat4 & extrinsics, int height, int width);

  static CameraModel from_focal(
    double fx, double fy, double cx, double cy, const Mat4 & extrinsics, int height, int width);

  const Mat3 & intrinsics() const { return intrinsics_; }
  const Mat4 & extrinsics() const { return extrinsics_; }
  int height() const { return height_; }
  int width() const { return width_; }
  double fx() const { return intrinsics_(0, 0); }
  double fy() const { return intrinsics_(1, 1); }
  double cx() const { return intrinsics_(0, 2); }
  double cy() const { return intrinsics_(1, 2); }

  /// Same pose, pixel grid shrunk by an integer stride: u' = u / stride.
  CameraModel downscaled(int stride) const;

private:
  Mat3 intrinsics_;
  Mat4 extrinsics_;
  Mat4 inverse_extrinsics_;
  int height_;
  int width_;

  friend Vec3 unproject_pixel(double u, double v, double depth, const CameraModel & cam);
};

struct Projection
{
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool valid = false;
};

Projection project_point(const Vec3 & p, const CameraModel & cam);

/// project_point on a homogeneous point (x, y, z, w), w != 0.
Projection project_homogeneous(const Eigen::Vector4d & p, const CameraModel & cam);

/// Inverse of project_point. Throws ValidationError("non-positive depth") for depth <= 0.
Vec3 unproject_pixel(double u, double v, double depth, const CameraModel & cam);

/// Rigid LiDAR-to-camera transform for a camera at `position` looking along the
/// LiDAR +x axis with its image x axis along LiDAR -y.
Mat4 forward_looking_extrinsics(const Vec3 & position);

using VoxelIndex = std::array<int, 3>;

/// Axis-aligned voxel lattice. Cells are half-open: points on range_max are outside.
class GridSpec
{
public:
  GridSpec(const Vec3 & range_min, const Vec3 & range_max, const Vec3 & voxel_size);

  const Vec3 & range_min() const { return range_min_; }
  const Vec3 & range_max() const { return range_max_; }
  const Vec3 & voxel_size() const { return voxel_size_; }
  const std::array<int, 3> & dims() const { return dims_; }
  std::size_t num_voxels() const
  {
    return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  }

  /// Row-major linear index, z fastest.
  std::size_t linear(const VoxelIndex & i) const
  {
    return (static_cast<std::size_t>(i[0]) * dims_[1] + i[1]) * dims_[2] + i[2];
  }
  VoxelIndex unlinear(std::size_t l) const;

  bool operator==(const GridSpec & other) const;

private:
  Vec3 range_min_;
  Vec3 range_max_;
  Vec3 voxel_size_;
  std::array<int, 3> dims_;
};

struct VoxelLookup
{
  VoxelIndex index{0, 0, 0};
  bool valid = false;
};

VoxelLookup voxel_index(const Vec3 & p, const GridSpec & grid);

/// Throws ValidationError when the index lies outside dims.
Vec3 voxel_center(const VoxelIndex & index, const GridSpec & grid);

}  // namespace fusiondet::geom

#endif  // FUSIONDET__GEOM_HPP_
