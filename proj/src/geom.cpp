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

#include "fusiondet/geom.hpp"

#include "fusiondet/errors.hpp"

#include <Eigen/LU>

#include <cmath>
#include <string>

namespace fusiondet::geom
{

namespace
{
constexpr double kOrthoTol = 1e-9;
constexpr double kMinDepth = 1e-9;
}  // namespace

CameraModel::CameraModel(const Mat3 & intrinsics, const Mat4 & extrinsics, int height, int width)
: intrinsics_(intrinsics), extrinsics_(extrinsics), height_(height), width_(width)
{
  if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0)) {
    throw ValidationError("camera focal lengths must be positive");
  }
  if (height <= 0 || width <= 0) {
    throw ValidationError("camera image size must be positive");
  }
  const Mat3 r = extrinsics.topLeftCorner<3, 3>();
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > kOrthoTol) {
    throw ValidationError("camera extrinsic rotation is not orthonormal");
  }
  if (std::abs(r.determinant() - 1.0) > kOrthoTol) {
    throw ValidationError("camera extrinsic rotation must have determinant +1");
  }
  inverse_extrinsics_.setIdentity();
  inverse_extrinsics_.topLeftCorner<3, 3>() = r.transpose();
  inverse_extrinsics_.topRightCorner<3, 1>() = -r.transpose() * extrinsics.topRightCorner<3, 1>();
}

CameraModel CameraModel::from_focal(
  double fx, double fy, double cx, double cy, const Mat4 & extrinsics, int height, int width)
{
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return CameraModel(k, extrinsics, height, width);
}

CameraModel CameraModel::downscaled(int stride) const
{
  if (stride <= 0 || height_ % stride != 0 || width_ % stride != 0) {
    throw ValidationError(
      "stride " + std::to_string(stride) + " does not divide image size " +
      std::to_string(height_) + "x" + std::to_string(width_));
  }
  Mat3 k = intrinsics_;
  k.topRows<2>() /= static_cast<double>(stride);
  return CameraModel(k, extrinsics_, height_ / stride, width_ / stride);
}

Projection project_homogeneous(const Eigen::Vector4d & p, const CameraModel & cam)
{
  const Eigen::Vector4d c = cam.extrinsics() * p;
  const double depth = c.z() / c.w();
  Projection out;
  out.depth = depth;
  if (!(depth > kMinDepth)) {
    return out;
  }
  // Divide by the camera-frame z so the homogeneous scale cancels.
  out.u = cam.fx() * c.x() / c.z() + cam.cx();
  out.v = cam.fy() * c.y() / c.z() + cam.cy();
  out.valid = out.u >= 0.0 && out.u < cam.width() && out.v >= 0.0 && out.v < cam.height();
  return out;
}

Projection project_point(const Vec3 & p, const CameraModel & cam)
{
  return project_homogeneous(p.homogeneous(), cam);
}

Vec3 unproject_pixel(double u, double v, double depth, const CameraModel & cam)
{
  if (!(depth > 0.0)) {
    throw ValidationError("non-positive depth");
  }
  const Eigen::Vector4d c(
    (u - cam.cx()) / cam.fx() * depth, (v - cam.cy()) / cam.fy() * depth, depth, 1.0);
  return (cam.inverse_extrinsics_ * c).head<3>();
}

Mat4 forward_looking_extrinsics(const Vec3 & position)
{
  Mat3 r;
  // camera x = -lidar y, camera y = -lidar z, camera z = lidar x
  r << 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0;
  Mat4 t = Mat4::Identity();
  t.topLeftCorner<3, 3>() = r;
  t.topRightCorner<3, 1>() = -r * position;
  return t;
}

GridSpec::GridSpec(const Vec3 & range_min, const Vec3 & range_max, const Vec3 & voxel_size)
: range_min_(range_min), range_max_(range_max), voxel_size_(voxel_size)
{
  for (int k = 0; k < 3; ++k) {
    if (!(voxel_size[k] > 0.0)) {
      throw ValidationError("voxel_size must be positive");
    }
    const double extent = range_max[k] - range_min[k];
    if (!(extent > 0.0)) {
      throw ValidationError("grid range_max must exceed range_min");
    }
    const double cells = std::round(extent / voxel_size[k]);
    if (std::abs(cells * voxel_size[k] - extent) > 1e-9) {
      throw ValidationError("grid extent is not an integer multiple of voxel_size");
    }
    dims_[k] = static_cast<int>(cells);
  }
}

VoxelIndex GridSpec::unlinear(std::size_t l) const
{
  VoxelIndex i;
  i[2] = static_cast<int>(l % dims_[2]);
  l /= dims_[2];
  i[1] = static_cast<int>(l % dims_[1]);
  i[0] = static_cast<int>(l / dims_[1]);
  return i;
}

bool GridSpec::operator==(const GridSpec & other) const
{
  return range_min_ == other.range_min_ && range_max_ == other.range_max_ &&
         voxel_size_ == other.voxel_size_;
}

VoxelLookup voxel_index(const Vec3 & p, const GridSpec & grid)
{
  VoxelLookup out;
  out.valid = true;
  for (int k = 0; k < 3; ++k) {
    const double f = std::floor((p[k] - grid.range_min()[k]) / grid.voxel_size()[k]);
    if (!(f >= 0.0 && f < grid.dims()[k])) {
      out.valid = false;
      out.index[k] = 0;
      continue;
    }
    out.index[k] = static_cast<int>(f);
  }
  return out;
}

Vec3 voxel_center(const VoxelIndex & index, const GridSpec & grid)
{
  Vec3 c;
  for (int k = 0; k < 3; ++k) {
    if (index[k] < 0 || index[k] >= grid.dims()[k]) {
      throw ValidationError("voxel index out of grid dims");
    }
    c[k] = grid.range_min()[k] + (index[k] + 0.5) * grid.voxel_size()[k];
  }
  return c;
}

}  // namespace fusiondet::geom
