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

#include "fusiondet/lidar.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace fusiondet::lidar
{

std::vector<std::size_t> SparseVoxelGrid::linear_keys() const
{
  std::vector<std::size_t> out;
  out.reserve(keys.size());
  for (const auto & k : keys) {
    out.push_back(grid.linear(k));
  }
  return out;
}

nn::Tensor SparseVoxelGrid::densify() const
{
  const std::size_t c = channels();
  const auto & d = grid.dims();
  nn::Shape dense_shape{c, static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]),
                        static_cast<std::size_t>(d[2])};
  if (keys.empty()) {
    return nn::Tensor::zeros(dense_shape);
  }
  const auto lin = linear_keys();
  const nn::Tensor rows = nn::scatter_rows(features, lin, grid.num_voxels());
  return nn::reshape(nn::transpose(rows), dense_shape);
}

VoxelStatistics voxel_statistics(const PointCloud & pc, const geom::GridSpec & grid)
{
  // (linear index, point index), stably sorted so sums run in point order
  std::vector<std::pair<std::size_t, std::size_t>> hits;
  hits.reserve(pc.points.size());
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const auto lookup = geom::voxel_index(pc.points[i].position(), grid);
    if (lookup.valid) {
      hits.emplace_back(grid.linear(lookup.index), i);
    }
  }
  std::stable_sort(
    hits.begin(), hits.end(), [](const auto & a, const auto & b) { return a.first < b.first; });

  VoxelStatistics stats;
  std::size_t i = 0;
  while (i < hits.size()) {
    const std::size_t lin = hits[i].first;
    const geom::VoxelIndex key = grid.unlinear(lin);
    const geom::Vec3 center = geom::voxel_center(key, grid);
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t count = 0;
    for (; i < hits.size() && hits[i].first == lin; ++i) {
      const LidarPoint & p = pc.points[hits[i].second];
      acc[0] += p.x - center.x();
      acc[1] += p.y - center.y();
      acc[2] += p.z - center.z();
      acc[3] += p.intensity;
      ++count;
    }
    stats.keys.push_back(key);
    stats.point_counts.push_back(count);
    for (double a : acc) {
      stats.base.push_back(a / static_cast<double>(count));
    }
  }
  return stats;
}

SparseVoxelGrid voxelize(
  const PointCloud & pc, const geom::GridSpec & grid, const VoxelEmbedding & embedding)
{
  if (embedding.weight.rank() != 2 || embedding.weight.dim(0) != 4) {
    throw ValidationError("voxel embedding weight must be [4, C_3D]");
  }
  if (embedding.weight.dim(1) < 4) {
    throw ValidationError("voxel feature width C_3D must be at least 4");
  }
  VoxelStatistics stats = voxel_statistics(pc, grid);
  SparseVoxelGrid out{grid, std::move(stats.keys), {}, std::move(stats.point_counts)};
  const std::size_t n = out.keys.size();
  const nn::Tensor base({n, 4}, std::move(stats.base));
  out.features = nn::linear(base, embedding.weight, embedding.bias);
  return out;
}

DepthMap::DepthMap(int h, int w)
: height(h),
  width(w),
  values(static_cast<std::size_t>(h) * w, 0.0),
  mask(static_cast<std::size_t>(h) * w, 0)
{
}

std::size_t DepthMap::valid_count() const
{
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

DepthMap sparse_depth(const PointCloud & pc, const geom::CameraModel & cam)
{
  DepthMap out(cam.height(), cam.width());
  for (const auto & p : pc.points) {
    const auto proj = geom::project_point(p.position(), cam);
    if (!proj.valid) {
      continue;
    }
    const long col = std::lround(proj.u);
    const long row = std::lround(proj.v);
    if (col < 0 || col >= out.width || row < 0 || row >= out.height) {
      continue;
    }
    const std::size_t i = out.index(static_cast<int>(row), static_cast<int>(col));
    if (!out.mask[i] || proj.depth < out.values[i]) {
      out.values[i] = proj.depth;
      out.mask[i] = 1;
    }
  }
  return out;
}

DepthMap complete_depth(const DepthMap & sparse)
{
  if (sparse.valid_count() == 0) {
    throw ValidationError("empty depth map");
  }
  const int h = sparse.height;
  const int w = sparse.width;
  DepthMap out = sparse;
  const int max_ring = std::max(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t here = sparse.index(r, c);
      if (sparse.mask[here]) {
        continue;
      }
      long best_d2 = std::numeric_limits<long>::max();
      std::size_t best = 0;
      // Square rings of growing Chebyshev radius. Once the best squared distance
      // is below (ring + 1)^2 no cell further out can match or beat it.
      for (int ring = 1; ring <= max_ring; ++ring) {
        for (int dr = -ring; dr <= ring; ++dr) {
          const int rr = r + dr;
          if (rr < 0 || rr >= h) {
            continue;
          }
          const bool edge_row = dr == -ring || dr == ring;
          for (int dc = -ring; dc <= ring; dc += edge_row ? 1 : 2 * ring) {
            const int cc = c + dc;
            if (cc < 0 || cc >= w) {
              continue;
            }
            const std::size_t j = sparse.index(rr, cc);
            if (!sparse.mask[j]) {
              continue;
            }
            const long d2 = static_cast<long>(dr) * dr + static_cast<long>(dc) * dc;
            if (d2 < best_d2 || (d2 == best_d2 && j < best)) {
              best_d2 = d2;
              best = j;
            }
          }
        }
        if (best_d2 < static_cast<long>(ring + 1) * (ring + 1)) {
          break;
        }
      }
      out.values[here] = sparse.values[best];
      out.mask[here] = 1;
    }
  }
  return out;
}

nn::Tensor depth_features(const DepthMap & dense, const DepthFeatureParams & params)
{
  if (!dense.dense()) {
    throw ValidationError("depth_features needs a fully valid depth map");
  }
  std::vector<double> logd(dense.values.size());
  for (std::size_t i = 0; i < logd.size(); ++i) {
    if (!(dense.values[i] > 0.0)) {
      throw ValidationError("depth_features: non-positive depth");
    }
    logd[i] = std::log(dense.values[i]);
  }
  const nn::Tensor input(
    {1, static_cast<std::size_t>(dense.height), static_cast<std::size_t>(dense.width)},
    std::move(logd));
  const nn::Tensor hidden =
    nn::relu(nn::conv2d(input, params.conv1_weight, params.conv1_bias, 1, 1));
  return nn::conv2d(hidden, params.conv2_weight, params.conv2_bias, 1, 0);
}

}  // namespace fusiondet::lidar
