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

#include "fusiondet/fusion.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace fusiondet::fusion
{

void FusionConfig::validate() const
{
  if (k_neighbors < 1) {
    throw ValidationError("fusion.K must be >= 1");
  }
  if (depth_bins < 1) {
    throw ValidationError("fusion.depth_bins must be >= 1");
  }
  if (!(d_min > 0.0) || !(d_max > d_min)) {
    throw ValidationError("fusion depth range must satisfy 0 < d_min < d_max");
  }
  if (c2d == 0 || c3d < 4 || c_depth == 0 || gate_channels == 0 || bev_hidden == 0) {
    throw ValidationError("fusion channel counts must be positive (C_3D >= 4)");
  }
  if (!(knn_epsilon > 0.0)) {
    throw ValidationError("fusion.knn_epsilon must be positive");
  }
}

std::vector<double> FusionConfig::bin_centers() const
{
  std::vector<double> c(static_cast<std::size_t>(depth_bins));
  const double width = (d_max - d_min) / depth_bins;
  for (int b = 0; b < depth_bins; ++b) {
    c[static_cast<std::size_t>(b)] = d_min + (b + 0.5) * width;
  }
  return c;
}

Neighbors knn_pixels(double u, double v, int k, int height, int width)
{
  if (k < 1 || static_cast<long>(k) > static_cast<long>(height) * width) {
    throw ValidationError(
      "knn_pixels: K=" + std::to_string(k) + " exceeds the " + std::to_string(height) + "x" +
      std::to_string(width) + " feature grid");
  }
  struct Candidate
  {
    double d2;
    int index;
  };
  std::vector<Candidate> window;
  // Cells outside [u - r, u + r] x [v - r, v + r] are farther than r, so once the
  // K-th candidate inside the window is within r the selection is final.
  for (double r = std::ceil(std::sqrt(static_cast<double>(k))); ; r *= 2.0) {
    const int c0 = std::max(0, static_cast<int>(std::ceil(u - r)));
    const int c1 = std::min(width - 1, static_cast<int>(std::floor(u + r)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(v - r)));
    const int r1 = std::min(height - 1, static_cast<int>(std::floor(v + r)));
    window.clear();
    for (int row = r0; row <= r1; ++row) {
      for (int col = c0; col <= c1; ++col) {
        const double du = col - u;
        const double dv = row - v;
        window.push_back({du * du + dv * dv, row * width + col});
      }
    }
    const bool covers_grid = c0 == 0 && r0 == 0 && c1 == width - 1 && r1 == height - 1;
    if (static_cast<int>(window.size()) >= k) {
      std::partial_sort(
        window.begin(), window.begin() + k, window.end(), [](const auto & a, const auto & b) {
          return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index);
        });
      if (covers_grid || window[static_cast<std::size_t>(k - 1)].d2 <= r * r) {
        break;
      }
    }
  }
  Neighbors out;
  for (int i = 0; i < k; ++i) {
    const auto & c = window[static_cast<std::size_t>(i)];
    out.cells.push_back({c.index / width, c.index % width});
    out.distances.push_back(std::sqrt(c.d2));
  }
  return out;
}

std::vector<double> distance_prior_weights(
  std::span<const double> distances, bool distance_prior, double epsilon)
{
  const std::size_t k = distances.size();
  std::vector<double> w(k, k ? 1.0 / static_cast<double>(k) : 0.0);
  if (!distance_prior || k == 0) {
    return w;
  }
  std::vector<double> logits(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (distances[i] < 0.0) {
      throw ValidationError("distance_prior_weights: negative distance");
    }
    logits[i] = 1.0 / (distances[i] + epsilon);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp(logits[i] - mx);
    z += w[i];
  }
  for (auto & x : w) {
    x /= z;
  }
  return w;
}

namespace
{

// [C, H, W] -> [H*W, C]
nn::Tensor cell_table(const nn::Tensor & features)
{
  const std::size_t c = features.dim(0);
  const std::size_t hw = features.dim(1) * features.dim(2);
  return nn::transpose(nn::reshape(features, {c, hw}));
}

}  // namespace

nn::Tensor vem_delta(
  const nn::Tensor & table, std::span<const std::size_t> index, std::span<const double> distances,
  const FusionConfig & cfg, const VemParams & params)
{
  const auto k = static_cast<std::size_t>(cfg.k_neighbors);
  if (index.size() != distances.size() || index.size() % k != 0) {
    throw ValidationError("vem: need K neighbor indices and distances per row");
  }
  std::vector<double> weights;
  weights.reserve(index.size());
  for (std::size_t r = 0; r < index.size(); r += k) {
    const auto w =
      distance_prior_weights(distances.subspan(r, k), cfg.distance_prior, cfg.knn_epsilon);
    weights.insert(weights.end(), w.begin(), w.end());
  }
  const nn::Tensor weighted = nn::weighted_gather(table, index, weights, k);
  return nn::relu(nn::linear(weighted, params.weight, params.bias));
}

nn::Tensor vem_enhance_rows(
  const nn::Tensor & lidar_rows, const nn::Tensor & table, std::span<const std::size_t> index,
  std::span<const double> distances, const FusionConfig & cfg, const VemParams & params)
{
  return nn::add(lidar_rows, vem_delta(table, index, distances, cfg, params));
}

lidar::SparseVoxelGrid vem_enhance(
  const lidar::SparseVoxelGrid & voxels, std::span<const CameraView> views,
  const FusionConfig & cfg, const VemParams & params)
{
  if (voxels.channels() != params.weight.dim(1)) {
    throw ValidationError(
      "vem_enhance: voxel features have " + std::to_string(voxels.channels()) +
      " channels, linear map produces " + std::to_string(params.weight.dim(1)));
  }
  std::vector<nn::Tensor> tables;
  std::vector<std::size_t> table_offset;
  std::vector<geom::CameraModel> feature_cams;
  std::size_t offset = 0;
  for (const auto & view : views) {
    if (view.features.channels() != params.weight.dim(0)) {
      throw ValidationError("vem_enhance: camera feature channels do not match the linear map");
    }
    tables.push_back(cell_table(view.features.features));
    table_offset.push_back(offset);
    offset += tables.back().dim(0);
    feature_cams.push_back(view.camera.downscaled(view.features.stride));
  }

  const auto k = static_cast<std::size_t>(cfg.k_neighbors);
  std::vector<std::size_t> rows;
  std::vector<std::size_t> index;
  std::vector<double> distances;
  for (std::size_t v = 0; v < voxels.size(); ++v) {
    const geom::Vec3 center = geom::voxel_center(voxels.keys[v], voxels.grid);
    for (std::size_t c = 0; c < feature_cams.size(); ++c) {
      const auto proj = geom::project_point(center, feature_cams[c]);
      if (!proj.valid) {
        continue;
      }
      const Neighbors nb = knn_pixels(
        proj.u, proj.v, cfg.k_neighbors, feature_cams[c].height(), feature_cams[c].width());
      for (std::size_t i = 0; i < k; ++i) {
        index.push_back(
          table_offset[c] + static_cast<std::size_t>(nb.cells[i].row * feature_cams[c].width() +
                                                     nb.cells[i].col));
        distances.push_back(nb.distances[i]);
      }
      rows.push_back(v);
      break;
    }
  }

  lidar::SparseVoxelGrid out = voxels;
  if (rows.empty()) {
    return out;
  }
  const nn::Tensor table = tables.size() == 1 ? tables.front() : nn::concat(tables, 0);
  const nn::Tensor delta = vem_delta(table, index, distances, cfg, params);
  out.features = nn::add(voxels.features, nn::scatter_rows(delta, rows, voxels.size()));
  return out;
}

lidar::SparseVoxelGrid vem_enhance(
  const lidar::SparseVoxelGrid & voxels, const CameraFeatures & camf,
  const geom::CameraModel & cam, const FusionConfig & cfg, const VemParams & params)
{
  const CameraView view{camf, cam};
  return vem_enhance(voxels, std::span<const CameraView>(&view, 1), cfg, params);
}

CameraFeatures iem_enhance(
  const CameraFeatures & camf, const lidar::DepthMap & dense_depth, const FusionConfig & cfg,
  const IemParams & params)
{
  if (dense_depth.height != camf.height() || dense_depth.width != camf.width()) {
    throw ValidationError(
      "iem_enhance: depth map " + std::to_string(dense_depth.height) + "x" +
      std::to_string(dense_depth.width) + " does not match feature grid " +
      std::to_string(camf.height()) + "x" + std::to_string(camf.width()));
  }
  if (camf.channels() != cfg.c2d) {
    throw ValidationError("iem_enhance: camera features do not have C_2D channels");
  }
  const nn::Tensor depth = lidar::depth_features(dense_depth, params.depth);
  const nn::Tensor stacked = nn::concat({camf.features, depth}, 0);
  return {nn::conv2d(stacked, params.conv_weight, params.conv_bias, 1, 1), camf.stride};
}

SplatResult splat(
  const nn::Tensor & features, const nn::Tensor & depth_probs, int stride,
  const geom::CameraModel & cam, const geom::GridSpec & grid, const FusionConfig & cfg)
{
  const std::size_t channels = features.dim(0);
  const std::size_t h = features.dim(1);
  const std::size_t w = features.dim(2);
  const auto bins = static_cast<std::size_t>(cfg.depth_bins);
  if (depth_probs.rank() != 3 || depth_probs.dim(0) != bins || depth_probs.dim(1) != h ||
      depth_probs.dim(2) != w) {
    throw ValidationError(
      "splat: depth distribution " + nn::to_string(depth_probs.shape()) +
      " does not match features " + nn::to_string(features.shape()));
  }
  const std::size_t cells = h * w;
  const std::size_t nvox = grid.num_voxels();
  const auto centers = cfg.bin_centers();

  // target voxel per (bin, cell), nvox when the sample leaves the grid
  auto target = std::make_shared<std::vector<std::size_t>>(bins * cells, nvox);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t b = 0; b < bins; ++b) {
        const geom::Vec3 p = geom::unproject_pixel(
          static_cast<double>(j) * stride, static_cast<double>(i) * stride, centers[b], cam);
        const auto lookup = geom::voxel_index(p, grid);
        if (lookup.valid) {
          (*target)[b * cells + i * w + j] = grid.linear(lookup.index);
        }
      }
    }
  }

  SplatResult result;
  result.depth_probs = depth_probs;
  auto f = features.data();
  auto p = depth_probs.data();
  std::vector<double> cell_l1(cells, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t cell = 0; cell < cells; ++cell) {
      cell_l1[cell] += std::abs(f[c * cells + cell]);
    }
  }
  std::vector<double> out(channels * nvox, 0.0);
  for (std::size_t b = 0; b < bins; ++b) {
    for (std::size_t cell = 0; cell < cells; ++cell) {
      const double prob = p[b * cells + cell];
      const double mass = prob * cell_l1[cell];
      result.total_mass += mass;
      const std::size_t vox = (*target)[b * cells + cell];
      if (vox == nvox) {
        result.dropped_mass += mass;
        continue;
      }
      for (std::size_t c = 0; c < channels; ++c) {
        out[c * nvox + vox] += prob * f[c * cells + cell];
      }
    }
  }
  const auto & d = grid.dims();
  nn::Shape shape{channels, static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]),
                  static_cast<std::size_t>(d[2])};
  result.volume = nn::Tensor::make_result(
    "splat", std::move(shape), std::move(out), {features, depth_probs},
    [target, channels, cells, bins, nvox](const nn::detail::Node & self) {
      auto f = self.parents[0].data();
      auto p = self.parents[1].data();
      double * gf = nn::grad_sink(self.parents[0]);
      double * gp = nn::grad_sink(self.parents[1]);
      for (std::size_t b = 0; b < bins; ++b) {
        for (std::size_t cell = 0; cell < cells; ++cell) {
          const std::size_t vox = (*target)[b * cells + cell];
          if (vox == nvox) {
            continue;
          }
          const double prob = p[b * cells + cell];
          double dot = 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            const double g = self.grad[c * nvox + vox];
            dot += g * f[c * cells + cell];
            if (gf) {
              gf[c * cells + cell] += prob * g;
            }
          }
          if (gp) {
            gp[b * cells + cell] += dot;
          }
        }
      }
    });
  return result;
}

SplatResult lift_splat(
  const CameraFeatures & camf, const geom::CameraModel & cam, const geom::GridSpec & grid,
  const FusionConfig & cfg, const LiftSplatParams & params)
{
  const nn::Tensor logits = nn::conv2d(camf.features, params.depth_weight, params.depth_bias, 1, 0);
  const nn::Tensor probs = nn::softmax(logits, 0);
  return splat(camf.features, probs, camf.stride, cam, grid, cfg);
}

FusedVolume unified_fuse(
  const nn::Tensor & lidar_volume, const nn::Tensor & camera_volume, const FusionConfig & cfg,
  const UnifiedFusionParams & params)
{
  if (lidar_volume.rank() != 4 || camera_volume.rank() != 4) {
    throw ValidationError("unified_fuse expects [C, X, Y, Z] volumes");
  }
  for (std::size_t a = 1; a < 4; ++a) {
    if (lidar_volume.dim(a) != camera_volume.dim(a)) {
      throw ValidationError(
        "unified_fuse: spatial dims differ " + nn::to_string(lidar_volume.shape()) + " vs " +
        nn::to_string(camera_volume.shape()));
    }
  }
  FusedVolume out;
  if (!cfg.adaptive_weighting) {
    out.fused = nn::conv3d(
      nn::concat({lidar_volume, camera_volume}, 0), params.concat_weight, params.concat_bias, 1, 0);
    return out;
  }
  out.projected_camera = nn::conv3d(camera_volume, params.proj_weight, params.proj_bias, 1, 0);
  const nn::Tensor a =
    nn::conv3d(lidar_volume, params.gate_lidar_weight, params.gate_lidar_bias, 1, 0);
  const nn::Tensor b =
    nn::conv3d(out.projected_camera, params.gate_camera_weight, params.gate_camera_bias, 1, 0);
  out.gate_logits =
    nn::conv3d(nn::concat({a, b}, 0), params.gate_out_weight, params.gate_out_bias, 1, 1);
  out.fused = nn::gated_blend(out.gate_logits, lidar_volume, out.projected_camera);
  return out;
}

nn::Tensor bev_collapse(const nn::Tensor & volume)
{
  if (volume.rank() != 4) {
    throw ValidationError("bev_collapse expects [C, X, Y, Z]");
  }
  const std::size_t c = volume.dim(0);
  const std::size_t x = volume.dim(1);
  const std::size_t y = volume.dim(2);
  const std::size_t z = volume.dim(3);
  return nn::reshape(nn::permute(volume, {3, 0, 1, 2}), {z * c, x, y});
}

nn::Tensor bev_uncollapse(const nn::Tensor & bev, std::size_t z_extent)
{
  if (bev.rank() != 3 || z_extent == 0 || bev.dim(0) % z_extent != 0) {
    throw ValidationError("bev_uncollapse: channel count not divisible by Z");
  }
  const std::size_t c = bev.dim(0) / z_extent;
  const nn::Tensor zc = nn::reshape(bev, {z_extent, c, bev.dim(1), bev.dim(2)});
  return nn::permute(zc, {1, 2, 3, 0});
}

nn::Tensor bev_encode(const nn::Tensor & bev, const BevEncoderParams & params)
{
  const nn::Tensor hidden =
    nn::relu(nn::conv2d(bev, params.conv1_weight, params.conv1_bias, 1, 1));
  return nn::add(bev, nn::conv2d(hidden, params.conv2_weight, params.conv2_bias, 1, 1));
}

VemParams make_vem_params(nn::ParameterStore & store, const FusionConfig & cfg)
{
  return {
    store.add_glorot("vem.linear.weight", {cfg.c2d, cfg.c3d}, cfg.c2d, cfg.c3d),
    store.add_constant("vem.linear.bias", {cfg.c3d}),
  };
}

IemParams make_iem_params(nn::ParameterStore & store, const FusionConfig & cfg)
{
  const std::size_t cd = cfg.c_depth;
  const std::size_t cin = cfg.c2d + cd;
  IemParams p;
  p.depth.conv1_weight = store.add_glorot("iem.depth.conv1.weight", {cd, 1, 3, 3}, 9, cd * 9);
  p.depth.conv1_bias = store.add_constant("iem.depth.conv1.bias", {cd});
  p.depth.conv2_weight = store.add_glorot("iem.depth.conv2.weight", {cd, cd, 1, 1}, cd, cd);
  p.depth.conv2_bias = store.add_constant("iem.depth.conv2.bias", {cd});
  p.conv_weight =
    store.add_glorot("iem.conv.weight", {cfg.c2d, cin, 3, 3}, cin * 9, cfg.c2d * 9);
  p.conv_bias = store.add_constant("iem.conv.bias", {cfg.c2d});
  return p;
}

LiftSplatParams make_lift_splat_params(nn::ParameterStore & store, const FusionConfig & cfg)
{
  const auto d = static_cast<std::size_t>(cfg.depth_bins);
  return {
    store.add_glorot("lss.depth.weight", {d, cfg.c2d, 1, 1}, cfg.c2d, d),
    store.add_constant("lss.depth.bias", {d}),
  };
}

UnifiedFusionParams make_unified_fusion_params(
  nn::ParameterStore & store, const FusionConfig & cfg)
{
  const std::size_t c2 = cfg.c2d;
  const std::size_t c3 = cfg.c3d;
  const std::size_t g = cfg.gate_channels;
  UnifiedFusionParams p;
  p.proj_weight = store.add_glorot("ufusion.proj.weight", {c3, c2, 1, 1, 1}, c2, c3);
  p.proj_bias = store.add_constant("ufusion.proj.bias", {c3});
  p.gate_lidar_weight = store.add_glorot("ufusion.gate_lidar.weight", {g, c3, 1, 1, 1}, c3, g);
  p.gate_lidar_bias = store.add_constant("ufusion.gate_lidar.bias", {g});
  p.gate_camera_weight = store.add_glorot("ufusion.gate_camera.weight", {g, c3, 1, 1, 1}, c3, g);
  p.gate_camera_bias = store.add_constant("ufusion.gate_camera.bias", {g});
  p.gate_out_weight =
    store.add_glorot("ufusion.gate_out.weight", {1, 2 * g, 3, 3, 3}, 2 * g * 27, 27);
  p.gate_out_bias = store.add_constant("ufusion.gate_out.bias", {1});
  p.concat_weight = store.add_glorot("ufusion.concat.weight", {c3, c3 + c2, 1, 1, 1}, c3 + c2, c3);
  p.concat_bias = store.add_constant("ufusion.concat.bias", {c3});
  return p;
}

BevEncoderParams make_bev_encoder_params(
  nn::ParameterStore & store, const FusionConfig & cfg, std::size_t bev_channels)
{
  const std::size_t hidden = cfg.bev_hidden;
  BevEncoderParams p;
  p.conv1_weight =
    store.add_glorot("bev.conv1.weight", {hidden, bev_channels, 3, 3}, bev_channels * 9, hidden * 9);
  p.conv1_bias = store.add_constant("bev.conv1.bias", {hidden});
  p.conv2_weight =
    store.add_glorot("bev.conv2.weight", {bev_channels, hidden, 3, 3}, hidden * 9, bev_channels * 9);
  p.conv2_bias = store.add_constant("bev.conv2.bias", {bev_channels});
  return p;
}

}  // namespace fusiondet::fusion
