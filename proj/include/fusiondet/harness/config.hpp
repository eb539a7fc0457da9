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

#ifndef FUSIONDET__HARNESS__CONFIG_HPP_
#define FUSIONDET__HARNESS__CONFIG_HPP_

#include "fusiondet/fusion.hpp"
#include "fusiondet/geom.hpp"
#include "fusiondet/head.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fusiondet::harness
{

struct CameraConfig
{
  int height = 64;
  int width = 176;
  int stride = 4;
  double fx = 88.0;
  double fy = 88.0;
  double cx = 87.5;
  double cy = 31.5;
  geom::Vec3 position{0.0, 0.0, 1.6};

  geom::CameraModel model() const;
};

struct LidarConfig
{
  geom::Vec3 position{0.0, 0.0, 1.8};
  double azimuth_step_deg = 0.25;
  int elevation_rows = 32;
  double elevation_min_deg = -25.0;
  double elevation_max_deg = 5.0;
  double max_range = 50.0;
  double range_noise = 0.02;
  double ground_intensity = 0.1;
};

struct ClassTemplate
{
  std::string name;
  geom::Vec3 size;  // (w, l, h)
  std::array<double, 3> color{};
  double intensity = 0.5;
};

struct DatasetConfig
{
  std::size_t num_scenes = 8;
  int min_objects = 1;
  int max_objects = 3;
  double x_min = 3.0;
  double x_max = 15.0;
  double y_min = -10.0;
  double y_max = 10.0;
  double min_gap = 0.2;
  int min_points_per_box = 20;
  int max_attempts = 100;
  std::vector<ClassTemplate> classes;
};

struct TrainConfig
{
  std::size_t steps = 500;
  std::size_t batch_size = 1;
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 7;
  bool debug = false;
};

struct AblationConfig
{
  std::vector<int> k_values{1, 3, 6, 9, 10};
  bool distance_prior = true;
  bool adaptive_weighting = true;
  bool components = true;
};

struct RunConfig
{
  geom::Vec3 grid_min{-16.0, -16.0, -1.0};
  geom::Vec3 grid_max{16.0, 16.0, 3.0};
  geom::Vec3 voxel_size{0.5, 0.5, 0.5};
  CameraConfig camera;
  LidarConfig lidar;
  DatasetConfig dataset;
  fusion::FusionConfig fusion;
  head::HeadConfig head;
  TrainConfig train;
  AblationConfig ablation;

  geom::GridSpec grid() const;
  /// Cross-field checks; throws ValidationError.
  void validate() const;
};

RunConfig default_config();

/// Strict parse: unknown keys, wrong types and failed validation all throw
/// ValidationError. Missing keys keep their defaults.
RunConfig parse_config(const std::string & text);
RunConfig load_config(const std::filesystem::path & path);
std::string serialize_config(const RunConfig & cfg);

}  // namespace fusiondet::harness

#endif  // FUSIONDET__HARNESS__CONFIG_HPP_
