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

#ifndef FUSIONDET__HARNESS__SCENE_HPP_
#define FUSIONDET__HARNESS__SCENE_HPP_

#include "fusiondet/box.hpp"
#include "fusiondet/harness/config.hpp"
#include "fusiondet/lidar.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fusiondet::harness
{

struct Scene
{
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  lidar::PointCloud points;
  geom::CameraModel camera = CameraConfig{}.model();
  std::vector<double> image;  // [3, H, W] in [0, 1]
  std::vector<Box3D> boxes;

  bool operator==(const Scene & other) const;
};

/// Distance along a unit ray to an oriented box, if hit in front of the origin.
std::optional<double> ray_box_distance(
  const geom::Vec3 & origin, const geom::Vec3 & dir, const Box3D & box);

/// Scene with `num_objects` boxes (a random count in the configured range when
/// negative). Layouts are redrawn until boxes do not overlap, project into the
/// image and each holds enough LiDAR returns; throws ValidationError after
/// dataset.max_attempts layouts.
Scene gen_scene(std::uint64_t seed, const RunConfig & cfg, int num_objects = -1);

/// Scene i of the dataset derived from train.seed.
Scene dataset_scene(const RunConfig & cfg, std::size_t index);

std::string scene_to_json(const Scene & scene);
Scene scene_from_json(const std::string & text);

void write_scene(const std::filesystem::path & path, const Scene & scene);
Scene read_scene(const std::filesystem::path & path);

/// Writes scene_0000.json ... into `dir`.
void write_dataset(const std::filesystem::path & dir, const std::vector<Scene> & scenes);
/// Reads all scene_*.json files of `dir` in name order.
std::vector<Scene> read_dataset(const std::filesystem::path & dir);

}  // namespace fusiondet::harness

#endif  // FUSIONDET__HARNESS__SCENE_HPP_
