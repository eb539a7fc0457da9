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

#include "fusiondet/harness/scene.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace fusiondet::harness
{

using Json = nlohmann::ordered_json;

namespace
{

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr std::array<double, 3> kGroundColor = {0.35, 0.35, 0.35};
constexpr std::array<double, 3> kSkyColor = {0.55, 0.7, 0.9};

struct Hit
{
  double distance = 0.0;
  int box = -1;  // -1 ground
};

std::optional<Hit> cast_ray(
  const geom::Vec3 & origin, const geom::Vec3 & dir, std::span<const Box3D> boxes, double max_range)
{
  std::optional<Hit> best;
  if (dir.z() < 0.0) {
    const double t = -origin.z() / dir.z();
    if (t > 0.0 && t <= max_range) {
      best = Hit{t, -1};
    }
  }
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const auto t = ray_box_distance(origin, dir, boxes[b]);
    if (t && *t <= max_range && (!best || *t < best->distance)) {
      best = Hit{*t, static_cast<int>(b)};
    }
  }
  return best;
}

bool overlaps(const Box3D & a, const Box3D & b, double gap)
{
  const double ra = 0.5 * std::hypot(a.size.x(), a.size.y());
  const double rb = 0.5 * std::hypot(b.size.x(), b.size.y());
  return std::hypot(a.center.x() - b.center.x(), a.center.y() - b.center.y()) < ra + rb + gap;
}

lidar::PointCloud scan(const RunConfig & cfg, std::span<const Box3D> boxes, Rng & rng)
{
  const LidarConfig & l = cfg.lidar;
  const int columns = static_cast<int>(std::lround(360.0 / l.azimuth_step_deg));
  lidar::PointCloud pc;
  for (int row = 0; row < l.elevation_rows; ++row) {
    const double elev = l.elevation_rows == 1
                          ? l.elevation_min_deg
                          : l.elevation_min_deg + (l.elevation_max_deg - l.elevation_min_deg) *
                                                    row / (l.elevation_rows - 1);
    const double ce = std::cos(elev * kDegToRad);
    const double se = std::sin(elev * kDegToRad);
    for (int col = 0; col < columns; ++col) {
      const double az = col * l.azimuth_step_deg * kDegToRad;
      const geom::Vec3 dir(ce * std::cos(az), ce * std::sin(az), se);
      const auto hit = cast_ray(l.position, dir, boxes, l.max_range);
      if (!hit) {
        continue;
      }
      const double range = hit->distance + l.range_noise * rng.normal();
      const geom::Vec3 p = l.position + range * dir;
      const double intensity =
        hit->box < 0 ? l.ground_intensity
                     : cfg.dataset.classes[static_cast<std::size_t>(boxes[hit->box].class_id)].intensity;
      pc.points.push_back({p.x(), p.y(), p.z(), intensity});
    }
  }
  return pc;
}

std::vector<double> render(const RunConfig & cfg, const geom::CameraModel & cam, std::span<const Box3D> boxes)
{
  const int h = cam.height();
  const int w = cam.width();
  const geom::Mat3 r = cam.extrinsics().topLeftCorner<3, 3>();
  const geom::Vec3 centre = -r.transpose() * cam.extrinsics().topRightCorner<3, 1>();
  std::vector<double> image(3 * static_cast<std::size_t>(h) * w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const geom::Vec3 dir = (geom::unproject_pixel(u, v, 1.0, cam) - centre).normalized();
      const auto hit = cast_ray(centre, dir, boxes, std::numeric_limits<double>::infinity());
      const auto & color =
        !hit ? kSkyColor
             : (hit->box < 0 ? kGroundColor
                             : cfg.dataset.classes[static_cast<std::size_t>(boxes[hit->box].class_id)].color);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        image[ch * plane + static_cast<std::size_t>(v) * w + u] = color[ch];
      }
    }
  }
  return image;
}

std::vector<double> flatten(const geom::Mat3 & m)
{
  std::vector<double> out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.push_back(m(i, j));
    }
  }
  return out;
}

std::vector<double> flatten(const geom::Mat4 & m)
{
  std::vector<double> out;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      out.push_back(m(i, j));
    }
  }
  return out;
}

template <class T>
T require(const Json & j, const char * key)
{
  if (!j.is_object() || !j.contains(key)) {
    throw ValidationError(std::string("scene file: missing key ") + key);
  }
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception & e) {
    throw ValidationError(std::string("scene file: bad value for ") + key + ": " + e.what());
  }
}

}  // namespace

bool Scene::operator==(const Scene & other) const
{
  auto same_box = [](const Box3D & a, const Box3D & b) {
    return a.center == b.center && a.size == b.size && a.yaw == b.yaw && a.class_id == b.class_id &&
           a.score == b.score;
  };
  return id == other.id && seed == other.seed && points.points == other.points.points &&
         camera.intrinsics() == other.camera.intrinsics() &&
         camera.extrinsics() == other.camera.extrinsics() &&
         camera.height() == other.camera.height() && camera.width() == other.camera.width() &&
         image == other.image && boxes.size() == other.boxes.size() &&
         std::equal(boxes.begin(), boxes.end(), other.boxes.begin(), same_box);
}

std::optional<double> ray_box_distance(
  const geom::Vec3 & origin, const geom::Vec3 & dir, const Box3D & box)
{
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const geom::Vec3 d = origin - box.center;
  // Box frame: x along the heading (length), y across (width).
  const geom::Vec3 o(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
  const geom::Vec3 r(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
  const geom::Vec3 half(0.5 * box.size.y(), 0.5 * box.size.x(), 0.5 * box.size.z());
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (r[a] == 0.0) {
      if (std::abs(o[a]) > half[a]) {
        return std::nullopt;
      }
      continue;
    }
    double t0 = (-half[a] - o[a]) / r[a];
    double t1 = (half[a] - o[a]) / r[a];
    if (t0 > t1) {
      std::swap(t0, t1);
    }
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_near <= 0.0) {
    return std::nullopt;
  }
  return t_near;
}

Scene gen_scene(std::uint64_t seed, const RunConfig & cfg, int num_objects)
{
  const DatasetConfig & ds = cfg.dataset;
  Rng rng(seed);
  const int n = num_objects < 0 ? rng.uniform_int(ds.min_objects, ds.max_objects) : num_objects;

  Scene scene;
  scene.seed = seed;
  scene.camera = cfg.camera.model();
  const geom::GridSpec grid = cfg.grid();

  for (int attempt = 0; attempt < ds.max_attempts; ++attempt) {
    std::vector<Box3D> boxes;
    bool ok = true;
    for (int k = 0; k < n && ok; ++k) {
      Box3D b;
      b.class_id = static_cast<int>(rng.below(ds.classes.size()));
      b.size = ds.classes[static_cast<std::size_t>(b.class_id)].size;
      b.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
      b.center = {rng.uniform(ds.x_min, ds.x_max), rng.uniform(ds.y_min, ds.y_max), 0.5 * b.size.z()};
      b.score = 1.0;
      ok = geom::project_point(b.center, scene.camera).valid && geom::voxel_index(b.center, grid).valid;
      for (const auto & other : boxes) {
        ok = ok && !overlaps(b, other, ds.min_gap);
      }
      boxes.push_back(b);
    }
    if (!ok) {
      continue;
    }
    lidar::PointCloud pc = scan(cfg, boxes, rng);
    for (const auto & b : boxes) {
      const auto inside = std::count_if(pc.points.begin(), pc.points.end(), [&](const lidar::LidarPoint & p) {
        return b.contains(p.position(), 0.1);
      });
      ok = ok && inside >= ds.min_points_per_box;
    }
    if (!ok) {
      continue;
    }
    scene.points = std::move(pc);
    scene.boxes = std::move(boxes);
    scene.image = render(cfg, scene.camera, scene.boxes);
    return scene;
  }
  throw ValidationError(
    "gen_scene: could not place " + std::to_string(n) + " boxes without overlap after " +
    std::to_string(ds.max_attempts) + " attempts");
}

Scene dataset_scene(const RunConfig & cfg, std::size_t index)
{
  const std::uint64_t seed = Rng::named(cfg.train.seed, "scene/" + std::to_string(index)).next_u64();
  Scene s = gen_scene(seed, cfg);
  s.id = index;
  return s;
}

std::string scene_to_json(const Scene & scene)
{
  Json j = Json::object();
  j["id"] = scene.id;
  j["seed"] = scene.seed;
  j["camera"] = {
    {"height", scene.camera.height()},
    {"width", scene.camera.width()},
    {"intrinsics", flatten(scene.camera.intrinsics())},
    {"extrinsics", flatten(scene.camera.extrinsics())},
  };
  std::vector<double> pts;
  pts.reserve(scene.points.points.size() * 4);
  for (const auto & p : scene.points.points) {
    pts.insert(pts.end(), {p.x, p.y, p.z, p.intensity});
  }
  j["points"] = {{"layout", "x y z intensity"}, {"data", pts}};
  j["image"] = {
    {"shape", {3, scene.camera.height(), scene.camera.width()}},
    {"data", scene.image},
  };
  Json boxes = Json::array();
  for (const auto & b : scene.boxes) {
    boxes.push_back({
      {"class_id", b.class_id},
      {"center", {b.center.x(), b.center.y(), b.center.z()}},
      {"size", {b.size.x(), b.size.y(), b.size.z()}},
      {"yaw", b.yaw},
    });
  }
  j["boxes"] = boxes;
  return j.dump() + "\n";
}

Scene scene_from_json(const std::string & text)
{
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error & e) {
    throw ValidationError(std::string("scene file: malformed JSON: ") + e.what());
  }
  Scene s;
  s.id = require<std::uint64_t>(j, "id");
  s.seed = require<std::uint64_t>(j, "seed");
  const Json cam = require<Json>(j, "camera");
  const auto k = require<std::vector<double>>(cam, "intrinsics");
  const auto t = require<std::vector<double>>(cam, "extrinsics");
  if (k.size() != 9 || t.size() != 16) {
    throw ValidationError("scene file: camera matrices must have 9 and 16 entries");
  }
  geom::Mat3 km;
  geom::Mat4 tm;
  for (int i = 0; i < 9; ++i) {
    km(i / 3, i % 3) = k[i];
  }
  for (int i = 0; i < 16; ++i) {
    tm(i / 4, i % 4) = t[i];
  }
  s.camera = geom::CameraModel(km, tm, require<int>(cam, "height"), require<int>(cam, "width"));
  const auto pts = require<std::vector<double>>(require<Json>(j, "points"), "data");
  if (pts.size() % 4 != 0) {
    throw ValidationError("scene file: point data length must be a multiple of 4");
  }
  for (std::size_t i = 0; i < pts.size(); i += 4) {
    s.points.points.push_back({pts[i], pts[i + 1], pts[i + 2], pts[i + 3]});
  }
  s.image = require<std::vector<double>>(require<Json>(j, "image"), "data");
  if (s.image.size() != 3 * static_cast<std::size_t>(s.camera.height()) * s.camera.width()) {
    throw ValidationError("scene file: image size does not match the camera");
  }
  for (const auto & jb : require<Json>(j, "boxes")) {
    Box3D b;
    b.class_id = require<int>(jb, "class_id");
    const auto c = require<std::array<double, 3>>(jb, "center");
    const auto sz = require<std::array<double, 3>>(jb, "size");
    b.center = {c[0], c[1], c[2]};
    b.size = {sz[0], sz[1], sz[2]};
    b.yaw = require<double>(jb, "yaw");
    s.boxes.push_back(b);
  }
  return s;
}

void write_scene(const std::filesystem::path & path, const Scene & scene)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot write scene file " + path.string());
  }
  out << scene_to_json(scene);
}

Scene read_scene(const std::filesystem::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open scene file " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return scene_from_json(ss.str());
}

void write_dataset(const std::filesystem::path & dir, const std::vector<Scene> & scenes)
{
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04zu.json", i);
    write_scene(dir / name, scenes[i]);
  }
}

std::vector<Scene> read_dataset(const std::filesystem::path & dir)
{
  if (!std::filesystem::is_directory(dir)) {
    throw ValidationError("dataset directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto & e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("scene_", 0) == 0 && e.path().extension() == ".json") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw ValidationError("dataset directory holds no scene files: " + dir.string());
  }
  std::vector<Scene> scenes;
  for (const auto & f : files) {
    scenes.push_back(read_scene(f));
  }
  return scenes;
}

}  // namespace fusiondet::harness
