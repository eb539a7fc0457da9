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

#include "fusiondet/harness/config.hpp"

#include "fusiondet/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace fusiondet::harness
{

using Json = nlohmann::ordered_json;

namespace
{

// Binds config fields to a JSON object in either direction so that the schema
// is spelled out once. Reading rejects keys that no field claimed.
class Binder
{
public:
  Binder(const Json * in, Json * out, std::string path) : in_(in), out_(out), path_(std::move(path))
  {
    if (in_ && !in_->is_object()) {
      throw ValidationError("config: " + path_ + " must be an object");
    }
  }

  template <class T>
  void field(const char * key, T & value)
  {
    seen_.insert(key);
    if (out_) {
      write(value, (*out_)[key]);
    }
    if (in_ && in_->contains(key)) {
      read(in_->at(key), value, path_ + "." + key);
    }
  }

  template <class F>
  void section(const char * key, F && body)
  {
    seen_.insert(key);
    const Json * sub_in = nullptr;
    if (in_ && in_->contains(key)) {
      sub_in = &in_->at(key);
    }
    Json * sub_out = out_ ? &(*out_)[key] : nullptr;
    if (sub_out) {
      *sub_out = Json::object();
    }
    Binder sub(sub_in, sub_out, path_ + "." + key);
    body(sub);
    sub.finish();
  }

  void finish() const
  {
    if (!in_) {
      return;
    }
    for (const auto & item : in_->items()) {
      if (!seen_.count(item.key())) {
        throw ValidationError("config: unknown key " + path_ + "." + item.key());
      }
    }
  }

private:
  template <class T>
  static void write(const T & value, Json & j)
  {
    if constexpr (std::is_same_v<T, geom::Vec3>) {
      j = Json::array({value.x(), value.y(), value.z()});
    } else if constexpr (std::is_same_v<T, std::vector<ClassTemplate>>) {
      j = Json::array();
      for (const auto & c : value) {
        Json e = Json::object();
        e["name"] = c.name;
        e["size"] = Json::array({c.size.x(), c.size.y(), c.size.z()});
        e["color"] = c.color;
        e["intensity"] = c.intensity;
        j.push_back(e);
      }
    } else {
      j = value;
    }
  }

  static double read_number(const Json & j, const std::string & path)
  {
    if (!j.is_number()) {
      throw ValidationError("config: " + path + " must be a number");
    }
    return j.get<double>();
  }

  template <class T>
  static void read(const Json & j, T & value, const std::string & path)
  {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) {
        throw ValidationError("config: " + path + " must be a boolean");
      }
      value = j.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) {
        throw ValidationError("config: " + path + " must be an integer");
      }
      if constexpr (std::is_unsigned_v<T>) {
        if (j.is_number_unsigned()) {
          value = j.get<T>();
        } else if (j.get<long long>() < 0) {
          throw ValidationError("config: " + path + " must be non-negative");
        } else {
          value = static_cast<T>(j.get<long long>());
        }
      } else {
        value = j.get<T>();
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      value = read_number(j, path);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) {
        throw ValidationError("config: " + path + " must be a string");
      }
      value = j.get<std::string>();
    } else if constexpr (std::is_same_v<T, geom::Vec3>) {
      std::array<double, 3> a{};
      read(j, a, path);
      value = {a[0], a[1], a[2]};
    } else if constexpr (std::is_same_v<T, std::array<double, 3>>) {
      if (!j.is_array() || j.size() != 3) {
        throw ValidationError("config: " + path + " must be an array of 3 numbers");
      }
      for (std::size_t i = 0; i < 3; ++i) {
        value[i] = read_number(j[i], path);
      }
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      if (!j.is_array()) {
        throw ValidationError("config: " + path + " must be an array");
      }
      value.clear();
      for (const auto & e : j) {
        int v = 0;
        read(e, v, path);
        value.push_back(v);
      }
    } else if constexpr (std::is_same_v<T, std::vector<ClassTemplate>>) {
      if (!j.is_array()) {
        throw ValidationError("config: " + path + " must be an array");
      }
      value.clear();
      for (const auto & e : j) {
        ClassTemplate c;
        Binder b(&e, nullptr, path + "[]");
        b.field("name", c.name);
        b.field("size", c.size);
        b.field("color", c.color);
        b.field("intensity", c.intensity);
        b.finish();
        value.push_back(c);
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  const Json * in_;
  Json * out_;
  std::string path_;
  std::set<std::string> seen_;
};

void bind(Binder & root, RunConfig & c)
{
  root.section("grid", [&](Binder & b) {
    b.field("range_min", c.grid_min);
    b.field("range_max", c.grid_max);
    b.field("voxel_size", c.voxel_size);
  });
  root.section("camera", [&](Binder & b) {
    b.field("height", c.camera.height);
    b.field("width", c.camera.width);
    b.field("stride", c.camera.stride);
    b.field("fx", c.camera.fx);
    b.field("fy", c.camera.fy);
    b.field("cx", c.camera.cx);
    b.field("cy", c.camera.cy);
    b.field("position", c.camera.position);
  });
  root.section("lidar", [&](Binder & b) {
    b.field("position", c.lidar.position);
    b.field("azimuth_step_deg", c.lidar.azimuth_step_deg);
    b.field("elevation_rows", c.lidar.elevation_rows);
    b.field("elevation_min_deg", c.lidar.elevation_min_deg);
    b.field("elevation_max_deg", c.lidar.elevation_max_deg);
    b.field("max_range", c.lidar.max_range);
    b.field("range_noise", c.lidar.range_noise);
    b.field("ground_intensity", c.lidar.ground_intensity);
  });
  root.section("dataset", [&](Binder & b) {
    b.field("num_scenes", c.dataset.num_scenes);
    b.field("min_objects", c.dataset.min_objects);
    b.field("max_objects", c.dataset.max_objects);
    b.field("x_min", c.dataset.x_min);
    b.field("x_max", c.dataset.x_max);
    b.field("y_min", c.dataset.y_min);
    b.field("y_max", c.dataset.y_max);
    b.field("min_gap", c.dataset.min_gap);
    b.field("min_points_per_box", c.dataset.min_points_per_box);
    b.field("max_attempts", c.dataset.max_attempts);
    b.field("classes", c.dataset.classes);
  });
  root.section("fusion", [&](Binder & b) {
    b.field("k_neighbors", c.fusion.k_neighbors);
    b.field("distance_prior", c.fusion.distance_prior);
    b.field("adaptive_weighting", c.fusion.adaptive_weighting);
    b.field("use_vem", c.fusion.use_vem);
    b.field("use_iem", c.fusion.use_iem);
    b.field("use_ufusion", c.fusion.use_ufusion);
    b.field("depth_bins", c.fusion.depth_bins);
    b.field("d_min", c.fusion.d_min);
    b.field("d_max", c.fusion.d_max);
    b.field("c2d", c.fusion.c2d);
    b.field("c3d", c.fusion.c3d);
    b.field("c_depth", c.fusion.c_depth);
    b.field("knn_epsilon", c.fusion.knn_epsilon);
    b.field("gate_channels", c.fusion.gate_channels);
    b.field("bev_hidden", c.fusion.bev_hidden);
  });
  root.section("head", [&](Binder & b) {
    b.field("num_queries", c.head.num_queries);
    b.field("d_model", c.head.d_model);
    b.field("num_classes", c.head.num_classes);
    b.field("cost_class", c.head.cost_class);
    b.field("cost_box", c.head.cost_box);
    b.field("loss_box_weight", c.head.loss_box_weight);
    b.field("focal_alpha", c.head.focal_alpha);
    b.field("focal_gamma", c.head.focal_gamma);
  });
  root.section("train", [&](Binder & b) {
    b.field("steps", c.train.steps);
    b.field("batch_size", c.train.batch_size);
    b.field("lr", c.train.lr);
    b.field("beta1", c.train.beta1);
    b.field("beta2", c.train.beta2);
    b.field("eps", c.train.eps);
    b.field("seed", c.train.seed);
    b.field("debug", c.train.debug);
  });
  root.section("ablation", [&](Binder & b) {
    b.field("k_values", c.ablation.k_values);
    b.field("distance_prior", c.ablation.distance_prior);
    b.field("adaptive_weighting", c.ablation.adaptive_weighting);
    b.field("components", c.ablation.components);
  });
}

}  // namespace

geom::CameraModel CameraConfig::model() const
{
  return geom::CameraModel::from_focal(
    fx, fy, cx, cy, geom::forward_looking_extrinsics(position), height, width);
}

geom::GridSpec RunConfig::grid() const { return geom::GridSpec(grid_min, grid_max, voxel_size); }

void RunConfig::validate() const
{
  (void)grid();
  fusion.validate();
  head.validate();
  (void)camera.model();
  if (camera.stride <= 0 || camera.height % camera.stride != 0 ||
      camera.width % camera.stride != 0) {
    throw ValidationError("config: camera stride must divide the image height and width");
  }
  if (lidar.azimuth_step_deg <= 0.0 || lidar.elevation_rows < 1 ||
      lidar.elevation_max_deg < lidar.elevation_min_deg || lidar.max_range <= 0.0 ||
      lidar.range_noise < 0.0) {
    throw ValidationError("config: invalid lidar scan pattern");
  }
  if (dataset.classes.empty()) {
    throw ValidationError("config: dataset.classes must not be empty");
  }
  if (dataset.classes.size() != head.num_classes) {
    throw ValidationError("config: head.num_classes must equal the number of dataset classes");
  }
  for (const auto & c : dataset.classes) {
    if (!(c.size.minCoeff() > 0.0)) {
      throw ValidationError("config: class " + c.name + " needs positive sizes");
    }
  }
  if (dataset.min_objects < 0 || dataset.max_objects < dataset.min_objects) {
    throw ValidationError("config: need 0 <= min_objects <= max_objects");
  }
  if (static_cast<std::size_t>(dataset.max_objects) > head.num_queries) {
    throw ValidationError("config: max_objects exceeds head.num_queries");
  }
  if (dataset.x_max <= dataset.x_min || dataset.y_max <= dataset.y_min) {
    throw ValidationError("config: empty placement region");
  }
  const geom::GridSpec g = grid();
  if (dataset.x_min < g.range_min().x() || dataset.x_max > g.range_max().x() ||
      dataset.y_min < g.range_min().y() || dataset.y_max > g.range_max().y()) {
    throw ValidationError("config: placement region must lie inside the grid range");
  }
  if (dataset.max_attempts < 1) {
    throw ValidationError("config: dataset.max_attempts must be positive");
  }
  if (train.batch_size == 0 || train.lr < 0.0) {
    throw ValidationError("config: batch_size must be positive and lr non-negative");
  }
  for (int k : ablation.k_values) {
    if (k < 1) {
      throw ValidationError("config: ablation k_values must be positive");
    }
  }
}

RunConfig default_config()
{
  RunConfig c;
  c.dataset.classes = {
    {"car", {1.8, 4.0, 1.6}, {0.85, 0.15, 0.15}, 0.8},
    {"pedestrian", {0.6, 0.6, 1.7}, {0.15, 0.8, 0.2}, 0.5},
    {"cyclist", {0.7, 1.8, 1.5}, {0.2, 0.3, 0.9}, 0.3},
  };
  return c;
}

RunConfig parse_config(const std::string & text)
{
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error & e) {
    throw ValidationError(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c = default_config();
  Binder root(&j, nullptr, "config");
  bind(root, c);
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("config: cannot open " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig & cfg)
{
  Json j = Json::object();
  RunConfig copy = cfg;
  Binder root(nullptr, &j, "config");
  bind(root, copy);
  return j.dump(2) + "\n";
}

}  // namespace fusiondet::harness
