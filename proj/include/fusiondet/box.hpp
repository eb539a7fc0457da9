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

#ifndef FUSIONDET__BOX_HPP_
#define FUSIONDET__BOX_HPP_

#include "fusiondet/geom.hpp"

#include <array>
#include <cmath>

namespace fusiondet
{

/// Oriented 3D box. `size` is (w, l, h): l runs along the heading, yaw is the
/// heading angle about +z measured from +x.
struct Box3D
{
  geom::Vec3 center = geom::Vec3::Zero();
  geom::Vec3 size = geom::Vec3::Ones();
  double yaw = 0.0;
  int class_id = 0;
  double score = 1.0;

  /// Regression target layout (x, y, z, w, l, h, sin yaw, cos yaw).
  std::array<double, 8> encode() const
  {
    return {center.x(), center.y(), center.z(), size.x(), size.y(), size.z(),
            std::sin(yaw),  std::cos(yaw)};
  }

  /// The (sin, cos) pair is normalised through atan2.
  static Box3D decode(const std::array<double, 8> & p, int class_id, double score)
  {
    Box3D b;
    b.center = {p[0], p[1], p[2]};
    b.size = {p[3], p[4], p[5]};
    b.yaw = std::atan2(p[6], p[7]);
    b.class_id = class_id;
    b.score = score;
    return b;
  }

  /// Point-in-box test with the box grown by `margin` on every side.
  bool contains(const geom::Vec3 & p, double margin = 0.0) const
  {
    const geom::Vec3 d = p - center;
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    const double along = c * d.x() + s * d.y();
    const double across = -s * d.x() + c * d.y();
    return std::abs(along) <= 0.5 * size.y() + margin &&
           std::abs(across) <= 0.5 * size.x() + margin &&
           std::abs(d.z()) <= 0.5 * size.z() + margin;
  }
};

}  // namespace fusiondet

#endif  // FUSIONDET__BOX_HPP_
