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

#include "suites.hpp"

#include "oracles.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/fusion.hpp"
#include "fusiondet/harness/model.hpp"
#include "fusiondet/harness/train.hpp"
#include "fusiondet/head.hpp"
#include "fusiondet/hungarian.hpp"
#include "fusiondet/nn/grad_check.hpp"
#include "fusiondet/nn/ops.hpp"
#include "fusiondet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

namespace fusiondet::suites
{

namespace
{

using nn::Tensor;
using Values = std::vector<double>;

std::string fmt(const char * format, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

Values uniform_values(Rng & rng, std::size_t n, double lo = -1.0, double hi = 1.0)
{
  Values v(n);
  for (auto & x : v) {
    x = rng.uniform(lo, hi);
  }
  return v;
}

Tensor random_tensor(Rng & rng, nn::Shape shape, bool grad = true, double lo = -1.0, double hi = 1.0)
{
  const std::size_t n = nn::numel(shape);
  return Tensor(std::move(shape), uniform_values(rng, n, lo, hi), grad);
}

// Random linear functional of `out`: makes every output entry matter with a
// distinct weight so symmetric errors cannot cancel.
Tensor probe(const Tensor & out, const Tensor & weights) { return nn::sum(nn::mul(out, weights)); }

Tensor probe_weights(Rng & rng, const nn::Shape & shape) { return random_tensor(rng, shape, false); }

void randomize(nn::ParameterStore & store, Rng & rng, double scale)
{
  for (const auto & p : store.all()) {
    Tensor t = p.tensor;  // shares storage with the store's entry
    for (auto & v : t.mutable_data()) {
      v = rng.uniform(-scale, scale);
    }
  }
}

std::vector<Tensor> store_tensors(const nn::ParameterStore & store)
{
  std::vector<Tensor> out;
  for (const auto & p : store.all()) {
    out.push_back(p.tensor);
  }
  return out;
}

fusion::FusionConfig small_fusion()
{
  fusion::FusionConfig f;
  f.k_neighbors = 3;
  f.depth_bins = 4;
  f.d_min = 1.0;
  f.d_max = 6.0;
  f.c2d = 3;
  f.c3d = 4;
  f.c_depth = 2;
  f.gate_channels = 2;
  f.bev_hidden = 3;
  return f;
}

geom::CameraModel small_camera()
{
  return geom::CameraModel::from_focal(
    8.0, 8.0, 7.5, 3.5, geom::forward_looking_extrinsics({0.0, 0.0, 0.0}), 8, 16);
}

geom::GridSpec small_grid() { return geom::GridSpec({1.0, -2.0, -1.0}, {5.0, 2.0, 1.0}, {1.0, 1.0, 1.0}); }

// One op instance: the scalar function and the leaves to differentiate.
struct GradCase
{
  std::function<Tensor()> f;
  std::vector<Tensor> wrt;
  std::shared_ptr<nn::ParameterStore> store;  // keeps module parameters alive
};

using CaseBuilder = std::function<GradCase(Rng &)>;

GradCase with_store(std::shared_ptr<nn::ParameterStore> store, std::function<Tensor()> f, std::vector<Tensor> inputs)
{
  auto wrt = store_tensors(*store);
  wrt.insert(wrt.end(), inputs.begin(), inputs.end());
  return {std::move(f), std::move(wrt), std::move(store)};
}

const std::vector<std::pair<std::string, CaseBuilder>> & grad_cases()
{
  static const std::vector<std::pair<std::string, CaseBuilder>> cases = {
    {"linear",
     [](Rng & rng) {
       Tensor x = random_tensor(rng, {3, 4});
       Tensor w = random_tensor(rng, {4, 5});
       Tensor b = random_tensor(rng, {5});
       Tensor r = probe_weights(rng, {3, 5});
       return GradCase{[=] { return probe(nn::linear(x, w, b), r); }, {x, w, b}, nullptr};
     }},
    {"conv2d",
     [](Rng & rng) {
       Tensor x = random_tensor(rng, {2, 5, 7});
       Tensor w1 = random_tensor(rng, {3, 2, 3, 3});
       Tensor b1 = random_tensor(rng, {3});
       Tensor w2 = random_tensor(rng, {2, 2, 3, 3});
       Tensor r1 = probe_weights(rng, {3, 5, 7});
       Tensor r2 = probe_weights(rng, {2, 2, 3});
       return GradCase{
         [=] {
           return nn::add(
             probe(nn::conv2d(x, w1, b1, 1, 1), r1), probe(nn::conv2d(x, w2, Tensor(), 2, 0), r2));
         },
         {x, w1, b1, w2}, nullptr};
     }},
    {"conv3d",
     [](Rng & rng) {
       Tensor x = random_tensor(rng, {2, 3, 4, 3});
       Tensor w = random_tensor(rng, {2, 2, 3, 3, 3});
       Tensor b = random_tensor(rng, {2});
       Tensor r = probe_weights(rng, {2, 3, 4, 3});
       return GradCase{[=] { return probe(nn::conv3d(x, w, b, 1, 1), r); }, {x, w, b}, nullptr};
     }},
    {"softmax",
     [](Rng & rng) {
       Tensor x = random_tensor(rng, {3, 4}, true, -2.0, 2.0);
       Tensor r0 = probe_weights(rng, {3, 4});
       Tensor r1 = probe_weights(rng, {3, 4});
       return GradCase{
         [=] { return nn::add(probe(nn::softmax(x, 0), r0), probe(nn::softmax(x, 1), r1)); }, {x},
         nullptr};
     }},
    {"sigmoid",
     [](Rng & rng) {
       Tensor x = random_tensor(rng, {3, 4}, true, -3.0, 3.0);
       Tensor r = probe_weights(rng, {3, 4});
       return GradCase{[=] { return probe(nn::sigmoid(x), r); }, {x}, nullptr};
     }},
    {"relu",
     [](Rng & rng) {
       // Keep inputs away from the kink so central differences are exact.
       Values v(12);
       for (auto & e : v) {
         e = rng.uniform(0.1, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
       }
       Tensor x({3, 4}, v, true);
       Tensor r = probe_weights(rng, {3, 4});
       return GradCase{[=] { return probe(nn::relu(x), r); }, {x}, nullptr};
     }},
    {"attention",
     [](Rng & rng) {
       Tensor q = random_tensor(rng, {3, 4});
       Tensor k = random_tensor(rng, {5, 4});
       Tensor v = random_tensor(rng, {5, 2});
       Tensor r = probe_weights(rng, {3, 2});
       return GradCase{[=] { return probe(nn::attention(q, k, v), r); }, {q, k, v}, nullptr};
     }},
    {"iem_enhance",
     [](Rng & rng) {
       const auto cfg = small_fusion();
       auto store = std::make_shared<nn::ParameterStore>(rng.next_u64());
       const auto params = fusion::make_iem_params(*store, cfg);
       randomize(*store, rng, 0.5);
       Tensor feats = random_tensor(rng, {cfg.c2d, 4, 5});
       lidar::DepthMap depth(4, 5);
       for (std::size_t i = 0; i < depth.values.size(); ++i) {
         depth.values[i] = rng.uniform(1.0, 10.0);
         depth.mask[i] = 1;
       }
       Tensor r = probe_weights(rng, {cfg.c2d, 4, 5});
       return with_store(
         store,
         [=] { return probe(fusion::iem_enhance({feats, 1}, depth, cfg, params).features, r); },
         {feats});
     }},
    {"vem_enhance",
     [](Rng & rng) {
       const auto cfg = small_fusion();
       auto store = std::make_shared<nn::ParameterStore>(rng.next_u64());
       const auto params = fusion::make_vem_params(*store, cfg);
       randomize(*store, rng, 0.5);
       const geom::GridSpec grid = small_grid();
       lidar::SparseVoxelGrid voxels{grid, {}, Tensor(), {}};
       for (std::size_t l = 0; l < grid.num_voxels(); l += 3) {
         voxels.keys.push_back(grid.unlinear(l));
         voxels.point_counts.push_back(1);
       }
       voxels.features = random_tensor(rng, {voxels.keys.size(), cfg.c3d});
       Tensor cam_feats = random_tensor(rng, {cfg.c2d, 4, 8});
       const geom::CameraModel cam = small_camera();
       Tensor r = probe_weights(rng, {voxels.keys.size(), cfg.c3d});
       return with_store(
         store,
         [=] {
           return probe(fusion::vem_enhance(voxels, {cam_feats, 2}, cam, cfg, params).features, r);
         },
         {voxels.features, cam_feats});
     }},
    {"lift_splat",
     [](Rng & rng) {
       const auto cfg = small_fusion();
       auto store = std::make_shared<nn::ParameterStore>(rng.next_u64());
       const auto params = fusion::make_lift_splat_params(*store, cfg);
       randomize(*store, rng, 0.5);
       const geom::GridSpec grid = small_grid();
       const auto & d = grid.dims();
       Tensor feats = random_tensor(rng, {cfg.c2d, 4, 8});
       const geom::CameraModel cam = small_camera();
       Tensor r = probe_weights(
         rng, {cfg.c2d, static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]),
               static_cast<std::size_t>(d[2])});
       return with_store(
         store,
         [=] { return probe(fusion::lift_splat({feats, 2}, cam, grid, cfg, params).volume, r); },
         {feats});
     }},
    {"unified_fuse",
     [](Rng & rng) {
       auto cfg = small_fusion();
       auto store = std::make_shared<nn::ParameterStore>(rng.next_u64());
       const auto params = fusion::make_unified_fusion_params(*store, cfg);
       randomize(*store, rng, 0.5);
       Tensor lid = random_tensor(rng, {cfg.c3d, 3, 3, 2});
       Tensor cam = random_tensor(rng, {cfg.c2d, 3, 3, 2});
       Tensor r1 = probe_weights(rng, {cfg.c3d, 3, 3, 2});
       Tensor r2 = probe_weights(rng, {cfg.c3d, 3, 3, 2});
       auto plain = cfg;
       plain.adaptive_weighting = false;
       return with_store(
         store,
         [=] {
           return nn::add(
             probe(fusion::unified_fuse(lid, cam, cfg, params).fused, r1),
             probe(fusion::unified_fuse(lid, cam, plain, params).fused, r2));
         },
         {lid, cam});
     }},
    {"bev_encode",
     [](Rng & rng) {
       const auto cfg = small_fusion();
       auto store = std::make_shared<nn::ParameterStore>(rng.next_u64());
       const auto params = fusion::make_bev_encoder_params(*store, cfg, 4);
       randomize(*store, rng, 0.5);
       Tensor bev = random_tensor(rng, {4, 4, 4});
       Tensor r = probe_weights(rng, {4, 4, 4});
       return with_store(store, [=] { return probe(fusion::bev_encode(bev, params), r); }, {bev});
     }},
    {"decode",
     [](Rng & rng) {
       head::HeadConfig hc;
       hc.num_queries = 3;
       hc.d_model = 8;
       hc.num_classes = 2;
       auto store = std::make_shared<nn::ParameterStore>(rng.next_u64());
       const auto params = head::make_head_params(*store, hc, 5);
       randomize(*store, rng, 0.5);
       Tensor bev = random_tensor(rng, {5, 2, 2});
       Tensor r = probe_weights(rng, {3, 8});
       return with_store(store, [=] { return probe(head::decode(params, bev), r); }, {bev});
     }},
    {"predict",
     [](Rng & rng) {
       head::HeadConfig hc;
       hc.num_queries = 3;
       hc.d_model = 8;
       hc.num_classes = 2;
       auto store = std::make_shared<nn::ParameterStore>(rng.next_u64());
       const auto params = head::make_head_params(*store, hc, 5);
       randomize(*store, rng, 0.3);
       Tensor decoded = random_tensor(rng, {3, 8});
       const geom::GridSpec grid = small_grid();
       Tensor rp = probe_weights(rng, {3, 3});
       Tensor rb = probe_weights(rng, {3, 8});
       return with_store(
         store,
         [=] {
           const auto p = head::predict(params, decoded, grid);
           return nn::add(probe(p.probs, rp), probe(p.boxes, rb));
         },
         {decoded});
     }},
    {"focal_loss",
     [](Rng & rng) {
       Tensor probs = random_tensor(rng, {4, 3}, true, 0.05, 0.95);
       std::vector<std::size_t> targets(4);
       for (auto & t : targets) {
         t = rng.below(3);
       }
       return GradCase{
         [=] { return head::focal_loss(probs, targets, 0.25, 2.0, 2.0); }, {probs}, nullptr};
     }},
    {"l1_box_loss",
     [](Rng & rng) {
       Tensor boxes = random_tensor(rng, {4, 8});
       const std::vector<std::size_t> queries{2, 0};
       std::vector<std::array<double, head::kBoxParams>> targets(2);
       for (auto & t : targets) {
         for (auto & v : t) {
           v = rng.uniform(-1.0, 1.0);
         }
       }
       return GradCase{[=] { return head::l1_box_loss(boxes, queries, targets); }, {boxes}, nullptr};
     }},
  };
  return cases;
}

CheckResult compare_values(const std::string & name, const Values & got, const Values & want, double tol)
{
  if (got.size() != want.size()) {
    return {name, false, "size " + std::to_string(got.size()) + " vs " + std::to_string(want.size())};
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  return {name, worst <= tol, "max abs diff " + fmt("%.3g", worst)};
}

Values as_values(const Tensor & t) { return Values(t.data().begin(), t.data().end()); }

CheckResult conv2d_vs_oracle()
{
  double worst = 0.0;
  int cases = 0;
  Rng rng = Rng::named(11, "oracle/conv2d");
  while (cases < 30) {
    const std::size_t c = 1 + rng.below(3);
    const std::size_t h = 3 + rng.below(5);
    const std::size_t w = 3 + rng.below(5);
    const std::size_t o = 1 + rng.below(3);
    const std::size_t kh = 1 + 2 * rng.below(2);
    const std::size_t kw = 1 + 2 * rng.below(2);
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    const long eh = static_cast<long>(h) + 2 * pad - static_cast<long>(kh);
    const long ew = static_cast<long>(w) + 2 * pad - static_cast<long>(kw);
    if (eh < 0 || ew < 0 || eh % stride != 0 || ew % stride != 0) {
      continue;
    }
    const Values x = uniform_values(rng, c * h * w);
    const Values wt = uniform_values(rng, o * c * kh * kw);
    const Values b = uniform_values(rng, o);
    const Tensor got = nn::conv2d(
      Tensor({c, h, w}, x), Tensor({o, c, kh, kw}, wt), Tensor({o}, b), stride, pad);
    const Values want = oracles::conv2d(x, c, h, w, wt, o, kh, kw, b, stride, pad);
    const auto r = compare_values("", as_values(got), want, 1e-12);
    if (!r.passed && r.detail.rfind("size", 0) == 0) {
      return {"oracle/conv2d", false, r.detail};
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      worst = std::max(worst, std::abs(got.data()[i] - want[i]));
    }
    ++cases;
  }
  return {"oracle/conv2d", worst <= 1e-12, std::to_string(cases) + " shapes, max abs diff " + fmt("%.3g", worst)};
}

CheckResult conv3d_vs_oracle()
{
  double worst = 0.0;
  int cases = 0;
  Rng rng = Rng::named(12, "oracle/conv3d");
  while (cases < 15) {
    const std::size_t c = 1 + rng.below(2);
    const std::array<std::size_t, 3> n{3 + rng.below(3), 3 + rng.below(3), 2 + rng.below(3)};
    const std::size_t o = 1 + rng.below(2);
    const std::array<std::size_t, 3> k{1 + 2 * rng.below(2), 1 + 2 * rng.below(2), 1 + 2 * rng.below(2)};
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    bool ok = true;
    for (int d = 0; d < 3; ++d) {
      const long e = static_cast<long>(n[d]) + 2 * pad - static_cast<long>(k[d]);
      ok = ok && e >= 0 && e % stride == 0;
    }
    if (!ok) {
      continue;
    }
    const Values x = uniform_values(rng, c * n[0] * n[1] * n[2]);
    const Values wt = uniform_values(rng, o * c * k[0] * k[1] * k[2]);
    const Values b = uniform_values(rng, o);
    const Tensor got = nn::conv3d(
      Tensor({c, n[0], n[1], n[2]}, x), Tensor({o, c, k[0], k[1], k[2]}, wt), Tensor({o}, b),
      stride, pad);
    const Values want =
      oracles::conv3d(x, c, n[0], n[1], n[2], wt, o, k[0], k[1], k[2], b, stride, pad);
    if (want.size() != got.numel()) {
      return {"oracle/conv3d", false, "output size mismatch"};
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      worst = std::max(worst, std::abs(got.data()[i] - want[i]));
    }
    ++cases;
  }
  return {"oracle/conv3d", worst <= 1e-12, std::to_string(cases) + " shapes, max abs diff " + fmt("%.3g", worst)};
}

CheckResult attention_vs_oracle()
{
  double worst = 0.0;
  Rng rng = Rng::named(13, "oracle/attention");
  for (int i = 0; i < 30; ++i) {
    const std::size_t n = 1 + rng.below(5);
    const std::size_t m = 1 + rng.below(7);
    const std::size_t d = 1 + rng.below(6);
    const std::size_t dv = 1 + rng.below(4);
    const Values q = uniform_values(rng, n * d, -2.0, 2.0);
    const Values k = uniform_values(rng, m * d, -2.0, 2.0);
    const Values v = uniform_values(rng, m * dv);
    const Tensor got = nn::attention(Tensor({n, d}, q), Tensor({m, d}, k), Tensor({m, dv}, v));
    const Values want = oracles::attention(q, k, v, n, m, d, dv);
    for (std::size_t j = 0; j < want.size(); ++j) {
      worst = std::max(worst, std::abs(got.data()[j] - want[j]));
    }
  }
  return {"oracle/attention", worst <= 1e-12, "30 shapes, max abs diff " + fmt("%.3g", worst)};
}

CheckResult hungarian_vs_brute_force()
{
  int mismatches = 0;
  int instances = 0;
  for (std::size_t n = 1; n <= 7; ++n) {
    for (int seed = 0; seed < 100; ++seed) {
      Rng rng = Rng::named(static_cast<std::uint64_t>(seed), "oracle/hungarian/" + std::to_string(n));
      const std::size_t m = std::min<std::size_t>(8, n + rng.below(3));
      Values cost(n * m);
      // Alternate real-valued and small-integer costs; the latter force ties.
      for (auto & c : cost) {
        c = seed % 2 == 0 ? rng.uniform(0.0, 10.0) : static_cast<double>(rng.below(4));
      }
      const auto cols = head::hungarian(cost, n, m);
      std::vector<bool> used(m, false);
      double total = 0.0;
      bool distinct = cols.size() == n;
      for (std::size_t r = 0; r < cols.size() && distinct; ++r) {
        distinct = cols[r] < m && !used[cols[r]];
        if (distinct) {
          used[cols[r]] = true;
          total += cost[r * m + cols[r]];
        }
      }
      ++instances;
      if (!distinct || total != oracles::best_assignment_cost(cost, n, m)) {
        ++mismatches;
      }
    }
  }
  return {"oracle/hungarian", mismatches == 0,
          std::to_string(instances) + " instances (n <= 7), " + std::to_string(mismatches) + " mismatches"};
}

// Small scenes whose predictions sit at hand-chosen offsets from the ground
// truth, on or near the thresholds, with tied scores.
std::vector<eval::SceneDetections> ap_instance(int seed)
{
  Rng rng = Rng::named(static_cast<std::uint64_t>(seed), "oracle/ap");
  static const double kOffsets[] = {0.0, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 2.5, 4.0, 6.0};
  static const double kScores[] = {0.9, 0.8, 0.8, 0.6, 0.5, 0.5, 0.3, 0.1};
  std::vector<eval::SceneDetections> scenes(1 + rng.below(3));
  for (auto & s : scenes) {
    const std::size_t n_gt = rng.below(4);
    for (std::size_t g = 0; g < n_gt; ++g) {
      Box3D b;
      b.center = {rng.uniform(0.0, 20.0), rng.uniform(-10.0, 10.0), 0.5};
      b.class_id = static_cast<int>(rng.below(2));
      s.ground_truth.push_back(b);
    }
    const std::size_t n_pred = rng.below(6);
    for (std::size_t p = 0; p < n_pred; ++p) {
      Box3D b;
      if (!s.ground_truth.empty() && rng.uniform() < 0.8) {
        const Box3D & g = s.ground_truth[rng.below(s.ground_truth.size())];
        const double off = kOffsets[rng.below(std::size(kOffsets))];
        b.center = g.center + geom::Vec3(off, 0.0, 0.0);
        b.class_id = rng.uniform() < 0.85 ? g.class_id : 1 - g.class_id;
      } else {
        b.center = {rng.uniform(0.0, 20.0), rng.uniform(-10.0, 10.0), 0.5};
        b.class_id = static_cast<int>(rng.below(2));
      }
      b.score = kScores[rng.below(std::size(kScores))];
      s.predictions.push_back(b);
    }
  }
  // Guarantee at least one ground-truth box so map_score is defined.
  if (std::none_of(scenes.begin(), scenes.end(), [](const auto & s) { return !s.ground_truth.empty(); })) {
    Box3D b;
    b.center = {5.0, 0.0, 0.5};
    scenes.front().ground_truth.push_back(b);
  }
  return scenes;
}

CheckResult ap_vs_brute_force()
{
  int mismatches = 0;
  int checks = 0;
  const std::vector<int> classes{0, 1};
  for (int seed = 0; seed < 50; ++seed) {
    const auto scenes = ap_instance(seed);
    for (int cls : classes) {
      for (double t : eval::kThresholds) {
        const auto got = eval::ap_at_threshold(scenes, cls, t);
        if (!got) {
          continue;
        }
        ++checks;
        mismatches += *got == oracles::average_precision(scenes, cls, t) ? 0 : 1;
      }
    }
    ++checks;
    mismatches += eval::map_score(scenes, classes) == oracles::map_score(scenes, classes) ? 0 : 1;
  }
  return {"oracle/ap_map", mismatches == 0,
          "50 instances, " + std::to_string(checks) + " AP/mAP values, " + std::to_string(mismatches) +
            " mismatches"};
}

CheckResult complete_depth_vs_brute_force()
{
  int mismatches = 0;
  for (int seed = 0; seed < 60; ++seed) {
    Rng rng = Rng::named(static_cast<std::uint64_t>(seed), "oracle/complete_depth");
    lidar::DepthMap sparse(8, 8);
    const double density = seed % 3 == 0 ? 0.03 : rng.uniform(0.05, 0.9);
    for (std::size_t i = 0; i < sparse.values.size(); ++i) {
      if (rng.uniform() < density) {
        sparse.values[i] = rng.uniform(1.0, 30.0);
        sparse.mask[i] = 1;
      }
    }
    if (sparse.valid_count() == 0) {
      const std::size_t i = rng.below(64);
      sparse.values[i] = 7.0;
      sparse.mask[i] = 1;
    }
    mismatches += lidar::complete_depth(sparse) == oracles::complete_depth(sparse) ? 0 : 1;
  }
  return {"oracle/complete_depth", mismatches == 0,
          "60 random 8x8 maps, " + std::to_string(mismatches) + " mismatches"};
}

struct SplatSetup
{
  geom::CameraModel camera;
  geom::GridSpec grid;
  fusion::FusionConfig cfg;
  int stride = 1;
};

SplatSetup random_splat_setup(Rng & rng)
{
  const int stride = 1 + static_cast<int>(rng.below(2));
  const int h = 4 * stride * static_cast<int>(1 + rng.below(2));
  const int w = 4 * stride * static_cast<int>(1 + rng.below(3));
  const double f = rng.uniform(0.5, 1.5) * w;
  const geom::Vec3 pos(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0));
  const auto cam = geom::CameraModel::from_focal(
    f, f * rng.uniform(0.8, 1.2), rng.uniform(0.3, 0.7) * w, rng.uniform(0.3, 0.7) * h,
    geom::forward_looking_extrinsics(pos), h, w);
  const double vs = rng.uniform() < 0.5 ? 0.5 : 1.0;
  const geom::Vec3 lo(
    std::round(rng.uniform(-2.0, 2.0)), std::round(rng.uniform(-6.0, -2.0)),
    std::round(rng.uniform(-2.0, 0.0)));
  const geom::Vec3 hi = lo + geom::Vec3(vs * (6 + rng.below(10)), vs * (6 + rng.below(10)), vs * (2 + rng.below(4)));
  fusion::FusionConfig cfg = small_fusion();
  cfg.depth_bins = 3 + static_cast<int>(rng.below(6));
  cfg.d_min = rng.uniform(0.5, 2.0);
  cfg.d_max = cfg.d_min + rng.uniform(4.0, 20.0);
  return {cam, geom::GridSpec(lo, hi, {vs, vs, vs}), cfg, stride};
}

CheckResult lift_splat_vs_oracle()
{
  double worst = 0.0;
  Rng rng = Rng::named(14, "oracle/lift_splat");
  for (int i = 0; i < 20; ++i) {
    const SplatSetup s = random_splat_setup(rng);
    nn::ParameterStore store(rng.next_u64());
    const auto params = fusion::make_lift_splat_params(store, s.cfg);
    const std::size_t h = static_cast<std::size_t>(s.camera.height() / s.stride);
    const std::size_t w = static_cast<std::size_t>(s.camera.width() / s.stride);
    const Tensor feats = random_tensor(rng, {s.cfg.c2d, h, w}, false);
    const auto result = fusion::lift_splat({feats, s.stride}, s.camera, s.grid, s.cfg, params);
    const Values want = oracles::splat(
      as_values(feats), s.cfg.c2d, h, w, as_values(result.depth_probs),
      static_cast<std::size_t>(s.cfg.depth_bins), s.stride, s.camera, s.grid, s.cfg.bin_centers());
    for (std::size_t j = 0; j < want.size(); ++j) {
      worst = std::max(worst, std::abs(result.volume.data()[j] - want[j]));
    }
  }
  return {"oracle/lift_splat", worst <= 1e-12, "20 camera/grid setups, max abs diff " + fmt("%.3g", worst)};
}

CheckResult knn_vs_brute_force()
{
  int mismatches = 0;
  Rng rng = Rng::named(15, "oracle/knn");
  for (int i = 0; i < 300; ++i) {
    const int h = 1 + static_cast<int>(rng.below(8));
    const int w = 1 + static_cast<int>(rng.below(12));
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(h * w, 12))));
    // Half-integer positions produce exact distance ties.
    const double u = i % 2 == 0 ? rng.uniform(0.0, w) : 0.5 * static_cast<double>(rng.below(2 * w));
    const double v = i % 2 == 0 ? rng.uniform(0.0, h) : 0.5 * static_cast<double>(rng.below(2 * h));
    const auto got = fusion::knn_pixels(u, v, k, h, w);
    mismatches += got.cells == oracles::knn_cells(u, v, k, h, w) ? 0 : 1;
  }
  return {"oracle/knn", mismatches == 0, "300 queries, " + std::to_string(mismatches) + " mismatches"};
}

}  // namespace

const std::vector<std::string> & grad_ops()
{
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto & [name, builder] : grad_cases()) {
      out.push_back(name);
    }
    return out;
  }();
  return names;
}

std::vector<CheckResult> grad_suite(const std::string & only, int seeds)
{
  if (!only.empty() && std::find(grad_ops().begin(), grad_ops().end(), only) == grad_ops().end()) {
    throw ValidationError("gradcheck: unknown op '" + only + "'");
  }
  std::vector<CheckResult> out;
  for (const auto & [name, builder] : grad_cases()) {
    if (!only.empty() && name != only) {
      continue;
    }
    double worst = 0.0;
    std::size_t entries = 0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng = Rng::named(static_cast<std::uint64_t>(s), "grad/" + name);
      const GradCase c = builder(rng);
      const auto report = nn::grad_check_report(c.f, c.wrt);
      worst = std::max(worst, report.max_rel_error);
      entries += report.entries_checked;
    }
    out.push_back(
      {"grad/" + name, worst <= kGradTolerance,
       std::to_string(seeds) + " seeds, " + std::to_string(entries) + " entries, max rel err " +
         fmt("%.3g", worst)});
  }
  return out;
}

std::vector<CheckResult> oracle_suite()
{
  return {conv2d_vs_oracle(),     attention_vs_oracle(),          conv3d_vs_oracle(),
          hungarian_vs_brute_force(), ap_vs_brute_force(), complete_depth_vs_brute_force(),
          lift_splat_vs_oracle(), knn_vs_brute_force()};
}

std::vector<CheckResult> vem_reproduction()
{
  std::vector<CheckResult> out;
  fusion::FusionConfig cfg;
  cfg.k_neighbors = 3;
  cfg.c2d = 2;
  cfg.c3d = 3;
  // Three neighbor cells at distances 1, 2, 4 from the voxel's projection.
  const Tensor table({3, 2}, {1.0, 2.0, 3.0, -1.0, 0.5, 4.0});
  const std::vector<std::size_t> index{0, 1, 2};
  const std::vector<double> distances{1.0, 2.0, 4.0};
  const Tensor lidar_row({1, 3}, {0.25, -0.5, 1.0});
  const fusion::VemParams params{
    Tensor({2, 3}, {0.5, -0.25, 0.75, 0.1, 0.3, -0.2}), Tensor({3}, {0.05, 0.1, -0.05})};
  const Tensor got = fusion::vem_enhance_rows(lidar_row, table, index, distances, cfg, params);

  std::vector<long double> logits;
  for (double d : distances) {
    logits.push_back(1.0L / (static_cast<long double>(d) + static_cast<long double>(cfg.knn_epsilon)));
  }
  const auto w = oracles::softmax_ld(logits);
  double worst = 0.0;
  for (std::size_t o = 0; o < 3; ++o) {
    long double pre = params.bias.data()[o];
    for (std::size_t c = 0; c < 2; ++c) {
      long double agg = 0.0L;
      for (std::size_t k = 0; k < 3; ++k) {
        agg += w[k] * table.data()[index[k] * 2 + c];
      }
      pre += agg * params.weight.data()[c * 3 + o];
    }
    const long double want = lidar_row.data()[o] + std::max(0.0L, pre);
    worst = std::max(worst, static_cast<double>(std::abs(got.data()[o] - want)));
  }
  out.push_back({"vem/distance_prior_output", worst <= 1e-5,
                 "max abs diff vs long-double evaluation " + fmt("%.3g", worst)});

  // The weights themselves, without epsilon, against the long-double softmax
  // of (1, 1/2, 1/4).
  const auto lib_w = fusion::distance_prior_weights(distances, true, 0.0);
  const auto ref_w = oracles::softmax_ld({1.0L, 0.5L, 0.25L});
  double wdiff = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    wdiff = std::max(wdiff, static_cast<double>(std::abs(lib_w[k] - ref_w[k])));
  }
  out.push_back({"vem/weights_1_2_4", wdiff <= 1e-5,
                 "weights " + fmt("%.7f", lib_w[0]) + " " + fmt("%.7f", lib_w[1]) + " " +
                   fmt("%.7f", lib_w[2]) + ", max abs diff " + fmt("%.3g", wdiff)});

  const fusion::VemParams zero{Tensor::zeros({2, 3}), Tensor::zeros({3})};
  const Tensor same = fusion::vem_enhance_rows(lidar_row, table, index, distances, cfg, zero);
  const bool identical = std::equal(same.data().begin(), same.data().end(), lidar_row.data().begin());
  out.push_back({"vem/zero_linear_identity", identical, identical ? "F_SeL == F_L bitwise" : "differs"});
  return out;
}

std::vector<CheckResult> gate_suite()
{
  std::vector<CheckResult> out;
  double violation = 0.0;
  double oracle_diff = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng = Rng::named(static_cast<std::uint64_t>(i), "gate");
    fusion::FusionConfig cfg = small_fusion();
    cfg.gate_channels = 1 + rng.below(3);
    nn::ParameterStore store(rng.next_u64());
    const auto params = fusion::make_unified_fusion_params(store, cfg);
    // Wide parameter range pushes some gates into saturation.
    randomize(store, rng, rng.uniform(0.1, 4.0));
    const std::size_t nx = 1 + rng.below(4);
    const std::size_t ny = 1 + rng.below(4);
    const std::size_t nz = 1 + rng.below(3);
    const Tensor lid = random_tensor(rng, {cfg.c3d, nx, ny, nz}, false, -3.0, 3.0);
    const Tensor cam = random_tensor(rng, {cfg.c2d, nx, ny, nz}, false, -3.0, 3.0);
    const auto fused = fusion::unified_fuse(lid, cam, cfg, params);
    auto f = fused.fused.data();
    auto a = lid.data();
    auto b = fused.projected_camera.data();
    for (std::size_t j = 0; j < f.size(); ++j) {
      const double lo = std::min(a[j], b[j]);
      const double hi = std::max(a[j], b[j]);
      violation = std::max({violation, lo - f[j], f[j] - hi});
    }
    const Values want = oracles::gated_fuse(
      as_values(lid), as_values(fused.projected_camera), cfg.c3d, nx, ny, nz,
      as_values(params.gate_lidar_weight), as_values(params.gate_lidar_bias),
      as_values(params.gate_camera_weight), as_values(params.gate_camera_bias), cfg.gate_channels,
      as_values(params.gate_out_weight), params.gate_out_bias.data()[0]);
    for (std::size_t j = 0; j < want.size(); ++j) {
      oracle_diff = std::max(oracle_diff, std::abs(f[j] - want[j]));
    }
  }
  out.push_back({"gate/segment", violation <= 0.0,
                 "100 instances, max violation " + fmt("%.3g", std::max(0.0, violation))});
  out.push_back({"gate/oracle", oracle_diff <= 1e-12,
                 "100 instances vs scalar gate, max abs diff " + fmt("%.3g", oracle_diff)});

  Rng rng = Rng::named(0, "gate/zero");
  const fusion::FusionConfig cfg = small_fusion();
  nn::ParameterStore store(3);
  const auto params = fusion::make_unified_fusion_params(store, cfg);
  randomize(store, rng, 1.0);
  store.assign("ufusion.gate_out.weight", Values(params.gate_out_weight.numel(), 0.0));
  store.assign("ufusion.gate_out.bias", {0.0});
  const Tensor lid = random_tensor(rng, {cfg.c3d, 3, 2, 2}, false);
  const Tensor cam = random_tensor(rng, {cfg.c2d, 3, 2, 2}, false);
  const auto fused = fusion::unified_fuse(lid, cam, cfg, params);
  double diff = 0.0;
  for (std::size_t j = 0; j < fused.fused.numel(); ++j) {
    const double mean = 0.5 * (lid.data()[j] + fused.projected_camera.data()[j]);
    diff = std::max(diff, std::abs(fused.fused.data()[j] - mean));
  }
  out.push_back({"gate/zero_alpha_mean", diff <= 1e-12, "max abs diff " + fmt("%.3g", diff)});
  return out;
}

std::vector<CheckResult> splat_conservation()
{
  double worst = 0.0;
  double kept = 0.0;
  double dropped = 0.0;
  Rng rng = Rng::named(21, "splat/conservation");
  for (int i = 0; i < 20; ++i) {
    const SplatSetup s = random_splat_setup(rng);
    nn::ParameterStore store(rng.next_u64());
    const auto params = fusion::make_lift_splat_params(store, s.cfg);
    const std::size_t h = static_cast<std::size_t>(s.camera.height() / s.stride);
    const std::size_t w = static_cast<std::size_t>(s.camera.width() / s.stride);
    const Tensor feats = random_tensor(rng, {s.cfg.c2d, h, w}, false, 0.0, 2.0);
    const auto r = fusion::lift_splat({feats, s.stride}, s.camera, s.grid, s.cfg, params);
    double input_mass = 0.0;
    for (double v : feats.data()) {
      input_mass += std::abs(v);
    }
    double volume_mass = 0.0;
    for (double v : r.volume.data()) {
      volume_mass += std::abs(v);
    }
    worst = std::max(worst, std::abs(volume_mass + r.dropped_mass - input_mass));
    kept += volume_mass;
    dropped += r.dropped_mass;
  }
  const bool exercised = kept > 0.0 && dropped > 0.0;
  return {{"splat/mass_balance", worst <= 1e-9 && exercised,
           "20 setups, max |kept + dropped - input| " + fmt("%.3g", worst) + ", kept fraction " +
             fmt("%.3f", kept / (kept + dropped))}};
}

std::vector<CheckResult> ablation_distinguishability()
{
  harness::RunConfig cfg = harness::default_config();
  const harness::Scene scene = harness::dataset_scene(cfg, 0);
  const auto variants = harness::ablation_variants(cfg);
  std::vector<Values> outputs;
  for (const auto & v : variants) {
    harness::Model model(v.config);
    // Fresh models have zero output projections, which hide the BEV from the
    // head. Fill every all-zero tensor with the same small values, keyed by name.
    for (const auto & p : model.store().all()) {
      const auto d = p.tensor.data();
      if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) {
        Rng rng = Rng::named(5, "ablation/" + p.name);
        model.store().assign(p.name, uniform_values(rng, p.tensor.numel(), -0.1, 0.1));
      }
    }
    const auto p = harness::forward_pipeline(scene, model).predictions;
    Values o = as_values(p.probs);
    o.insert(o.end(), p.boxes.data().begin(), p.boxes.data().end());
    outputs.push_back(std::move(o));
  }
  std::vector<CheckResult> out;
  for (std::size_t i = 1; i < variants.size(); ++i) {
    const auto & f = variants[i].config.fusion;
    const auto & base = variants[0].config.fusion;
    const bool same_config = f.k_neighbors == base.k_neighbors &&
                             f.distance_prior == base.distance_prior &&
                             f.adaptive_weighting == base.adaptive_weighting &&
                             f.use_vem == base.use_vem && f.use_iem == base.use_iem &&
                             f.use_ufusion == base.use_ufusion;
    double diff = 0.0;
    for (std::size_t j = 0; j < outputs[i].size(); ++j) {
      diff = std::max(diff, std::abs(outputs[i][j] - outputs[0][j]));
    }
    if (same_config) {
      out.push_back({"ablation/" + variants[i].name, diff == 0.0,
                     "same settings as baseline, max diff " + fmt("%.3g", diff)});
    } else {
      out.push_back({"ablation/" + variants[i].name, diff > 0.0,
                     "max output diff vs baseline " + fmt("%.3g", diff)});
    }
  }
  return out;
}

std::vector<CheckResult> all_suites()
{
  std::vector<CheckResult> out;
  for (auto part : {grad_suite(), oracle_suite(), vem_reproduction(), gate_suite(),
                    splat_conservation(), ablation_distinguishability()}) {
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::string format_results(const std::vector<CheckResult> & results)
{
  std::ostringstream os;
  for (const auto & r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
  }
  return os.str();
}

bool all_passed(const std::vector<CheckResult> & results)
{
  return std::all_of(results.begin(), results.end(), [](const CheckResult & r) { return r.passed; });
}

}  // namespace fusiondet::suites
