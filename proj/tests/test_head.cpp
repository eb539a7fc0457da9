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

#include <doctest.h>

#include "oracles.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/head.hpp"
#include "fusiondet/nn/grad_check.hpp"
#include "fusiondet/nn/ops.hpp"
#include "fusiondet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace fusiondet;
using namespace fusiondet::head;
using nn::Tensor;
using Values = std::vector<double>;

namespace
{

Values vals(const Tensor & t) { return {t.data().begin(), t.data().end()}; }

void randomize(nn::ParameterStore & store, Rng & rng, double scale = 0.5)
{
  for (const auto & p : store.all()) {
    Values v(p.tensor.numel());
    for (auto & x : v) {
      x = rng.uniform(-scale, scale);
    }
    store.assign(p.name, v);
  }
}

// x [n, in] W [in, out] + b, one scalar at a time.
Values dense(const Values & x, std::size_t n, const Tensor & w, const Tensor & b)
{
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  Values y(n * out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      double s = b.data()[j];
      for (std::size_t k = 0; k < in; ++k) {
        s += x[i * in + k] * w.data()[k * out + j];
      }
      y[i * out + j] = s;
    }
  }
  return y;
}

Values two_layer(const Values & x, std::size_t n, const MlpParams & p)
{
  Values h = dense(x, n, p.w1, p.b1);
  for (auto & v : h) {
    v = std::max(0.0, v);
  }
  return dense(h, n, p.w2, p.b2);
}

Values scalar_attend(const AttentionParams & p, const Values & q, std::size_t nq, const Values & kv, std::size_t nk)
{
  const std::size_t d = p.wq.dim(0);
  const Values a = oracles::attention(
    dense(q, nq, p.wq, p.bq), dense(kv, nk, p.wk, p.bk), dense(kv, nk, p.wv, p.bv), nq, nk, d, d);
  return dense(a, nq, p.wo, p.bo);
}

Values plus(Values a, const Values & b)
{
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] += b[i];
  }
  return a;
}

// The whole decode with loops: keys = 1x1 conv of the BEV plus a sinusoidal code.
Values scalar_decode(const HeadParams & p, const Tensor & bev)
{
  const std::size_t cb = bev.dim(0);
  const std::size_t nx = bev.dim(1);
  const std::size_t ny = bev.dim(2);
  const std::size_t nq = p.queries.dim(0);
  const std::size_t d = p.queries.dim(1);
  Values keys(nx * ny * d);
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y = 0; y < ny; ++y) {
      const std::size_t cell = x * ny + y;
      for (std::size_t o = 0; o < d; ++o) {
        double s = p.input_proj_bias.data()[o];
        for (std::size_t c = 0; c < cb; ++c) {
          s += p.input_proj_weight.data()[o * cb + c] * bev.data()[(c * nx + x) * ny + y];
        }
        const std::size_t quarter = d / 4;
        const std::size_t k = (o % (d / 2)) / 2;
        const double pos = o < d / 2 ? static_cast<double>(x) : static_cast<double>(y);
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(2 * quarter));
        s += (o % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
        keys[cell * d + o] = s;
      }
    }
  }
  Values q = vals(p.queries);
  q = plus(q, scalar_attend(p.self_attn, q, nq, q, nq));
  q = plus(q, scalar_attend(p.cross_attn, q, nq, keys, nx * ny));
  return plus(q, two_layer(q, nq, p.ffn));
}

HeadConfig small_head()
{
  HeadConfig c;
  c.num_queries = 4;
  c.d_model = 8;
  c.num_classes = 2;
  return c;
}

}  // namespace

TEST_CASE("HeadConfig validation")
{
  HeadConfig c;
  CHECK_NOTHROW(c.validate());
  c.d_model = 6;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = HeadConfig{};
  c.num_queries = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("decode: fresh head is the identity on the queries")
{
  const HeadConfig cfg = small_head();
  nn::ParameterStore store(1);
  const HeadParams p = make_head_params(store, cfg, 3);
  Rng rng(1);
  Values bev(3 * 4 * 5);
  for (auto & v : bev) {
    v = rng.uniform(-1, 1);
  }
  // Output projections of both attention blocks and of the FFN start at zero.
  const Tensor out = decode(p, Tensor({3, 4, 5}, bev));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    CHECK(out.data()[i] == p.queries.data()[i]);
  }
}

TEST_CASE("decode: single BEV cell adds that key's value to every query")
{
  const HeadConfig cfg = small_head();
  nn::ParameterStore store(2);
  const HeadParams p = make_head_params(store, cfg, 3);
  Rng rng(2);
  randomize(store, rng);
  const Tensor bev({3, 1, 1}, {0.3, -0.7, 1.1});
  const Tensor got = decode(p, bev);
  const Values want = scalar_decode(p, bev);
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(std::abs(got.data()[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("decode: random head vs scalar evaluation within 1e-12")
{
  const HeadConfig cfg = small_head();
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    nn::ParameterStore store(static_cast<std::uint64_t>(t));
    const HeadParams p = make_head_params(store, cfg, 5);
    randomize(store, rng);
    Values bev(5 * 3 * 4);
    for (auto & v : bev) {
      v = rng.uniform(-1, 1);
    }
    const Tensor b({5, 3, 4}, bev);
    const Tensor got = decode(p, b);
    const Values want = scalar_decode(p, b);
    double worst = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      worst = std::max(worst, std::abs(got.data()[i] - want[i]));
    }
    CHECK(worst <= 1e-12);
  }
  nn::ParameterStore store(9);
  const HeadParams p = make_head_params(store, cfg, 5);
  CHECK_THROWS_AS(decode(p, Tensor::zeros({4, 2, 2})), ValidationError);
}

TEST_CASE("decode: gradient on a 3-query, 4-key instance")
{
  HeadConfig cfg = small_head();
  cfg.num_queries = 3;
  nn::ParameterStore store(4);
  const HeadParams p = make_head_params(store, cfg, 2);
  Rng rng(4);
  randomize(store, rng);
  const Tensor bev({2, 2, 2}, {0.1, -0.4, 0.9, 0.3, -1.0, 0.2, 0.5, 0.7}, true);
  Values r(3 * 8);
  for (auto & v : r) {
    v = rng.uniform(-1, 1);
  }
  const Tensor probe({3, 8}, r);
  std::vector<Tensor> wrt{bev};
  for (const auto & prm : store.all()) {
    wrt.push_back(prm.tensor);
  }
  CHECK(nn::grad_check([&] { return nn::sum(nn::mul(decode(p, bev), probe)); }, wrt) <= 1e-5);
}

TEST_CASE("predict: size, midpoint and scalar checks")
{
  const HeadConfig cfg = small_head();
  nn::ParameterStore store(5);
  const HeadParams p = make_head_params(store, cfg, 3);
  for (const auto & prm : store.all()) {
    store.assign(prm.name, Values(prm.tensor.numel(), 0.0));
  }
  const geom::GridSpec grid({-54, -54, -5}, {54, 54, 3}, {0.075, 0.075, 0.2});
  const Predictions zero = predict(p, Tensor::zeros({4, 8}), grid);
  for (std::size_t q = 0; q < 4; ++q) {
    CHECK(zero.boxes.at({q, 0}) == 0.0);
    CHECK(zero.boxes.at({q, 1}) == 0.0);
    CHECK(zero.boxes.at({q, 3}) == 1.0);
    CHECK(zero.boxes.at({q, 4}) == 1.0);
    CHECK(zero.boxes.at({q, 5}) == 1.0);
    CHECK(zero.probs.at({q, 0}) == doctest::Approx(1.0 / 3.0));
  }

  Rng rng(5);
  randomize(store, rng);
  Values dec(4 * 8);
  for (auto & v : dec) {
    v = rng.uniform(-1, 1);
  }
  const geom::GridSpec small({-2, 1, -1}, {6, 5, 1}, {1, 1, 1});
  const Predictions got = predict(p, Tensor({4, 8}, dec), small);
  const Values logits = two_layer(dec, 4, p.class_head);
  const Values raw = two_layer(dec, 4, p.box_head);
  for (std::size_t q = 0; q < 4; ++q) {
    const double m = std::max({logits[q * 3], logits[q * 3 + 1], logits[q * 3 + 2]});
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      z += std::exp(logits[q * 3 + c] - m);
    }
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::abs(got.probs.at({q, c}) - std::exp(logits[q * 3 + c] - m) / z) <= 1e-12);
    }
    const double* r = raw.data() + q * 8;
    CHECK(std::abs(got.boxes.at({q, 0}) - (-2.0 + 8.0 / (1.0 + std::exp(-r[0])))) <= 1e-12);
    CHECK(std::abs(got.boxes.at({q, 1}) - (1.0 + 4.0 / (1.0 + std::exp(-r[1])))) <= 1e-12);
    CHECK(std::abs(got.boxes.at({q, 2}) - r[2]) <= 1e-12);
    for (std::size_t k = 3; k < 6; ++k) {
      CHECK(std::abs(got.boxes.at({q, k}) - std::exp(r[k])) <= 1e-12);
    }
    CHECK(got.boxes.at({q, 6}) == doctest::Approx(r[6]).epsilon(1e-13));
  }
}

TEST_CASE("to_detections: best object class and a unit heading")
{
  const Tensor logits({2, 3}, {0.0, 1.0, 5.0, 2.0, 0.0, -1.0});
  Predictions p{logits, nn::softmax(logits, 1), Tensor({2, 8}, {1, 2, 3, 1, 1, 1, 3, 4, 0, 0, 0, 2, 2, 2, 0, 1})};
  const auto d = to_detections(p);
  REQUIRE(d.size() == 2);
  CHECK(d[0].class_id == 1);
  CHECK(d[0].score == doctest::Approx(p.probs.at({0, 1})));
  CHECK(d[1].class_id == 0);
  CHECK(std::hypot(std::sin(d[0].yaw), std::cos(d[0].yaw)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::atan2(3.0, 4.0) == doctest::Approx(d[0].yaw));
}

TEST_CASE("hungarian: examples, brute force, row shift invariance")
{
  CHECK(hungarian(Values{4.2}, 1, 1) == std::vector<std::size_t>{0});
  Values c(9);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      c[i * 3 + j] = static_cast<double>((i + 1) * (j + 1));
    }
  }
  const auto a = hungarian(c, 3, 3);
  CHECK(a == std::vector<std::size_t>{2, 1, 0});
  CHECK(c[0 * 3 + a[0]] + c[1 * 3 + a[1]] + c[2 * 3 + a[2]] == 10.0);

  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    Values m(25);
    for (auto & v : m) {
      v = rng.uniform(0, 10);
    }
    const auto got = hungarian(m, 5, 5);
    CHECK(std::set<std::size_t>(got.begin(), got.end()).size() == 5);
    double total = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      total += m[i * 5 + got[i]];
    }
    CHECK(total == oracles::best_assignment_cost(m, 5, 5));

    Values shifted = m;
    const std::size_t row = rng.below(5);
    for (std::size_t j = 0; j < 5; ++j) {
      shifted[row * 5 + j] += 3.25;
    }
    CHECK(hungarian(shifted, 5, 5) == got);
  }
  CHECK_THROWS_AS(hungarian(Values(6, 0.0), 3, 2), ValidationError);
  CHECK_THROWS_AS(hungarian(Values{std::nan("")}, 1, 1), ValidationError);
}

TEST_CASE("match_cost: perfect, half-probability, scalar recomputation")
{
  const HeadConfig cfg;
  Box3D gt;
  gt.center = {1.0, 2.0, 0.5};
  gt.size = {1.0, 2.0, 1.5};
  gt.yaw = 0.3;
  gt.class_id = 1;
  const auto enc = gt.encode();
  const Tensor boxes({1, 8}, Values(enc.begin(), enc.end()));
  const Tensor sure({1, 4}, {0.0, 1.0, 0.0, 0.0});
  CHECK(match_cost({sure, sure, boxes}, std::span<const Box3D>(&gt, 1), cfg)[0] == 0.0);
  const Tensor half({1, 4}, {0.25, 0.5, 0.25, 0.0});
  CHECK(match_cost({half, half, boxes}, std::span<const Box3D>(&gt, 1), cfg)[0] == 0.5);

  Rng rng(7);
  Values b(3 * 8);
  for (auto & v : b) {
    v = rng.uniform(-2, 2);
  }
  const Tensor probs = nn::softmax(Tensor({3, 4}, {0.1, 0.2, 0.3, 0.4, 1, 0, -1, 2, 0.5, 0.5, 0, 0}), 1);
  const std::vector<Box3D> gts{gt, gt};
  const auto cost = match_cost({probs, probs, Tensor({3, 8}, b)}, gts, cfg);
  for (std::size_t q = 0; q < 3; ++q) {
    double l1 = 0.0;
    for (std::size_t k = 0; k < 8; ++k) {
      l1 += std::abs(b[q * 8 + k] - enc[k]);
    }
    const double want = 1.0 * (1.0 - probs.at({q, 1})) + 0.25 * l1 / 8.0;
    CHECK(std::abs(cost[q] - want) <= 1e-12);
    CHECK(cost[3 + q] == cost[q]);
  }
}

TEST_CASE("focal_loss: examples and gradient")
{
  const Tensor one({1, 2}, {1.0, 0.0});
  const std::vector<std::size_t> t0{0};
  CHECK(focal_loss(one, t0, 0.25, 2.0, 1.0).item() == 0.0);
  const Tensor half({1, 2}, {0.5, 0.5});
  CHECK(focal_loss(half, t0, 0.25, 2.0, 1.0).item() == doctest::Approx(0.043322).epsilon(1e-6));
  // p_t = 0 is clamped before the log.
  CHECK(std::isfinite(focal_loss(Tensor({1, 2}, {0.0, 1.0}), t0, 0.25, 2.0, 1.0).item()));

  const Tensor logits({3, 4}, {0.3, -0.2, 1.0, 0.1, 2.0, 0.0, -1.0, 0.5, -0.4, 0.4, 0.9, -1.2}, true);
  const std::vector<std::size_t> targets{2, 0, 3};
  CHECK(nn::grad_check([&] { return focal_loss(nn::softmax(logits, 1), targets, 0.25, 2.0, 2.0); }, {logits}) <= 1e-5);
}

TEST_CASE("l1_box_loss: exact, unit x offset, empty, gradient")
{
  const std::array<double, 8> target{1, 2, 3, 4, 5, 6, 0, 1};
  const std::vector<std::array<double, 8>> targets{target};
  const std::vector<std::size_t> q0{0};
  const Tensor exact({1, 8}, Values(target.begin(), target.end()));
  CHECK(l1_box_loss(exact, q0, targets).item() == 0.0);
  Values moved(target.begin(), target.end());
  moved[0] += 1.0;
  CHECK(l1_box_loss(Tensor({1, 8}, moved), q0, targets).item() == 0.125);
  CHECK(l1_box_loss(exact, {}, {}).item() == 0.0);

  Rng rng(8);
  Values b(2 * 8);
  for (auto & v : b) {
    v = rng.uniform(-3, 3);
  }
  const Tensor boxes({2, 8}, b, true);
  const std::vector<std::size_t> q1{1};
  CHECK(nn::grad_check([&] { return l1_box_loss(boxes, q1, targets); }, {boxes}) <= 1e-5);
}

TEST_CASE("detection_loss: zero at the perfect prediction, positive otherwise")
{
  HeadConfig cfg;
  cfg.num_classes = 2;
  Box3D gt;
  gt.center = {3.0, -1.0, 0.5};
  gt.size = {1.0, 2.0, 1.0};
  gt.class_id = 0;
  const auto enc = gt.encode();
  Values boxes(2 * 8, 0.0);
  std::copy(enc.begin(), enc.end(), boxes.begin());
  const Tensor perfect({2, 3}, {1.0, 0.0, 0.0, 0.0, 0.0, 1.0});
  const LossTerms zero =
    detection_loss({perfect, perfect, Tensor({2, 8}, boxes)}, std::span<const Box3D>(&gt, 1), cfg);
  CHECK(zero.total.item() == 0.0);
  CHECK(zero.assignment == std::vector<std::size_t>{0});

  const Tensor unsure({2, 3}, {0.6, 0.2, 0.2, 0.1, 0.1, 0.8});
  const LossTerms pos =
    detection_loss({unsure, unsure, Tensor({2, 8}, boxes)}, std::span<const Box3D>(&gt, 1), cfg);
  CHECK(pos.total.item() > 0.0);
  CHECK(pos.l1 == 0.0);
  // Focal over both queries, normalised by one match.
  const double f0 = -0.25 * 0.16 * std::log(0.6);
  const double f1 = -0.25 * 0.04 * std::log(0.8);
  CHECK(pos.focal == doctest::Approx(f0 + f1).epsilon(1e-12));

  const LossTerms none = detection_loss({unsure, unsure, Tensor({2, 8}, boxes)}, {}, cfg);
  CHECK(none.focal > 0.0);
  CHECK(none.l1 == 0.0);
}

TEST_CASE("decode, predict and losses: end-to-end gradient on 4 queries and 2 boxes")
{
  HeadConfig cfg = small_head();
  nn::ParameterStore store(10);
  const HeadParams p = make_head_params(store, cfg, 3);
  Rng rng(10);
  randomize(store, rng);
  Values bev(3 * 2 * 3);
  for (auto & v : bev) {
    v = rng.uniform(-1, 1);
  }
  const Tensor b({3, 2, 3}, bev);
  const geom::GridSpec grid({0, -2, -1}, {4, 2, 1}, {1, 1, 1});
  std::vector<Box3D> gts(2);
  gts[0].center = {1.0, 0.5, 0.0};
  gts[0].class_id = 1;
  gts[1].center = {3.0, -1.0, 0.2};
  gts[1].size = {0.8, 1.5, 1.2};
  gts[1].yaw = 0.7;
  std::vector<Tensor> wrt;
  for (const auto & prm : store.all()) {
    wrt.push_back(prm.tensor);
  }
  CHECK(nn::grad_check([&] { return detection_loss(predict(p, decode(p, b), grid), gts, cfg).total; }, wrt) <= 1e-5);
}
