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

#include "fusiondet/nn/ops.hpp"

#include "fusiondet/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fusiondet::nn
{

namespace
{

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const char * op, const Tensor & a, const Tensor & b)
{
  if (a.shape() != b.shape()) {
    throw ValidationError(
      std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
      to_string(b.shape()));
  }
}

void require_rank(const char * op, const Tensor & x, std::size_t rank)
{
  if (x.rank() != rank) {
    throw ValidationError(
      std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
      to_string(x.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char * op, const Tensor & x, Fwd fwd, Deriv deriv)
{
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(in[i]);
  }
  return Tensor::make_result(op, x.shape(), std::move(out), {x}, [deriv](const detail::Node & self) {
    double * gx = grad_sink(self.parents[0]);
    auto xin = self.parents[0].data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i] * deriv(xin[i], self.data[i]);
    }
  });
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit
{
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape & shape, std::size_t axis)
{
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) {
    s.outer *= shape[i];
  }
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) {
    s.inner *= shape[i];
  }
  return s;
}

}  // namespace

Tensor add(const Tensor & a, const Tensor & b)
{
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] + y[i];
  }
  return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [](const detail::Node & self) {
    for (const auto & p : self.parents) {
      if (double * g = grad_sink(p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          g[i] += self.grad[i];
        }
      }
    }
  });
}

Tensor sub(const Tensor & a, const Tensor & b)
{
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] - y[i];
  }
  return Tensor::make_result("sub", a.shape(), std::move(out), {a, b}, [](const detail::Node & self) {
    if (double * g = grad_sink(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i];
      }
    }
    if (double * g = grad_sink(self.parents[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] -= self.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor & a, const Tensor & b)
{
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] * y[i];
  }
  return Tensor::make_result("mul", a.shape(), std::move(out), {a, b}, [](const detail::Node & self) {
    auto x = self.parents[0].data();
    auto y = self.parents[1].data();
    if (double * g = grad_sink(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * y[i];
      }
    }
    if (double * g = grad_sink(self.parents[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * x[i];
      }
    }
  });
}

Tensor scale(const Tensor & x, double s) { return affine(x, s, 0.0); }

Tensor affine(const Tensor & x, double s, double t)
{
  return unary(
    "affine", x, [s, t](double v) { return s * v + t; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor & x)
{
  return unary(
    "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
    [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor & x)
{
  return unary(
    "sigmoid", x,
    [](double v) {
      if (v >= 0.0) {
        return 1.0 / (1.0 + std::exp(-v));
      }
      const double e = std::exp(v);
      return e / (1.0 + e);
    },
    [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor & x)
{
  return unary(
    "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sum(const Tensor & x)
{
  auto in = x.data();
  const double s = std::accumulate(in.begin(), in.end(), 0.0);
  return Tensor::make_result("sum", {1}, {s}, {x}, [](const detail::Node & self) {
    double * g = grad_sink(self.parents[0]);
    const std::size_t n = self.parents[0].numel();
    for (std::size_t i = 0; i < n; ++i) {
      g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor & x)
{
  if (x.numel() == 0) {
    throw ValidationError("mean of an empty tensor");
  }
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor & x, Shape shape)
{
  if (numel(shape) != x.numel()) {
    throw ValidationError(
      "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(
    "reshape", std::move(shape), std::move(out), {x}, [](const detail::Node & self) {
      double * g = grad_sink(self.parents[0]);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i];
      }
    });
}

Tensor transpose(const Tensor & x)
{
  require_rank("transpose", x, 2);
  return permute(x, {1, 0});
}

Tensor permute(const Tensor & x, const std::vector<std::size_t> & axes)
{
  const std::size_t r = x.rank();
  if (axes.size() != r) {
    throw ValidationError("permute: axes rank mismatch");
  }
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) {
      throw ValidationError("permute: axes are not a permutation");
    }
    used[a] = true;
  }
  const Shape & in_shape = x.shape();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) {
    in_strides[i - 1] = in_strides[i] * in_shape[i];
  }
  Shape out_shape(r);
  std::vector<std::size_t> gather_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    gather_strides[i] = in_strides[axes[i]];
  }
  // source offset for each destination element, walked with an odometer
  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < n; ++j) {
    (*source)[j] = offset;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) {
        offset += gather_strides[i];
        break;
      }
      offset -= gather_strides[i] * (out_shape[i] - 1);
      counter[i] = 0;
    }
  }
  std::vector<double> out(n);
  auto in = x.data();
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = in[(*source)[j]];
  }
  return Tensor::make_result(
    "permute", std::move(out_shape), std::move(out), {x}, [source](const detail::Node & self) {
      double * g = grad_sink(self.parents[0]);
      for (std::size_t j = 0; j < self.grad.size(); ++j) {
        g[(*source)[j]] += self.grad[j];
      }
    });
}

Tensor concat(const std::vector<Tensor> & xs, std::size_t axis)
{
  if (xs.empty()) {
    throw ValidationError("concat of zero tensors");
  }
  const Shape & ref = xs.front().shape();
  if (axis >= ref.size()) {
    throw ValidationError("concat: axis out of range");
  }
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto & t : xs) {
    if (t.rank() != ref.size()) {
      throw ValidationError("concat: rank mismatch");
    }
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && t.shape()[i] != ref[i]) {
        throw ValidationError(
          "concat: shape mismatch " + to_string(t.shape()) + " vs " + to_string(ref));
      }
    }
    out_shape[axis] += t.shape()[axis];
  }
  const AxisSplit out_split = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t col = 0;
  for (const auto & t : xs) {
    const std::size_t chunk = t.shape()[axis] * out_split.inner;
    auto in = t.data();
    for (std::size_t o = 0; o < out_split.outer; ++o) {
      std::copy_n(
        in.begin() + o * chunk, chunk,
        out.begin() + o * out_split.extent * out_split.inner + col);
    }
    col += chunk;
  }
  return Tensor::make_result(
    "concat", out_shape, std::move(out), xs, [axis, out_split](const detail::Node & self) {
      std::size_t col = 0;
      for (const auto & t : self.parents) {
        const std::size_t chunk = t.shape()[axis] * out_split.inner;
        if (double * g = grad_sink(t)) {
          for (std::size_t o = 0; o < out_split.outer; ++o) {
            const double * src = self.grad.data() + o * out_split.extent * out_split.inner + col;
            for (std::size_t i = 0; i < chunk; ++i) {
              g[o * chunk + i] += src[i];
            }
          }
        }
        col += chunk;
      }
    });
}

Tensor slice(const Tensor & x, std::size_t axis, std::size_t begin, std::size_t end)
{
  if (axis >= x.rank() || begin > end || end > x.shape()[axis]) {
    throw ValidationError("slice: bounds out of range for " + to_string(x.shape()));
  }
  const AxisSplit in_split = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * in_split.inner;
  const std::size_t offset = begin * in_split.inner;
  std::vector<double> out(numel(out_shape));
  auto in = x.data();
  for (std::size_t o = 0; o < in_split.outer; ++o) {
    std::copy_n(
      in.begin() + o * in_split.extent * in_split.inner + offset, chunk, out.begin() + o * chunk);
  }
  return Tensor::make_result(
    "slice", std::move(out_shape), std::move(out), {x},
    [in_split, chunk, offset](const detail::Node & self) {
      double * g = grad_sink(self.parents[0]);
      for (std::size_t o = 0; o < in_split.outer; ++o) {
        double * dst = g + o * in_split.extent * in_split.inner + offset;
        for (std::size_t i = 0; i < chunk; ++i) {
          dst[i] += self.grad[o * chunk + i];
        }
      }
    });
}

Tensor matmul(const Tensor & a, const Tensor & b)
{
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t m = b.dim(1);
  if (b.dim(0) != k) {
    throw ValidationError(
      "matmul: inner dimension mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<double> out(n * m);
  MapMat(out.data(), n, m).noalias() =
    ConstMapMat(a.data().data(), n, k) * ConstMapMat(b.data().data(), k, m);
  return Tensor::make_result(
    "matmul", {n, m}, std::move(out), {a, b}, [n, k, m](const detail::Node & self) {
      ConstMapMat dc(self.grad.data(), n, m);
      if (double * g = grad_sink(self.parents[0])) {
        MapMat(g, n, k).noalias() += dc * ConstMapMat(self.parents[1].data().data(), k, m).transpose();
      }
      if (double * g = grad_sink(self.parents[1])) {
        MapMat(g, k, m).noalias() += ConstMapMat(self.parents[0].data().data(), n, k).transpose() * dc;
      }
    });
}

Tensor linear(const Tensor & x, const Tensor & weight, const Tensor & bias)
{
  require_rank("linear weight", weight, 2);
  require_rank("linear bias", bias, 1);
  if (x.rank() == 0) {
    throw ValidationError("linear: input must have at least one axis");
  }
  const std::size_t cin = weight.dim(0);
  const std::size_t cout = weight.dim(1);
  if (x.shape().back() != cin || bias.dim(0) != cout) {
    throw ValidationError(
      "linear: shape mismatch x=" + to_string(x.shape()) + " W=" + to_string(weight.shape()) +
      " b=" + to_string(bias.shape()));
  }
  const std::size_t rows = x.numel() / cin;
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  std::vector<double> out(rows * cout);
  MapMat y(out.data(), rows, cout);
  y.noalias() = ConstMapMat(x.data().data(), rows, cin) * ConstMapMat(weight.data().data(), cin, cout);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), cout);
  return Tensor::make_result(
    "linear", std::move(out_shape), std::move(out), {x, weight, bias},
    [rows, cin, cout](const detail::Node & self) {
      ConstMapMat dy(self.grad.data(), rows, cout);
      if (double * g = grad_sink(self.parents[0])) {
        MapMat(g, rows, cin).noalias() +=
          dy * ConstMapMat(self.parents[1].data().data(), cin, cout).transpose();
      }
      if (double * g = grad_sink(self.parents[1])) {
        MapMat(g, cin, cout).noalias() +=
          ConstMapMat(self.parents[0].data().data(), rows, cin).transpose() * dy;
      }
      if (double * g = grad_sink(self.parents[2])) {
        // Row by row in a fixed order; Eigen's column reduction is alignment-dependent.
        for (std::size_t r = 0; r < rows; ++r) {
          const double * row = self.grad.data() + r * cout;
          for (std::size_t o = 0; o < cout; ++o) {
            g[o] += row[o];
          }
        }
      }
    });
}

Tensor softmax(const Tensor & x, std::size_t axis)
{
  if (axis >= x.rank()) {
    throw ValidationError("softmax: axis out of range for " + to_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = in[base];
      for (std::size_t e = 1; e < s.extent; ++e) {
        mx = std::max(mx, in[base + e * s.inner]);
      }
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(in[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) {
        out[base + e * s.inner] /= z;
      }
    }
  }
  return Tensor::make_result(
    "softmax", x.shape(), std::move(out), {x}, [s](const detail::Node & self) {
      double * g = grad_sink(self.parents[0]);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          double dot = 0.0;
          for (std::size_t e = 0; e < s.extent; ++e) {
            dot += self.grad[base + e * s.inner] * self.data[base + e * s.inner];
          }
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t j = base + e * s.inner;
            g[j] += self.data[j] * (self.grad[j] - dot);
          }
        }
      }
    });
}

Tensor attention(const Tensor & q, const Tensor & k, const Tensor & v)
{
  require_rank("attention Q", q, 2);
  require_rank("attention K", k, 2);
  require_rank("attention V", v, 2);
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw ValidationError(
      "attention: shape mismatch Q=" + to_string(q.shape()) + " K=" + to_string(k.shape()) +
      " V=" + to_string(v.shape()));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  const Tensor logits = scale(matmul(q, transpose(k)), inv_sqrt_d);
  return matmul(softmax(logits, 1), v);
}

Tensor gather_rows(const Tensor & x, std::span<const std::size_t> index)
{
  require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  std::vector<double> out(idx->size() * c);
  auto in = x.data();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    if ((*idx)[i] >= n) {
      throw ValidationError("gather_rows: index out of range");
    }
    std::copy_n(in.begin() + (*idx)[i] * c, c, out.begin() + i * c);
  }
  return Tensor::make_result(
    "gather_rows", {idx->size(), c}, std::move(out), {x}, [idx, c](const detail::Node & self) {
      double * g = grad_sink(self.parents[0]);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          g[(*idx)[i] * c + j] += self.grad[i * c + j];
        }
      }
    });
}

Tensor scatter_rows(const Tensor & x, std::span<const std::size_t> index, std::size_t rows)
{
  require_rank("scatter_rows", x, 2);
  if (index.size() != x.dim(0)) {
    throw ValidationError("scatter_rows: index count does not match rows");
  }
  const std::size_t c = x.dim(1);
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  std::vector<double> out(rows * c, 0.0);
  auto in = x.data();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    if ((*idx)[i] >= rows) {
      throw ValidationError("scatter_rows: index out of range");
    }
    for (std::size_t j = 0; j < c; ++j) {
      out[(*idx)[i] * c + j] += in[i * c + j];
    }
  }
  return Tensor::make_result(
    "scatter_rows", {rows, c}, std::move(out), {x}, [idx, c](const detail::Node & self) {
      double * g = grad_sink(self.parents[0]);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          g[i * c + j] += self.grad[(*idx)[i] * c + j];
        }
      }
    });
}

Tensor weighted_gather(
  const Tensor & x, std::span<const std::size_t> index, std::span<const double> weights,
  std::size_t k_per_row)
{
  require_rank("weighted_gather", x, 2);
  if (k_per_row == 0 || index.size() != weights.size() || index.size() % k_per_row != 0) {
    throw ValidationError("weighted_gather: index/weight layout mismatch");
  }
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t rows = index.size() / k_per_row;
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  auto w = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  std::vector<double> out(rows * c, 0.0);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < k_per_row; ++k) {
      const std::size_t src = (*idx)[r * k_per_row + k];
      if (src >= n) {
        throw ValidationError("weighted_gather: index out of range");
      }
      const double wk = (*w)[r * k_per_row + k];
      for (std::size_t j = 0; j < c; ++j) {
        out[r * c + j] += wk * in[src * c + j];
      }
    }
  }
  return Tensor::make_result(
    "weighted_gather", {rows, c}, std::move(out), {x},
    [idx, w, rows, c, k_per_row](const detail::Node & self) {
      double * g = grad_sink(self.parents[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < k_per_row; ++k) {
          const std::size_t src = (*idx)[r * k_per_row + k];
          const double wk = (*w)[r * k_per_row + k];
          for (std::size_t j = 0; j < c; ++j) {
            g[src * c + j] += wk * self.grad[r * c + j];
          }
        }
      }
    });
}

Tensor gated_blend(const Tensor & gate_logits, const Tensor & a, const Tensor & b)
{
  require_same_shape("gated_blend", a, b);
  if (a.rank() < 1 || gate_logits.rank() != a.rank() || gate_logits.dim(0) != 1) {
    throw ValidationError(
      "gated_blend: gate " + to_string(gate_logits.shape()) + " does not fit " +
      to_string(a.shape()));
  }
  for (std::size_t i = 1; i < a.rank(); ++i) {
    if (gate_logits.dim(i) != a.dim(i)) {
      throw ValidationError(
        "gated_blend: gate " + to_string(gate_logits.shape()) + " does not fit " +
        to_string(a.shape()));
    }
  }
  const std::size_t channels = a.dim(0);
  const std::size_t spatial = gate_logits.numel();
  auto gate = std::make_shared<std::vector<double>>(spatial);
  auto al = gate_logits.data();
  for (std::size_t j = 0; j < spatial; ++j) {
    const double v = al[j];
    (*gate)[j] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t j = 0; j < spatial; ++j) {
      const std::size_t i = c * spatial + j;
      const double g = (*gate)[j];
      const double r = g * x[i] + (1.0 - g) * y[i];
      out[i] = std::clamp(r, std::min(x[i], y[i]), std::max(x[i], y[i]));
    }
  }
  return Tensor::make_result(
    "gated_blend", a.shape(), std::move(out), {gate_logits, a, b},
    [gate, channels, spatial](const detail::Node & self) {
      auto x = self.parents[1].data();
      auto y = self.parents[2].data();
      double * ga = grad_sink(self.parents[0]);
      double * gx = grad_sink(self.parents[1]);
      double * gy = grad_sink(self.parents[2]);
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t j = 0; j < spatial; ++j) {
          const std::size_t i = c * spatial + j;
          const double g = (*gate)[j];
          const double d = self.grad[i];
          if (ga) {
            ga[j] += d * (x[i] - y[i]) * g * (1.0 - g);
          }
          if (gx) {
            gx[i] += d * g;
          }
          if (gy) {
            gy[i] += d * (1.0 - g);
          }
        }
      }
    });
}

}  // namespace fusiondet::nn
