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

#include "fusiondet/errors.hpp"
#include "fusiondet/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <string>

namespace fusiondet::nn
{

namespace
{

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Upper bound on the number of doubles in one im2col panel.
constexpr std::size_t kPanelBudget = std::size_t{1} << 21;

template <std::size_t R>
struct ConvGeometry
{
  std::size_t channels = 0;
  std::size_t out_channels = 0;
  std::array<std::size_t, R> in{};
  std::array<std::size_t, R> kernel{};
  std::array<std::size_t, R> out{};
  int stride = 1;
  int padding = 0;

  std::size_t in_positions() const
  {
    std::size_t n = 1;
    for (auto d : in) n *= d;
    return n;
  }
  std::size_t out_positions() const
  {
    std::size_t n = 1;
    for (auto d : out) n *= d;
    return n;
  }
  std::size_t kernel_volume() const
  {
    std::size_t n = 1;
    for (auto d : kernel) n *= d;
    return n;
  }
  std::size_t patch() const { return channels * kernel_volume(); }
  bool pointwise() const { return kernel_volume() == 1 && stride == 1 && padding == 0; }
};

template <std::size_t R>
ConvGeometry<R> make_geometry(
  const char * op, const Tensor & x, const Tensor & weight, const Tensor & bias, int stride,
  int padding)
{
  if (x.rank() != R + 1 || weight.rank() != R + 2) {
    throw ValidationError(
      std::string(op) + ": bad ranks x=" + to_string(x.shape()) + " weight=" +
      to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) {
    throw ValidationError(std::string(op) + ": stride must be >= 1 and padding >= 0");
  }
  ConvGeometry<R> g;
  g.channels = x.dim(0);
  g.out_channels = weight.dim(0);
  g.stride = stride;
  g.padding = padding;
  if (weight.dim(1) != g.channels) {
    throw ValidationError(
      std::string(op) + ": weight expects " + std::to_string(weight.dim(1)) +
      " input channels, got " + std::to_string(g.channels));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    throw ValidationError(std::string(op) + ": bias shape mismatch");
  }
  for (std::size_t d = 0; d < R; ++d) {
    g.in[d] = x.dim(d + 1);
    g.kernel[d] = weight.dim(d + 2);
    if (g.kernel[d] % 2 == 0) {
      throw ValidationError(std::string(op) + ": kernel extents must be odd");
    }
    const long span = static_cast<long>(g.in[d]) + 2L * padding - static_cast<long>(g.kernel[d]);
    if (span < 0 || span % stride != 0) {
      throw ValidationError(
        std::string(op) + ": non-integral output size for input " + to_string(x.shape()) +
        ", kernel " + std::to_string(g.kernel[d]) + ", stride " + std::to_string(stride) +
        ", padding " + std::to_string(padding));
    }
    g.out[d] = static_cast<std::size_t>(span / stride) + 1;
  }
  return g;
}

// im2col over an explicitly zero-padded copy of the input: the padded offset
// of tap t at output position p is origin[p] + tap[t], so filling a panel row
// is a plain gather.
template <std::size_t R>
struct Im2Col
{
  const ConvGeometry<R> & g;
  std::array<std::size_t, R> padded{};
  std::size_t padded_plane = 1;
  std::vector<std::ptrdiff_t> origin;  // per output position
  std::vector<std::ptrdiff_t> tap;     // per kernel tap

  explicit Im2Col(const ConvGeometry<R> & geom) : g(geom)
  {
    std::array<std::size_t, R> pstride{};
    for (std::size_t d = 0; d < R; ++d) {
      padded[d] = g.in[d] + 2 * static_cast<std::size_t>(g.padding);
    }
    pstride[R - 1] = 1;
    for (std::size_t d = R - 1; d-- > 0;) {
      pstride[d] = pstride[d + 1] * padded[d + 1];
    }
    padded_plane = pstride[0] * padded[0];
    origin.resize(g.out_positions());
    for (std::size_t p = 0; p < origin.size(); ++p) {
      std::size_t rem = p;
      std::ptrdiff_t off = 0;
      for (std::size_t d = R; d-- > 0;) {
        off += static_cast<std::ptrdiff_t>((rem % g.out[d]) * g.stride * pstride[d]);
        rem /= g.out[d];
      }
      origin[p] = off;
    }
    tap.resize(g.kernel_volume());
    for (std::size_t t = 0; t < tap.size(); ++t) {
      std::size_t rem = t;
      std::ptrdiff_t off = 0;
      for (std::size_t d = R; d-- > 0;) {
        off += static_cast<std::ptrdiff_t>((rem % g.kernel[d]) * pstride[d]);
        rem /= g.kernel[d];
      }
      tap[t] = off;
    }
  }

  // Padded copy of x (x itself when there is no padding).
  std::vector<double> pad(const double * x) const
  {
    const std::size_t plane = g.in_positions();
    std::vector<double> out(g.channels * padded_plane, 0.0);
    const std::size_t last = g.in[R - 1];
    const std::size_t rows = plane / last;
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t r = 0; r < rows; ++r) {
        std::size_t rem = r;
        std::size_t off = static_cast<std::size_t>(g.padding);
        std::size_t mul = padded[R - 1];
        for (std::size_t d = R - 1; d-- > 0;) {
          off += (rem % g.in[d] + static_cast<std::size_t>(g.padding)) * mul;
          rem /= g.in[d];
          mul *= padded[d];
        }
        std::copy_n(x + c * plane + r * last, last, out.data() + c * padded_plane + off);
      }
    }
    return out;
  }

  // Adds the interior of a padded gradient buffer into gx.
  void unpad_add(const std::vector<double> & padded_grad, double * gx) const
  {
    const std::size_t plane = g.in_positions();
    const std::size_t last = g.in[R - 1];
    const std::size_t rows = plane / last;
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t r = 0; r < rows; ++r) {
        std::size_t rem = r;
        std::size_t off = static_cast<std::size_t>(g.padding);
        std::size_t mul = padded[R - 1];
        for (std::size_t d = R - 1; d-- > 0;) {
          off += (rem % g.in[d] + static_cast<std::size_t>(g.padding)) * mul;
          rem /= g.in[d];
          mul *= padded[d];
        }
        const double * src = padded_grad.data() + c * padded_plane + off;
        double * dst = gx + c * plane + r * last;
        for (std::size_t j = 0; j < last; ++j) {
          dst[j] += src[j];
        }
      }
    }
  }

  void gather(const double * xp, std::size_t begin, std::size_t end, RowMat & cols) const
  {
    const std::size_t kvol = tap.size();
    const std::size_t n = end - begin;
    cols.resize(static_cast<long>(g.patch()), static_cast<long>(n));
    const std::ptrdiff_t * o = origin.data() + begin;
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t t = 0; t < kvol; ++t) {
        const double * src = xp + c * padded_plane + tap[t];
        double * dst = &cols(static_cast<long>(c * kvol + t), 0);
        for (std::size_t j = 0; j < n; ++j) {
          dst[j] = src[o[j]];
        }
      }
    }
  }

  void scatter(const RowMat & dcols, std::size_t begin, double * gp) const
  {
    const std::size_t kvol = tap.size();
    const std::size_t n = static_cast<std::size_t>(dcols.cols());
    const std::ptrdiff_t * o = origin.data() + begin;
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t t = 0; t < kvol; ++t) {
        double * dst = gp + c * padded_plane + tap[t];
        const double * src = &dcols(static_cast<long>(c * kvol + t), 0);
        for (std::size_t j = 0; j < n; ++j) {
          dst[o[j]] += src[j];
        }
      }
    }
  }
};

template <std::size_t R>
std::size_t panel_columns(const ConvGeometry<R> & g)
{
  return std::max<std::size_t>(1, kPanelBudget / std::max<std::size_t>(1, g.patch()));
}

template <std::size_t R>
Tensor conv_nd(
  const char * op, const Tensor & x, const Tensor & weight, const Tensor & bias, int stride,
  int padding)
{
  const ConvGeometry<R> g = make_geometry<R>(op, x, weight, bias, stride, padding);
  const std::size_t npos = g.out_positions();
  const std::size_t patch = g.patch();
  Shape out_shape{g.out_channels};
  for (auto d : g.out) {
    out_shape.push_back(d);
  }
  std::vector<double> out(g.out_channels * npos, 0.0);
  MapMat y(out.data(), g.out_channels, npos);
  ConstMapMat w(weight.data().data(), g.out_channels, patch);
  if (g.pointwise()) {
    y.noalias() = w * ConstMapMat(x.data().data(), g.channels, npos);
  } else {
    const Im2Col<R> im(g);
    const std::vector<double> xp = im.pad(x.data().data());
    const std::size_t chunk = panel_columns(g);
    RowMat cols;
    for (std::size_t begin = 0; begin < npos; begin += chunk) {
      const std::size_t end = std::min(npos, begin + chunk);
      im.gather(xp.data(), begin, end, cols);
      y.middleCols(static_cast<long>(begin), cols.cols()).noalias() = w * cols;
    }
  }
  if (bias.defined()) {
    y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), g.out_channels);
  }
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) {
    parents.push_back(bias);
  }
  return Tensor::make_result(
    op, std::move(out_shape), std::move(out), std::move(parents),
    [g, npos, patch](const detail::Node & self) {
      const Tensor & xin = self.parents[0];
      const Tensor & win = self.parents[1];
      ConstMapMat dy(self.grad.data(), g.out_channels, npos);
      ConstMapMat w(win.data().data(), g.out_channels, patch);
      double * gx = grad_sink(xin);
      double * gw = grad_sink(win);
      if (self.parents.size() > 2) {
        if (double * gb = grad_sink(self.parents[2])) {
          // Plain loop: Eigen's row reduction peels to the buffer's alignment,
          // which would make the summation order depend on the heap.
          for (std::size_t o = 0; o < g.out_channels; ++o) {
            const double * row = self.grad.data() + o * npos;
            double acc = 0.0;
            for (std::size_t p = 0; p < npos; ++p) {
              acc += row[p];
            }
            gb[o] += acc;
          }
        }
      }
      if (g.pointwise()) {
        if (gw) {
          MapMat(gw, g.out_channels, patch).noalias() +=
            dy * ConstMapMat(xin.data().data(), g.channels, npos).transpose();
        }
        if (gx) {
          MapMat(gx, g.channels, npos).noalias() += w.transpose() * dy;
        }
        return;
      }
      const Im2Col<R> im(g);
      const std::size_t chunk = panel_columns(g);
      std::vector<double> xp;
      std::vector<double> gp;
      if (gw) {
        xp = im.pad(xin.data().data());
      }
      if (gx) {
        gp.assign(g.channels * im.padded_plane, 0.0);
      }
      RowMat cols;
      RowMat dcols;
      for (std::size_t begin = 0; begin < npos; begin += chunk) {
        const std::size_t end = std::min(npos, begin + chunk);
        const long b = static_cast<long>(begin);
        const long width = static_cast<long>(end - begin);
        if (gw) {
          im.gather(xp.data(), begin, end, cols);
          MapMat(gw, g.out_channels, patch).noalias() += dy.middleCols(b, width) * cols.transpose();
        }
        if (gx) {
          dcols.noalias() = w.transpose() * dy.middleCols(b, width);
          im.scatter(dcols, begin, gp.data());
        }
      }
      if (gx) {
        im.unpad_add(gp, gx);
      }
    });
}

}  // namespace

Tensor conv2d(const Tensor & x, const Tensor & weight, const Tensor & bias, int stride, int padding)
{
  return conv_nd<2>("conv2d", x, weight, bias, stride, padding);
}

Tensor conv3d(const Tensor & x, const Tensor & weight, const Tensor & bias, int stride, int padding)
{
  return conv_nd<3>("conv3d", x, weight, bias, stride, padding);
}

}  // namespace fusiondet::nn
