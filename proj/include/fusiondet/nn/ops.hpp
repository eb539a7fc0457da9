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

#ifndef FUSIONDET__NN__OPS_HPP_
#define FUSIONDET__NN__OPS_HPP_

#include "fusiondet/nn/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

// Differentiable ops. Shapes must agree exactly; the only implicit broadcast is
// the bias add inside linear/conv. All ops throw ValidationError on shape errors.
namespace fusiondet::nn
{

// elementwise
Tensor add(const Tensor & a, const Tensor & b);
Tensor sub(const Tensor & a, const Tensor & b);
Tensor mul(const Tensor & a, const Tensor & b);
Tensor scale(const Tensor & x, double s);
/// s * x + t
Tensor affine(const Tensor & x, double s, double t);
Tensor relu(const Tensor & x);
Tensor sigmoid(const Tensor & x);
Tensor exp(const Tensor & x);

// reductions to a single element
Tensor sum(const Tensor & x);
Tensor mean(const Tensor & x);

// layout
Tensor reshape(const Tensor & x, Shape shape);
Tensor transpose(const Tensor & x);  // rank 2
Tensor permute(const Tensor & x, const std::vector<std::size_t> & axes);
Tensor concat(const std::vector<Tensor> & xs, std::size_t axis);
Tensor slice(const Tensor & x, std::size_t axis, std::size_t begin, std::size_t end);

// dense algebra
Tensor matmul(const Tensor & a, const Tensor & b);  // [n,k] x [k,m]
/// y = x W + b over the last axis. x: [..., Cin], W: [Cin, Cout], b: [Cout].
Tensor linear(const Tensor & x, const Tensor & weight, const Tensor & bias);
Tensor softmax(const Tensor & x, std::size_t axis);
/// softmax(Q K^T / sqrt(d)) V with Q: [Nq,d], K: [Nk,d], V: [Nk,dv].
Tensor attention(const Tensor & q, const Tensor & k, const Tensor & v);

/// Cross-correlation with zero padding. x: [C,H,W], weight: [Cout,C,kh,kw],
/// bias: [Cout] or undefined. Throws when (H + 2p - kh) is not divisible by stride.
Tensor conv2d(
  const Tensor & x, const Tensor & weight, const Tensor & bias, int stride, int padding);
/// As conv2d on x: [C,X,Y,Z] with weight [Cout,C,kx,ky,kz].
Tensor conv3d(
  const Tensor & x, const Tensor & weight, const Tensor & bias, int stride, int padding);

// sparse indexing on row tables [N, C]
/// out[i] = x[index[i]]
Tensor gather_rows(const Tensor & x, std::span<const std::size_t> index);
/// out has `rows` rows, zero except out[index[i]] += x[i].
Tensor scatter_rows(const Tensor & x, std::span<const std::size_t> index, std::size_t rows);
/// out[i] = sum_k weights[i*k_per_row + k] * x[index[i*k_per_row + k]]; weights are constants.
Tensor weighted_gather(
  const Tensor & x, std::span<const std::size_t> index, std::span<const double> weights,
  std::size_t k_per_row);

/// g = sigmoid(gate_logits) broadcast over the channel axis:
/// out[c, j] = g[j] * a[c, j] + (1 - g[j]) * b[c, j]. gate_logits: [1, ...], a, b: [C, ...].
/// Results are clamped onto the segment [a, b] to absorb one-ulp rounding.
Tensor gated_blend(const Tensor & gate_logits, const Tensor & a, const Tensor & b);

}  // namespace fusiondet::nn

#endif  // FUSIONDET__NN__OPS_HPP_
