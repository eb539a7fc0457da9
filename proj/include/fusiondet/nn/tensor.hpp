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

#ifndef FUSIONDET__NN__TENSOR_HPP_
#define FUSIONDET__NN__TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fusiondet::nn
{

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape & shape);
std::string to_string(const Shape & shape);

namespace detail
{
struct Node;
}

/// Dense row-major float64 array with an optional gradient slot.
///
/// A Tensor is a shared handle onto a graph node: copies alias the same storage.
/// Ops never mutate their inputs; results record their parents and a backward
/// closure only when at least one input requires a gradient. Every op result is
/// checked for NaN/Inf and raises NumericalError naming the op that produced it.
class Tensor
{
public:
  /// Accumulates gradient into the parents, given the node's own gradient.
  using BackwardFn = std::function<void(const detail::Node & self)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape & shape, bool requires_grad = false);
  static Tensor full(const Shape & shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Builds an op result. `parents` are the differentiable inputs; `backward` is
  /// only retained when one of them requires a gradient.
  static Tensor make_result(
    const char * op, Shape shape, std::vector<double> data, std::vector<Tensor> parents,
    BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape & shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  const char * op() const;

  std::span<const double> data() const;
  /// Direct write access, for parameters and optimizer updates only.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from a single-element tensor, seeding d(self)/d(self) = 1.
  void backward() const;

  /// Same data, no graph history.
  Tensor detach() const;

  const detail::Node * node() const { return node_.get(); }

private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

namespace detail
{
struct Node
{
  const char * op = "leaf";
  Shape shape;
  std::vector<double> data;
  mutable std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Tensor> parents;
  Tensor::BackwardFn backward;

  std::vector<double> & grad_buffer() const
  {
    if (grad.empty()) {
      grad.assign(data.size(), 0.0);
    }
    return grad;
  }
};
}  // namespace detail

/// Gradient accumulator of a parent inside a backward closure; nullptr when the
/// parent does not require a gradient.
double * grad_sink(const Tensor & parent);

}  // namespace fusiondet::nn

#endif  // FUSIONDET__NN__TENSOR_HPP_
