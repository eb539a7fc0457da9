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

#include "fusiondet/nn/tensor.hpp"

#include "fusiondet/errors.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace fusiondet::nn
{

std::size_t numel(const Shape & shape)
{
  std::size_t n = 1;
  for (auto d : shape) {
    n *= d;
  }
  return n;
}

std::string to_string(const Shape & shape)
{
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) {
      s += ",";
    }
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace
{

void check_finite(const char * op, const std::vector<double> & data)
{
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by '") + op + "'");
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
{
  if (nn::numel(shape) != data.size()) {
    throw ValidationError(
      "tensor data size " + std::to_string(data.size()) + " does not match shape " +
      nn::to_string(shape));
  }
  check_finite("leaf", data);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node_ = std::move(node);
}

Tensor Tensor::zeros(const Shape & shape, bool requires_grad)
{
  return Tensor(shape, std::vector<double>(nn::numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape & shape, double value, bool requires_grad)
{
  return Tensor(shape, std::vector<double>(nn::numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::make_result(
  const char * op, Shape shape, std::vector<double> data, std::vector<Tensor> parents,
  BackwardFn backward)
{
  if (nn::numel(shape) != data.size()) {
    throw ValidationError(std::string("op '") + op + "' produced a buffer of the wrong size");
  }
  check_finite(op, data);
  auto node = std::make_shared<detail::Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  for (const auto & p : parents) {
    if (p.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const Shape & Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const
{
  if (axis >= node_->shape.size()) {
    throw ValidationError("axis out of range for shape " + nn::to_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

const char * Tensor::op() const { return node_->op; }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const
{
  if (node_->data.size() != 1) {
    throw ValidationError("item() on a tensor of shape " + nn::to_string(node_->shape));
  }
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const
{
  if (index.size() != node_->shape.size()) {
    throw ValidationError("index rank mismatch for shape " + nn::to_string(node_->shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) {
      throw ValidationError("index out of range for shape " + nn::to_string(node_->shape));
    }
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const
{
  if (node_->data.size() != 1) {
    throw ValidationError("backward() needs a single-element tensor");
  }
  if (!node_->requires_grad) {
    return;
  }
  // Iterative post-order DFS; reversed it is a valid reverse topological order.
  std::vector<const detail::Node *> order;
  std::unordered_set<const detail::Node *> seen;
  std::vector<std::pair<const detail::Node *, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto & [n, next] = stack.back();
    if (next < n->parents.size()) {
      const detail::Node * p = n->parents[next++].node();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const detail::Node * n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
    }
  }
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

double * grad_sink(const Tensor & parent)
{
  if (!parent.requires_grad()) {
    return nullptr;
  }
  return parent.node()->grad_buffer().data();
}

}  // namespace fusiondet::nn
