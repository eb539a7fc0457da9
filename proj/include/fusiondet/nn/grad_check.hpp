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

#ifndef FUSIONDET__NN__GRAD_CHECK_HPP_
#define FUSIONDET__NN__GRAD_CHECK_HPP_

#include "fusiondet/nn/tensor.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace fusiondet::nn
{

struct GradCheckReport
{
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central differences
/// (step h) for every entry of every tensor in `wrt`. The error of one entry is
/// |analytic - numeric| / max(1, |numeric|). `wrt` must be leaf tensors with
/// requires_grad; `f` must rebuild its graph from them on every call.
GradCheckReport grad_check_report(
  const std::function<Tensor()> & f, const std::vector<Tensor> & wrt, double h = 1e-5);

inline double grad_check(
  const std::function<Tensor()> & f, const std::vector<Tensor> & wrt, double h = 1e-5)
{
  return grad_check_report(f, wrt, h).max_rel_error;
}

}  // namespace fusiondet::nn

#endif  // FUSIONDET__NN__GRAD_CHECK_HPP_
