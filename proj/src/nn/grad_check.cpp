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

#include "fusiondet/nn/grad_check.hpp"

#include "fusiondet/errors.hpp"

#include <algorithm>
#include <cmath>

namespace fusiondet::nn
{

namespace
{
double evaluate(const std::function<Tensor()> & f)
{
  const double v = f().item();
  if (!std::isfinite(v)) {
    throw NumericalError("grad_check: objective is not finite");
  }
  return v;
}
}  // namespace

GradCheckReport grad_check_report(
  const std::function<Tensor()> & f, const std::vector<Tensor> & wrt, double h)
{
  for (auto t : wrt) {
    if (!t.requires_grad()) {
      throw ValidationError("grad_check: every checked tensor must require a gradient");
    }
    t.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto & t : wrt) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }
  GradCheckReport report;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor t = wrt[ti];
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate(f);
      values[i] = saved - h;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[ti][i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.entries_checked;
      if (err > report.max_rel_error || report.entries_checked == 1) {
        report.max_rel_error = err;
        report.worst_tensor = ti;
        report.worst_entry = i;
        report.analytic = analytic[ti][i];
        report.numeric = numeric;
      }
    }
    t.zero_grad();
  }
  return report;
}

}  // namespace fusiondet::nn
