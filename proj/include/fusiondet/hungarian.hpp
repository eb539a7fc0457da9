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

#ifndef FUSIONDET__HUNGARIAN_HPP_
#define FUSIONDET__HUNGARIAN_HPP_

#include <cstddef>
#include <span>
#include <vector>

namespace fusiondet::head
{

/// Minimum-cost assignment of every row of a row-major n x m cost matrix to a
/// distinct column (n <= m), via shortest augmenting paths with dual potentials,
/// O(n^2 m). Returns the column chosen for each row.
/// Throws ValidationError for n > m or non-finite costs.
std::vector<std::size_t> hungarian(std::span<const double> cost, std::size_t n, std::size_t m);

}  // namespace fusiondet::head

#endif  // FUSIONDET__HUNGARIAN_HPP_
