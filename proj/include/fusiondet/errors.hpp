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

#ifndef FUSIONDET__ERRORS_HPP_
#define FUSIONDET__ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace fusiondet
{

// Bad input, shape mismatch, malformed config or file. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced somewhere in the graph. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

}  // namespace fusiondet

#endif  // FUSIONDET__ERRORS_HPP_
