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

#ifndef FUSIONDET__NN__PARAMS_HPP_
#define FUSIONDET__NN__PARAMS_HPP_

#include "fusiondet/nn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fusiondet::nn
{

struct Parameter
{
  std::string name;
  Tensor tensor;
};

/// Named learnable tensors in registration order. Each tensor is initialised
/// from its own generator stream keyed by (seed, name), so adding a parameter
/// never perturbs the initial values of the others.
class ParameterStore
{
public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
  Tensor add_glorot(const std::string & name, Shape shape, std::size_t fan_in, std::size_t fan_out);
  Tensor add_constant(const std::string & name, Shape shape, double value = 0.0);

  bool contains(const std::string & name) const { return index_.count(name) > 0; }
  Tensor get(const std::string & name) const;
  const std::vector<Parameter> & all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  void zero_grad();
  /// Overwrite a parameter's values in place (shape must match).
  void assign(const std::string & name, const std::vector<double> & values);

private:
  Tensor add(const std::string & name, Tensor t);

  std::uint64_t seed_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Adam moment update with a fixed learning rate.
class Adam
{
public:
  struct Options
  {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Options options) : options_(options) {}

  /// Parameters without a gradient are treated as having a zero gradient.
  void step(ParameterStore & params);

  std::int64_t steps_taken() const { return t_; }
  const Options & options() const { return options_; }

  struct Record;
  std::vector<Record> state_records() const;
  void load_state(const std::vector<Record> & records);

private:
  Options options_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

/// One named array in a checkpoint file.
struct Adam::Record
{
  std::string name;
  Shape shape;
  std::vector<double> data;
};
using CheckpointRecord = Adam::Record;

// Checkpoint byte layout (all integers and floats little-endian):
//   magic   4 bytes  "FDCK"
//   version u32      1
//   count   u32      number of records
//   record  * count:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64 * rank
//     data     f64 * product(dims)
void write_checkpoint(const std::filesystem::path & path, const std::vector<CheckpointRecord> & records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path & path);

std::vector<CheckpointRecord> parameter_records(const ParameterStore & params);
/// Loads matching records into `params`. Throws ValidationError listing every
/// parameter whose record is missing or has a different shape.
void load_parameters(ParameterStore & params, const std::vector<CheckpointRecord> & records);

}  // namespace fusiondet::nn

#endif  // FUSIONDET__NN__PARAMS_HPP_
