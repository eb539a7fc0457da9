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

#include "fusiondet/nn/params.hpp"

#include "fusiondet/errors.hpp"
#include "fusiondet/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fusiondet::nn
{

static_assert(
  std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace
{
constexpr char kMagic[4] = {'F', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
const std::string kStepRecord = "adam/step";
const std::string kFirstMoment = "adam/m/";
const std::string kSecondMoment = "adam/v/";

template <typename T>
void put(std::ofstream & out, T value)
{
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T take(std::ifstream & in, const std::filesystem::path & path)
{
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) {
    throw ValidationError("truncated checkpoint: " + path.string());
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}
}  // namespace

Tensor ParameterStore::add(const std::string & name, Tensor t)
{
  if (index_.count(name)) {
    throw ValidationError("duplicate parameter name: " + name);
  }
  index_[name] = params_.size();
  params_.push_back({name, t});
  return t;
}

Tensor ParameterStore::add_glorot(
  const std::string & name, Shape shape, std::size_t fan_in, std::size_t fan_out)
{
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng = Rng::named(seed_, name);
  std::vector<double> values(numel(shape));
  for (auto & v : values) {
    v = rng.uniform(-a, a);
  }
  return add(name, Tensor(std::move(shape), std::move(values), true));
}

Tensor ParameterStore::add_constant(const std::string & name, Shape shape, double value)
{
  return add(name, Tensor::full(shape, value, true));
}

Tensor ParameterStore::get(const std::string & name) const
{
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ValidationError("unknown parameter: " + name);
  }
  return params_[it->second].tensor;
}

std::size_t ParameterStore::total_elements() const
{
  std::size_t n = 0;
  for (const auto & p : params_) {
    n += p.tensor.numel();
  }
  return n;
}

void ParameterStore::zero_grad()
{
  for (auto & p : params_) {
    p.tensor.zero_grad();
  }
}

void ParameterStore::assign(const std::string & name, const std::vector<double> & values)
{
  Tensor t = get(name);
  if (values.size() != t.numel()) {
    throw ValidationError("assign: size mismatch for parameter " + name);
  }
  std::copy(values.begin(), values.end(), t.mutable_data().begin());
}

void Adam::step(ParameterStore & params)
{
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (const auto & p : params.all()) {
    Tensor t = p.tensor;
    auto & m = m_[p.name];
    auto & v = v_[p.name];
    if (m.empty()) {
      m.assign(t.numel(), 0.0);
      v.assign(t.numel(), 0.0);
    }
    auto w = t.mutable_data();
    const bool has = t.has_grad();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

std::vector<CheckpointRecord> Adam::state_records() const
{
  std::vector<CheckpointRecord> out;
  out.push_back({kStepRecord, {1}, {static_cast<double>(t_)}});
  for (const auto & [name, m] : m_) {
    out.push_back({kFirstMoment + name, {m.size()}, m});
  }
  for (const auto & [name, v] : v_) {
    out.push_back({kSecondMoment + name, {v.size()}, v});
  }
  return out;
}

void Adam::load_state(const std::vector<CheckpointRecord> & records)
{
  t_ = 0;
  m_.clear();
  v_.clear();
  for (const auto & r : records) {
    if (r.name == kStepRecord) {
      t_ = static_cast<std::int64_t>(r.data.at(0));
    } else if (r.name.rfind(kFirstMoment, 0) == 0) {
      m_[r.name.substr(kFirstMoment.size())] = r.data;
    } else if (r.name.rfind(kSecondMoment, 0) == 0) {
      v_[r.name.substr(kSecondMoment.size())] = r.data;
    }
  }
}

void write_checkpoint(
  const std::filesystem::path & path, const std::vector<CheckpointRecord> & records)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ValidationError("cannot open checkpoint for writing: " + path.string());
  }
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto & r : records) {
    if (numel(r.shape) != r.data.size()) {
      throw ValidationError("checkpoint record '" + r.name + "' has inconsistent shape");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) {
      put<std::uint64_t>(out, d);
    }
    for (double v : r.data) {
      put<double>(out, v);
    }
  }
  if (!out) {
    throw ValidationError("failed writing checkpoint: " + path.string());
  }
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open checkpoint: " + path.string());
  }
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ValidationError("not a checkpoint file (bad magic): " + path.string());
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = take<std::uint32_t>(in, path);
  std::vector<CheckpointRecord> records(count);
  for (auto & r : records) {
    const auto len = take<std::uint32_t>(in, path);
    r.name.resize(len);
    if (!in.read(r.name.data(), len)) {
      throw ValidationError("truncated checkpoint: " + path.string());
    }
    const auto rank = take<std::uint32_t>(in, path);
    r.shape.resize(rank);
    for (auto & d : r.shape) {
      d = take<std::uint64_t>(in, path);
    }
    r.data.resize(numel(r.shape));
    for (auto & v : r.data) {
      v = take<double>(in, path);
    }
  }
  return records;
}

std::vector<CheckpointRecord> parameter_records(const ParameterStore & params)
{
  std::vector<CheckpointRecord> out;
  for (const auto & p : params.all()) {
    out.push_back(
      {p.name, p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

void load_parameters(ParameterStore & params, const std::vector<CheckpointRecord> & records)
{
  std::map<std::string, const CheckpointRecord *> by_name;
  for (const auto & r : records) {
    by_name[r.name] = &r;
  }
  std::string problems;
  for (const auto & p : params.all()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      problems += " " + p.name + " (missing)";
    } else if (it->second->shape != p.tensor.shape()) {
      problems += " " + p.name + " (checkpoint " + to_string(it->second->shape) + ", model " +
                  to_string(p.tensor.shape()) + ")";
    }
  }
  if (!problems.empty()) {
    throw ValidationError("checkpoint does not match model parameters:" + problems);
  }
  for (const auto & p : params.all()) {
    params.assign(p.name, by_name[p.name]->data);
  }
}

}  // namespace fusiondet::nn
