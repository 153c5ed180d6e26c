#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fabir/errors.hpp"
#include "fabir/rng.hpp"
#include "fabir/tensor.hpp"

namespace fabir {

template <typename T>
struct Parameter {
  std::string name;  // dotted path, unique within a model
  Tensor<T> tensor;
};

/// Registry of trainable tensors in deterministic (registration) order.
///
/// Non-trainable buffers (e.g. the frozen word-vector table) live here too so
/// that checkpoints capture them, but they are excluded from `trainable()`.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> tensor, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(trainable);
    index_[name] = entries_.size();
    entries_.push_back({name, tensor});
    trainable_flags_.push_back(trainable);
    return tensor;
  }

  std::size_t size() const { return entries_.size(); }
  const Parameter<T>& operator[](std::size_t i) const { return entries_[i]; }
  bool is_trainable(std::size_t i) const { return trainable_flags_[i]; }

  const Parameter<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter<T>> trainable() const {
    std::vector<Parameter<T>> out;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (trainable_flags_[i]) out.push_back(entries_[i]);
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (trainable_flags_[i]) n += entries_[i].tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : entries_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> entries_;
  std::vector<bool> trainable_flags_;
  std::map<std::string, std::size_t> index_;
};

// Uniform Xavier/Glorot initialization.
template <typename T>
Tensor<T> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-limit, limit));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace fabir
