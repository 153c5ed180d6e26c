#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fabir/errors.hpp"

namespace fabir {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until an adjoint reaches this node
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major array with shared ownership of its storage.
///
/// Copies alias the same node, which is how the tape refers back to inputs and
/// how parameters are updated in place by the optimizer. Operations never
/// mutate their inputs; they allocate a fresh node for the result.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " elements");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Writable view for parameter initialization and optimizer updates.
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t i, std::size_t j) const { return node_->data[i * node_->shape.at(1) + j]; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros when no adjoint has reached the tensor.
  std::vector<T> grad() const {
    return node_->grad.empty() ? std::vector<T>(numel(), T(0)) : node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

  // Same storage, no shared history: used to feed parameter values as constants.
  Tensor detached_copy() const { return Tensor(shape(), values(), false); }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of adjoint closures for one forward pass.
///
/// Operations append to the tape that is active on the current thread (see
/// TapeScope) whenever any of their inputs requires a gradient. `backward`
/// replays the closures in reverse order and clears the record.
template <typename T>
class Tape {
 public:
  using Adjoint = std::function<void()>;

  void record(Adjoint adjoint) { entries_.push_back(std::move(adjoint)); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (entries_.empty() || !loss.requires_grad()) {
      throw ContractError("backward called on a loss with no recorded history");
    }
    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

  static Tape*& current() {
    static thread_local Tape* active = nullptr;
    return active;
  }

 private:
  std::vector<Adjoint> entries_;
};

/// Installs a tape as the active recorder for this thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::current()) { Tape<T>::current() = &tape; }
  ~TapeScope() { Tape<T>::current() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording, e.g. for inference or finite-difference probes.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::current()) { Tape<T>::current() = nullptr; }
  ~NoGradScope() { Tape<T>::current() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Runs `loss`'s tape: convenience for the common single-tape case.
template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::current();
  if (tape == nullptr) throw ContractError("backward called without an active tape");
  tape->backward(loss);
}

}  // namespace fabir
