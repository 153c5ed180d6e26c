#pragma once

#include "fabir/ops.hpp"
#include "fabir/rng.hpp"

namespace fabir {

// Training flag and dropout stream for one forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;

  template <typename T>
  Tensor<T> drop(const Tensor<T>& x, double keep_prob) const {
    if (!training || keep_prob == 1.0) return x;
    if (rng == nullptr) throw ContractError("training forward pass needs an rng for dropout");
    return dropout(x, keep_prob, true, *rng);
  }
};

}  // namespace fabir
