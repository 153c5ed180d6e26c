#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fabir/errors.hpp"
#include "fabir/tensor.hpp"

namespace fabir {

// Frequency of the k-th sin/cos pair (k from 0): 10000^(-2k/d), computed in double.
inline double encoding_frequency(std::size_t k, std::size_t d) {
  return std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d));
}

/// Trigonometric position encoding: row i holds (sin(i f_k), cos(i f_k)) pairs
/// for k = 0 .. d/2-1, positions counted from 0.
template <typename T>
Tensor<T> encode_positions(std::size_t len, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw ConfigError("position encoding width must be even and positive, got " + std::to_string(d));
  if (len == 0) throw ConfigError("position encoding length must be positive");
  std::vector<T> data(len * d);
  for (std::size_t k = 0; k < d / 2; ++k) {
    const double f = encoding_frequency(k, d);
    for (std::size_t i = 0; i < len; ++i) {
      const double angle = static_cast<double>(i) * f;
      data[i * d + 2 * k] = static_cast<T>(std::sin(angle));
      data[i * d + 2 * k + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>({len, d}, std::move(data));
}

}  // namespace fabir
