#pragma once

#include <stdexcept>
#include <string>

namespace fabir {

// Shapes that cannot be combined (matmul inner dims, concat axes, broadcasting).
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters or inconsistent configuration switches.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated preconditions of an API call (e.g. backward on a non-scalar).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input files (word vectors, SQuAD JSON, config files).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Well-formed input whose content is inconsistent (e.g. gold index out of range).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint does not match the model it is loaded into, or is truncated.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf in a loss or gradient.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fabir
