#pragma once

#include <stdexcept>
#include <string>

namespace treadline {

// Incompatible tensor extents (gemm inner dims, layer input shape, ...).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid scalar argument: unsupported stride/padding, bad config value.
struct ParamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Operation called out of order (backward before forward, etc).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Missing or malformed files, datasets, checkpoints.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values surfaced in checked mode.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a NaN loss.
struct DivergenceError : NumericError {
  using NumericError::NumericError;
};

}  // namespace treadline
