#pragma once

#include <stdexcept>
#include <string>

namespace psnrlab {

// Bad user input: malformed files, out-of-range ids, invalid flags.
struct MalformedInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration values (probabilities, widths, enum choices).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape incompatibility; message names the op and the shapes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or failed linear solves.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: consumed tape, missing history, non-scalar loss.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace psnrlab
