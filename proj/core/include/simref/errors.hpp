#pragma once

#include <stdexcept>
#include <string>

namespace simref {

/// Shape or argument contract violation (bad extents, mismatched operands).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File format / filesystem failure (TNS1, checkpoints, datasets).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (bad hyperparameters, config-change on resume).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure: non-finite loss, backward misuse, oracle failure.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace simref
