#pragma once

#include <stdexcept>
#include <string>

namespace rcps {

/// Invalid argument or violated precondition (exit code 1 at the CLI).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Input is well-formed but mathematically degenerate (constant volume, empty foreground).
struct DegenerateInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor or grid extents that the operation cannot accept.
struct ShapeError : ArgumentError {
    using ArgumentError::ArgumentError;
};

/// Configuration file or flag validation failure.
struct ConfigError : ArgumentError {
    using ArgumentError::ArgumentError;
};

/// Checkpoint does not match the requested network configuration.
struct CompatibilityError : ArgumentError {
    using ArgumentError::ArgumentError;
};

/// Filesystem failure (exit code 2 at the CLI).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File exists but its contents cannot be decoded.
struct FormatError : IoError {
    using IoError::IoError;
};

} // namespace rcps
