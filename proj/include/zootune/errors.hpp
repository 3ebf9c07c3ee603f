#pragma once

#include <stdexcept>
#include <string>

namespace zootune {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension disagreements.
struct ShapeError : Error {
  using Error::Error;
};

// Convolution geometry that yields an empty output plane.
struct GeometryError : Error {
  using Error::Error;
};

// Out-of-range labels, degenerate batches, non-finite external input.
struct ValueError : Error {
  using Error::Error;
};

// Contract violations on stateful objects (reused tape, uninitialized TE).
struct StateError : Error {
  using Error::Error;
};

// Malformed serialized data (bad magic, bad version, bad structure).
struct FormatError : Error {
  using Error::Error;
};

// Serialized data ends before the declared payload.
struct TruncationError : FormatError {
  using FormatError::FormatError;
};

// Internally inconsistent serialized data (duplicate tensor names).
struct IntegrityError : FormatError {
  using FormatError::FormatError;
};

// Invalid run/backbone/task configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Checkpoints that cannot form a zoo together (name/shape/config mismatch).
struct ZooCompatError : Error {
  using Error::Error;
};

// Non-finite loss or other unrecoverable optimization failure.
struct TrainingError : Error {
  using Error::Error;
};

// Filesystem failures, reported with the offending path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace zootune
