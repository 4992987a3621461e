#pragma once

#include <stdexcept>
#include <string>

namespace poserac {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files (CSV, checkpoint, config).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// All keypoints of a pose coincide after hip-centering.
class DegeneratePoseError : public Error {
 public:
  using Error::Error;
};

// Operand shapes are incompatible for a tensor operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or failed numerical checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace poserac
