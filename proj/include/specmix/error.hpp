#pragma once

#include <stdexcept>
#include <string>

namespace specmix {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (maps to CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, inconsistent or unreadable data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape contract violated by a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a solver could not produce a usable result (exit code 4).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised when a second-order graph is requested through a primitive whose
/// backward rule is not itself built from differentiable primitives.
class NotTwiceDifferentiable : public Error {
 public:
  using Error::Error;
};

}  // namespace specmix
