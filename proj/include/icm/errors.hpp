#pragma once

#include <stdexcept>
#include <string>

namespace icm {

// Error kinds used across the pipeline. The CLI maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised when a DoRA direction column collapses to zero during an explicit merge.
class SingularityError : public Error {
 public:
  using Error::Error;
};

class EmptyError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class IncompatibleModelError : public Error {
 public:
  using Error::Error;
};

class CorruptStreamError : public Error {
 public:
  using Error::Error;
};

class MemoryBudgetError : public Error {
 public:
  using Error::Error;
};

}  // namespace icm
