#pragma once

#include <stdexcept>
#include <string>

namespace meps {

// Every error raised by the library derives from Error so callers can map
// failures onto exit codes without knowing every concrete type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf where a finite value is required, or divergence during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// An operation was called outside its preconditions.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Out-of-range label or vertex index.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid scalar parameter (k >= N, negative sigma, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent configuration document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Parameter vector / checkpoint layout does not match what the reader expects.
class ManifestError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace meps
