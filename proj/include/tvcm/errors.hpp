#pragma once

#include <stdexcept>
#include <string>

namespace tvcm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a loss or link.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented precondition (shape mismatch, bad config).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Numerical fitting failed (divergence, non-finite state).
class FitError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file, schema violation or unsupported format version.
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace tvcm
