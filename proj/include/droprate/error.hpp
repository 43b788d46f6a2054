// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace droprate {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not agree; the message carries both shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Dropout rate outside [0, 1).
class InvalidRateError : public Error {
 public:
  using Error::Error;
};

/// Schedule evaluated past its horizon.
class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied data (corpus, prompt, token ids, losses).
class InputError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in the wrong order (backward before forward, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Bad magic, unknown version, or truncated checkpoint payload.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t iter, const std::string& what)
      : Error("diverged at iteration " + std::to_string(iter) + ": " + what), iter_(iter) {}

  std::int64_t iteration() const noexcept { return iter_; }

 private:
  std::int64_t iter_;
};

}  // namespace droprate
