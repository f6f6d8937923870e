// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace snn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model, search, or cluster configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not compose. The message names the offending dim.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong state (backward before forward, eval
/// before statistics exist, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed wire frame. Carries the byte offset where decoding failed.
class FramingError : public Error {
 public:
  FramingError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Checkpoint or file content failed validation.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Network, peer, or timeout failure in the distributed runtime.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace snn
