#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kws {

/// Base class of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or sequence dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A model or layer configuration violates its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data is semantically invalid (labels out of range, empty curves, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in a state that does not allow it.
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file; carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(what),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }
  /// Message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t offset_;
};

}  // namespace kws
