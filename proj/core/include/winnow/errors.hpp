#pragma once

#include <stdexcept>
#include <string>

namespace winnow {

/// Base class for every error winnow raises on purpose.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  /// Stable machine-readable tag ("shape", "config", ...).
  const std::string& kind() const { return kind_; }

private:
  std::string kind_;
};

/// Tensor extents do not line up (inner dims, channel counts, mask lengths).
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

/// A user-supplied setting is out of range or inconsistent.
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

/// An API was called in a state it does not support.
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

/// Checkpoint metadata does not match what the caller expects.
struct IncompatibilityError : Error {
  explicit IncompatibilityError(const std::string& what)
      : Error("incompatibility", what) {}
};

/// A serialized payload is malformed or truncated.
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

/// Filesystem-level failure.
struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

/// Training produced a non-finite loss.
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& what)
      : Error("divergence", what) {}
};

/// An internal consistency invariant broke (always a bug).
struct InvariantError : Error {
  explicit InvariantError(const std::string& what)
      : Error("invariant", what) {}
};

}  // namespace winnow
