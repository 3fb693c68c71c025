#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsovt {

enum class ErrorKind {
  Io,
  Format,
  Length,
  Shape,
  Validation,
  Range,
  Bounds,
  Capacity,
  Placement,
  Positivity,
  Divergence,
  Contract,
  Conditioning,
  Compatibility,
  Argument,
  Degenerate,
  Usage,
};

std::string_view kind_name(ErrorKind kind) noexcept;

/// Single exception type for the library; `kind()` says which contract was
/// broken so callers (and the CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dsovt
