#pragma once

#include <stdexcept>
#include <string>

namespace stagematch {

// Coarse failure categories so callers (and the CLI exit-code mapping) can
// react without parsing message text.
enum class ErrorKind {
  invalid_argument,
  dimension_mismatch,
  normalization,
  format,
  io,
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::normalization: return "normalization";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace stagematch
