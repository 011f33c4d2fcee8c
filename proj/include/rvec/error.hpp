#pragma once

#include <stdexcept>
#include <string>

namespace rvec {

enum class ErrorKind {
  EmptyTrace,
  NonFinite,
  DimensionMismatch,
  NoValidPairs,
  FormatError,
  HookOutOfRange,
  LayerOutOfRange,
  DivergenceError,
  ZeroNorm,
  EmptySelection,
  RankZero,
  AllExcluded,
  EmptyInput,
  ZeroVector,
  LengthMismatch,
  MissingAnswerToken,
  ConfigError,
  IoError,
};

const char* to_string(ErrorKind kind);

/// Every module reports failures through this exception; `kind()` is the
/// machine-readable category the CLI emits in its error JSON.
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

}  // namespace rvec
