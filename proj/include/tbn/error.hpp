#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tbn {

enum class ErrorCode {
  LengthMismatch,
  NonFiniteValue,
  IndexOutOfBounds,
  InvalidShape,
  EmptyFilter,
  InvalidCode,
  TruncatedInput,
  SinkWriteError,
  BadMagic,
  UnsupportedVersion,
  CorruptLength,
  NonPositiveAlpha,
  NonZeroPadBits,
  ShapeMismatch,
  CacheMismatch,
  BadIdxMagic,
  IoError,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this exception type; callers
// switch on code() when they need to distinguish failure modes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& detail);

}  // namespace tbn
