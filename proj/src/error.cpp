#include "tbn/error.hpp"

namespace tbn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IndexOutOfBounds: return "IndexOutOfBounds";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::EmptyFilter: return "EmptyFilter";
    case ErrorCode::InvalidCode: return "InvalidCode";
    case ErrorCode::TruncatedInput: return "TruncatedInput";
    case ErrorCode::SinkWriteError: return "SinkWriteError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::CorruptLength: return "CorruptLength";
    case ErrorCode::NonPositiveAlpha: return "NonPositiveAlpha";
    case ErrorCode::NonZeroPadBits: return "NonZeroPadBits";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CacheMismatch: return "CacheMismatch";
    case ErrorCode::BadIdxMagic: return "BadIdxMagic";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what),
      code_(code) {}

void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

}  // namespace tbn
