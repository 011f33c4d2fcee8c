#include "rvec/error.hpp"

namespace rvec {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptyTrace: return "EmptyTrace";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NoValidPairs: return "NoValidPairs";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::HookOutOfRange: return "HookOutOfRange";
    case ErrorKind::LayerOutOfRange: return "LayerOutOfRange";
    case ErrorKind::DivergenceError: return "DivergenceError";
    case ErrorKind::ZeroNorm: return "ZeroNorm";
    case ErrorKind::EmptySelection: return "EmptySelection";
    case ErrorKind::RankZero: return "RankZero";
    case ErrorKind::AllExcluded: return "AllExcluded";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::MissingAnswerToken: return "MissingAnswerToken";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace rvec
