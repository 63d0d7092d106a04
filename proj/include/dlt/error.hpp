#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dlt {

enum class ErrorCode {
  GeometryMismatch,
  ExtentMismatch,
  ShapeMismatch,
  LengthMismatch,
  NonFiniteScore,
  EmptyDataset,
  DivergedToNonFinite,
  AllZeroPosterior,
  InvalidLayerOrState,
  InstanceTooLarge,
  BadMagic,
  TruncatedFile,
  UnsupportedLevels,
  ImageTooSmall,
  MalformedHeader,
  BadConfig,
  BadCheckpoint,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::GeometryMismatch: return "GeometryMismatch";
    case ErrorCode::ExtentMismatch: return "ExtentMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteScore: return "NonFiniteScore";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DivergedToNonFinite: return "DivergedToNonFinite";
    case ErrorCode::AllZeroPosterior: return "AllZeroPosterior";
    case ErrorCode::InvalidLayerOrState: return "InvalidLayerOrState";
    case ErrorCode::InstanceTooLarge: return "InstanceTooLarge";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::UnsupportedLevels: return "UnsupportedLevels";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (notably the CLI) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dlt
