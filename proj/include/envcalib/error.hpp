#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace envcalib {

enum class ErrorCode {
  InvalidArgument,
  NonPositiveDepth,
  EmptyProjection,
  DegenerateCloud,
  ConstantDepth,
  NoMasks,
  ZeroBaselineDensity,
  DegenerateContour,
  FormatError,
  EmptyFile,
  NoMatches,
  DegenerateMask,
  DegenerateConfiguration,
  NonConvergence,
  InsufficientCorrespondences,
  NoVisibleGeometry,
  IoError,
  AllScenesFailed,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::EmptyProjection: return "EmptyProjection";
    case ErrorCode::DegenerateCloud: return "DegenerateCloud";
    case ErrorCode::ConstantDepth: return "ConstantDepth";
    case ErrorCode::NoMasks: return "NoMasks";
    case ErrorCode::ZeroBaselineDensity: return "ZeroBaselineDensity";
    case ErrorCode::DegenerateContour: return "DegenerateContour";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::NoMatches: return "NoMatches";
    case ErrorCode::DegenerateMask: return "DegenerateMask";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::NoVisibleGeometry: return "NoVisibleGeometry";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::AllScenesFailed: return "AllScenesFailed";
  }
  return "Unknown";
}

/// Library exception. Every throw site carries one of the codes above so
/// callers can isolate failures (e.g. skip a scene) without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace envcalib
