#pragma once

#include <stdexcept>
#include <string>

namespace l2i {

enum class Errc {
  NonPositiveExtent,
  NonFiniteInput,
  DegenerateBox,
  OutOfImage,
  InvalidGrid,
  InvalidLayout,
  CorpusTooSmall,
  WrongExampleCount,
  ParseError,
  WidthNotGreaterThanHeight,
  AngleOutOfRange,
  BoxOutOfBounds,
  EmptyResponse,
  WidthMismatch,
  ShapeMismatch,
  EmptyInstanceList,
  StepOutOfRange,
  MaskCountMismatch,
  ResolutionMismatch,
  IncompatibleCheckpoint,
  DivergedLoss,
  PlacementFailure,
  IoError,
  SchemaVersionMismatch,
  MismatchedLengths,
  EmptyInput,
  DimensionMismatch,
  NonPSD,
  UnknownClass,
  InvalidConfig,
};

constexpr const char* to_string(Errc code) {
  switch (code) {
    case Errc::NonPositiveExtent: return "NonPositiveExtent";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::DegenerateBox: return "DegenerateBox";
    case Errc::OutOfImage: return "OutOfImage";
    case Errc::InvalidGrid: return "InvalidGrid";
    case Errc::InvalidLayout: return "InvalidLayout";
    case Errc::CorpusTooSmall: return "CorpusTooSmall";
    case Errc::WrongExampleCount: return "WrongExampleCount";
    case Errc::ParseError: return "ParseError";
    case Errc::WidthNotGreaterThanHeight: return "WidthNotGreaterThanHeight";
    case Errc::AngleOutOfRange: return "AngleOutOfRange";
    case Errc::BoxOutOfBounds: return "BoxOutOfBounds";
    case Errc::EmptyResponse: return "EmptyResponse";
    case Errc::WidthMismatch: return "WidthMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyInstanceList: return "EmptyInstanceList";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::MaskCountMismatch: return "MaskCountMismatch";
    case Errc::ResolutionMismatch: return "ResolutionMismatch";
    case Errc::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::PlacementFailure: return "PlacementFailure";
    case Errc::IoError: return "IoError";
    case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case Errc::MismatchedLengths: return "MismatchedLengths";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NonPSD: return "NonPSD";
    case Errc::UnknownClass: return "UnknownClass";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Domain error carrying a machine-checkable code. The message is prefixed
/// with the code name so CLI output stays greppable.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  Errc code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace l2i
