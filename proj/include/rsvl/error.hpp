#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rsvl {

enum class ErrorKind {
  // markup
  UnbalancedTag,
  MalformedNumber,
  MalformedList,
  CoordOutOfRange,
  UnknownTag,
  EmptyList,
  MisplacedTaskTag,
  InvalidUtf8,
  // geometry
  InvalidExtent,
  InvertedBox,
  OutOfBounds,
  // builders
  EmptyAnnotation,
  EmptyLabel,
  EmptySteps,
  // decoder
  DimensionMismatch,
  DivergenceDetected,
  EmptyGroundTruth,
  // metrics
  LengthMismatch,
  EmptyEpisodeSet,
  // file formats
  Schema,
  // shared
  InvalidArgument,
  InvariantViolation,
};

inline std::string_view to_string(ErrorKind k) noexcept {
  switch (k) {
    case ErrorKind::UnbalancedTag: return "UnbalancedTag";
    case ErrorKind::MalformedNumber: return "MalformedNumber";
    case ErrorKind::MalformedList: return "MalformedList";
    case ErrorKind::CoordOutOfRange: return "CoordOutOfRange";
    case ErrorKind::UnknownTag: return "UnknownTag";
    case ErrorKind::EmptyList: return "EmptyList";
    case ErrorKind::MisplacedTaskTag: return "MisplacedTaskTag";
    case ErrorKind::InvalidUtf8: return "InvalidUtf8";
    case ErrorKind::InvalidExtent: return "InvalidExtent";
    case ErrorKind::InvertedBox: return "InvertedBox";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::EmptyAnnotation: return "EmptyAnnotation";
    case ErrorKind::EmptyLabel: return "EmptyLabel";
    case ErrorKind::EmptySteps: return "EmptySteps";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::EmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyEpisodeSet: return "EmptyEpisodeSet";
    case ErrorKind::Schema: return "Schema";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

// Every failure raised by the library. Markup errors carry the byte offset
// into the parsed string.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string detail, std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(format(kind, detail, offset)),
        kind_(kind),
        detail_(std::move(detail)),
        offset_(offset) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }
  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  static std::string format(ErrorKind kind, const std::string& detail,
                            std::optional<std::size_t> offset) {
    std::string s{to_string(kind)};
    if (!detail.empty()) s += ": " + detail;
    if (offset) s += " at byte " + std::to_string(*offset);
    return s;
  }

  ErrorKind kind_;
  std::string detail_;
  std::optional<std::size_t> offset_;
};

}  // namespace rsvl
