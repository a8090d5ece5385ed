#ifndef ZIGPRUNE_ERROR_HPP
#define ZIGPRUNE_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace zigprune {

enum class ErrorCode {
  CycleDetected,
  DanglingEdge,
  UnknownKindString,
  DuplicateVertexId,
  InvalidGraph,
  ShapeMismatchAtSDJoint,
  FlattenWithoutKnownSpatialDims,
  ShapeMismatch,
  InconsistentStemWidths,
  KExceedsGroupCount,
  AllGroupsZeroInComponent,
  ShapeMismatchAfterPrune,
  UnsupportedOperator,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (and tests) can dispatch on the kind of failure.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

} // namespace zigprune

#endif
