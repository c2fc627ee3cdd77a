#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qualsynth {

enum class ErrorCode {
  MissingCell,
  NonFinite,
  InconsistentCovariate,
  DuplicateRow,
  NonContiguousYears,
  ParseError,
  NoPrePeriod,
  NoPostPeriod,
  EmptyDonorPool,
  NoTreatedUnits,
  IoFailure,
  RankDeficient,
  YearMismatch,
  DegenerateTarget,
  NonFiniteInit,
  NonPositiveScale,
  InvalidConfig,
  TooShort,
  NegativePhi,
  NumericalFailure,
  EmptyInput,
  UnknownName,
  TooFewPlacebos,
  SingularDesign,
  TooFew,
  DegenerateVariance,
  MissingArtifact,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code; the
/// message names the offending cell, field or stage.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace qualsynth
