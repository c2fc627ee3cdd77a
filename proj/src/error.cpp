#include "qualsynth/error.hpp"

namespace qualsynth {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InconsistentCovariate: return "InconsistentCovariate";
    case ErrorCode::DuplicateRow: return "DuplicateRow";
    case ErrorCode::NonContiguousYears: return "NonContiguousYears";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NoPrePeriod: return "NoPrePeriod";
    case ErrorCode::NoPostPeriod: return "NoPostPeriod";
    case ErrorCode::EmptyDonorPool: return "EmptyDonorPool";
    case ErrorCode::NoTreatedUnits: return "NoTreatedUnits";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::YearMismatch: return "YearMismatch";
    case ErrorCode::DegenerateTarget: return "DegenerateTarget";
    case ErrorCode::NonFiniteInit: return "NonFiniteInit";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NegativePhi: return "NegativePhi";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnknownName: return "UnknownName";
    case ErrorCode::TooFewPlacebos: return "TooFewPlacebos";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::TooFew: return "TooFew";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace qualsynth
