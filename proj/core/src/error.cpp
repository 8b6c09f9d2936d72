#include "gradepipe/error.hpp"

namespace gradepipe {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::MalformedManifest: return "MalformedManifest";
    case Errc::DanglingReference: return "DanglingReference";
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::DuplicateRecord: return "DuplicateRecord";
    case Errc::ScoreOutOfRange: return "ScoreOutOfRange";
    case Errc::InvalidRubric: return "InvalidRubric";
    case Errc::TransportError: return "TransportError";
    case Errc::ReplayMiss: return "ReplayMiss";
    case Errc::BudgetExceeded: return "BudgetExceeded";
    case Errc::InvalidPolicy: return "InvalidPolicy";
    case Errc::NoStructuredBlock: return "NoStructuredBlock";
    case Errc::MissingCategory: return "MissingCategory";
    case Errc::UnknownCategory: return "UnknownCategory";
    case Errc::DuplicateCategory: return "DuplicateCategory";
    case Errc::ScoreOutOfBounds: return "ScoreOutOfBounds";
    case Errc::UnparseableNumber: return "UnparseableNumber";
    case Errc::NegativeDeduction: return "NegativeDeduction";
    case Errc::InvalidSeverity: return "InvalidSeverity";
    case Errc::MissingCorrectedCode: return "MissingCorrectedCode";
    case Errc::GradingFailed: return "GradingFailed";
    case Errc::RunnerError: return "RunnerError";
    case Errc::ScaleMismatch: return "ScaleMismatch";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::EmptyIntersection: return "EmptyIntersection";
    case Errc::EmptySeries: return "EmptySeries";
    case Errc::MissingBand: return "MissingBand";
    case Errc::InsufficientMutationSites: return "InsufficientMutationSites";
    case Errc::GenerationFailed: return "GenerationFailed";
    case Errc::PreconditionViolation: return "PreconditionViolation";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

bool is_parse_error(Errc code) noexcept {
  switch (code) {
    case Errc::NoStructuredBlock:
    case Errc::MissingCategory:
    case Errc::UnknownCategory:
    case Errc::DuplicateCategory:
    case Errc::ScoreOutOfBounds:
    case Errc::UnparseableNumber:
    case Errc::NegativeDeduction:
    case Errc::InvalidSeverity:
    case Errc::MissingCorrectedCode:
      return true;
    default:
      return false;
  }
}

}  // namespace gradepipe
