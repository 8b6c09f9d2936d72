#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gradepipe {

// Every failure the library reports is an Error carrying one of these codes.
enum class Errc {
  // corpus
  MissingFile,
  MalformedManifest,
  DanglingReference,
  MalformedRecord,
  DuplicateRecord,
  // rubric / scores
  ScoreOutOfRange,
  InvalidRubric,
  // llm gateway
  TransportError,
  ReplayMiss,
  BudgetExceeded,
  InvalidPolicy,
  // response parsing
  NoStructuredBlock,
  MissingCategory,
  UnknownCategory,
  DuplicateCategory,
  ScoreOutOfBounds,
  UnparseableNumber,
  NegativeDeduction,
  InvalidSeverity,
  MissingCorrectedCode,
  GradingFailed,
  // pipeline
  RunnerError,
  ScaleMismatch,
  InvalidConfig,
  // evaluation
  EmptyIntersection,
  EmptySeries,
  MissingBand,
  // synthgen
  InsufficientMutationSites,
  GenerationFailed,
  PreconditionViolation,
  Io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

// Parser failures are the only errors the repair loop retries on.
bool is_parse_error(Errc code) noexcept;

}  // namespace gradepipe
