#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradepipe/corpus.hpp"
#include "gradepipe/graders.hpp"
#include "gradepipe/llm_gateway.hpp"

namespace gradepipe {

struct ErrorProfile {
  QualityBand band = QualityBand::Good;
  int syntax_errors = 0;
  int logic_errors = 0;
  // Whitespace-only edits; they never change behaviour.
  int style_tweaks = 0;
  std::string notes;
};

// Good {0,0,+1 style}, Moderate {1 syntax}, Poor {1 syntax, 2 logic}.
ErrorProfile default_profile(QualityBand band);

// Good carries no syntax or logic errors, Poor at least one logic error, counts non-negative.
// Throws PreconditionViolation.
void validate(const ErrorProfile& profile);

enum class MutationKind { DeleteSemicolon, FlipComparison, OffByOneLoopBound, RemoveReturn, Reindent };
std::string_view to_string(MutationKind kind) noexcept;

// One line-level edit. `line` indexes the text as it was when the edit was applied; an empty
// `after` means the line was deleted.
struct Mutation {
  MutationKind kind = MutationKind::DeleteSemicolon;
  std::size_t line = 0;
  std::string before;
  std::optional<std::string> after;

  bool operator==(const Mutation&) const = default;
};

// Notes are compact JSON objects so that they can be replayed backwards.
std::string to_note(const Mutation& mutation);
Mutation mutation_from_note(std::string_view note);

// Applies seeded mutations from the fixed catalog: deleted semicolons for syntax errors; flipped
// comparisons, off-by-one loop bounds or removed returns for logic errors; re-indented lines for
// style. Every mutation hits a distinct original line. The result has empty id/problem_id and
// records each edit in error_notes. Throws InsufficientMutationSites.
Submission inject_errors(std::string_view reference_solution, const ErrorProfile& profile, std::uint64_t seed);

// Undoes the notes (newest first) and returns the original text. Throws PreconditionViolation
// when the text does not match the notes.
std::string revert_mutations(std::string_view mutated, const std::vector<std::string>& notes);

PromptRequest build_generation_prompt(const Problem& problem, const ErrorProfile& profile,
                                      const TemplateSet& templates = builtin_templates());

enum class GenerationMode { Live, Offline };

struct CellFailure {
  std::string problem_id;
  QualityBand band = QualityBand::Unknown;
  int index = 0;
  std::string error;
};

struct GenerationBatch {
  Corpus corpus;
  std::vector<CellFailure> failures;
};

struct GenerationOptions {
  GenerationMode mode = GenerationMode::Offline;
  std::uint64_t seed = 0;
  int count_per_cell = 1;
  CompletionClient* client = nullptr;  // Live only
  std::size_t workers = 4;
  const TemplateSet* templates = nullptr;
};

// Seed for one (problem, band, index) cell, derived from the master seed.
std::uint64_t cell_seed(std::uint64_t master, std::string_view problem_id, QualityBand band, int index);

// count_per_cell submissions for every (problem, band). Failing cells are reported, not fatal.
// Submission ids are "<problem>-<band>-<nn>".
GenerationBatch generate_batch(const std::vector<Problem>& problems, const std::vector<QualityBand>& bands,
                               const GenerationOptions& options);

}  // namespace gradepipe
